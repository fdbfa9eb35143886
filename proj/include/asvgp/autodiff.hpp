#pragma once

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace asvgp {
namespace ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::runtime_error {
public:
  explicit ShapeError(const std::string &what) : std::runtime_error(what) {}
};

class CholeskyError : public std::runtime_error {
public:
  CholeskyError(const std::string &what, double min_eig)
      : std::runtime_error(what), min_eigenvalue(min_eig) {}
  double min_eigenvalue;
};

class Tape;

/// Lightweight handle into a Tape node. Cheap to copy; valid for the
/// lifetime of the owning Tape.
class Var {
public:
  Var() = default;
  const Matrix &value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape *tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *tape, int id) : tape_(tape), id_(id) {}
  Tape *tape_ = nullptr;
  int id_ = -1;
};

/// Gradients keyed by leaf parameter name; each entry has the leaf's shape.
using GradientMap = std::map<std::string, Matrix>;

/// Recorded expression graph with eagerly computed forward values.
/// Construction order is a topological order, so backward() is a single
/// reverse sweep. A tape is meant to be built, differentiated, and
/// discarded within one optimization step.
class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var parameter(const std::string &name, const Matrix &value);
  Var constant(const Matrix &value);
  Var constant(double s);

  /// Reverse sweep from a scalar output. Pure: repeated calls with the
  /// same tape produce bit-identical results.
  GradientMap backward(const Var &output) const;

  const Matrix &value(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Primitives. Shapes are validated on construction; forward values are
  // computed immediately.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var matmul(Var a, Var b); // 1x1 operands broadcast as scalar scaling
  Var cmul(Var a, Var b);   // elementwise; 1x1 operands broadcast
  Var transpose(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var logistic(Var a);
  Var square(Var a);
  Var sqrt(Var a);
  Var clamp(Var a, double lo, double hi); // gradient passes through interior
  Var sum(Var a);                         // -> 1x1
  Var trace(Var a);                       // -> 1x1
  Var diag_part(Var a);                   // n x n -> n x 1
  Var diag_embed(Var a);                  // n x 1 -> n x n
  /// Lower Cholesky factor of the symmetrized input. On failure adds
  /// 1e-6 * mean(diag) jitter, retrying up to 3 times with 10x
  /// escalation before throwing CholeskyError.
  Var cholesky(Var a);
  Var tri_solve_lower(Var l, Var b);           // solves L X = B
  Var tri_solve_lower_transpose(Var l, Var b); // solves L^T X = B
  Var gather(Var a, const std::vector<int> &rows, const std::vector<int> &cols);

private:
  struct Node {
    Matrix value;
    std::vector<int> parents;
    // Accumulates parent adjoints given this node's adjoint g.
    std::function<void(const Tape &, const Matrix &g, std::vector<Matrix> &adj)>
        pull;
    std::string leaf_name; // non-empty for parameters
  };

  int push(Matrix value, std::vector<int> parents,
           std::function<void(const Tape &, const Matrix &, std::vector<Matrix> &)>
               pull,
           std::string leaf_name = {});
  static void accumulate(std::vector<Matrix> &adj, int id, const Matrix &g,
                         const Matrix &ref_shape);

  std::vector<Node> nodes_;
};

/// Lower Cholesky of the symmetrized input with the retry-with-jitter
/// policy used by Tape::cholesky. Throws CholeskyError on failure.
Matrix cholesky_with_jitter(const Matrix &a);

// Convenience composites.
Var logdet_spd(Tape &t, Var a); // via Cholesky: 2 sum(log diag L)
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, Var b); // matmul / scalar broadcast

/// Max over leaves and entries of |analytic - central FD| /
/// (|analytic| + |FD| + 1e-12).
double check_gradients(
    const std::function<Var(Tape &, const std::map<std::string, Matrix> &)>
        &build,
    const std::map<std::string, Matrix> &point, double step);

} // namespace ad
} // namespace asvgp
