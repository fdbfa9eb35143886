#include "asvgp/autodiff.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace asvgp {
namespace ad {

namespace {

bool is_scalar(const Matrix &m) { return m.rows() == 1 && m.cols() == 1; }

[[noreturn]] void shape_fail(const std::string &op, const Matrix &a,
                             const Matrix &b) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << a.rows() << "x" << a.cols()
     << " and " << b.rows() << "x" << b.cols();
  throw ShapeError(os.str());
}

// Lower-triangular part with the diagonal halved; the Phi operator of the
// Cholesky reverse rule.
Matrix phi(const Matrix &m) {
  Matrix out = m.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

} // namespace

const Matrix &Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix &v = value();
  if (!is_scalar(v)) {
    throw ShapeError("scalar() called on non-scalar value");
  }
  return v(0, 0);
}

int Tape::push(
    Matrix value, std::vector<int> parents,
    std::function<void(const Tape &, const Matrix &, std::vector<Matrix> &)>
        pull,
    std::string leaf_name) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.pull = std::move(pull);
  n.leaf_name = std::move(leaf_name);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(std::vector<Matrix> &adj, int id, const Matrix &g,
                      const Matrix &ref) {
  Matrix contrib;
  if (g.rows() == ref.rows() && g.cols() == ref.cols()) {
    contrib = g;
  } else if (is_scalar(ref)) {
    // Broadcast operand: adjoint is the total sensitivity.
    contrib = Matrix::Constant(1, 1, g.sum());
  } else {
    throw ShapeError("adjoint shape mismatch");
  }
  if (adj[id].size() == 0) {
    adj[id] = contrib;
  } else {
    adj[id] += contrib;
  }
}

Var Tape::parameter(const std::string &name, const Matrix &value) {
  if (!value.allFinite()) {
    throw std::invalid_argument("parameter '" + name + "' has non-finite entries");
  }
  // A named leaf is unique per tape: rebinding returns the original node so
  // gradient contributions from every use accumulate in one place.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf_name == name) {
      if (nodes_[i].value.rows() != value.rows() ||
          nodes_[i].value.cols() != value.cols() ||
          nodes_[i].value != value) {
        throw std::invalid_argument("parameter '" + name +
                                    "' rebound with a different value");
      }
      return Var(this, static_cast<int>(i));
    }
  }
  int id = push(value, {}, nullptr, name);
  return Var(this, id);
}

Var Tape::constant(const Matrix &value) {
  int id = push(value, {}, nullptr);
  return Var(this, id);
}

Var Tape::constant(double s) { return constant(Matrix::Constant(1, 1, s)); }

GradientMap Tape::backward(const Var &output) const {
  if (output.tape() != this) {
    throw std::invalid_argument("backward: output belongs to a different tape");
  }
  if (!is_scalar(output.value())) {
    throw ShapeError("backward: output must be scalar");
  }
  std::vector<Matrix> adj(nodes_.size());
  adj[output.id()] = Matrix::Constant(1, 1, 1.0);
  for (int i = output.id(); i >= 0; --i) {
    const Node &n = nodes_[i];
    if (adj[i].size() == 0 || !n.pull) {
      continue;
    }
    n.pull(*this, adj[i], adj);
  }
  GradientMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf_name.empty()) {
      continue;
    }
    if (adj[i].size() == 0) {
      grads[nodes_[i].leaf_name] =
          Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    } else {
      grads[nodes_[i].leaf_name] = adj[i];
    }
  }
  return grads;
}

Var Tape::add(Var a, Var b) {
  const Matrix &va = a.value();
  const Matrix &vb = b.value();
  Matrix out;
  if (va.rows() == vb.rows() && va.cols() == vb.cols()) {
    out = va + vb;
  } else if (is_scalar(va)) {
    out = vb.array() + va(0, 0);
  } else if (is_scalar(vb)) {
    out = va.array() + vb(0, 0);
  } else {
    shape_fail("add", va, vb);
  }
  int ia = a.id(), ib = b.id();
  int id = push(out, {ia, ib},
                [ia, ib](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, g, t.value(ia));
                  accumulate(adj, ib, g, t.value(ib));
                });
  return Var(this, id);
}

Var Tape::sub(Var a, Var b) { return add(a, neg(b)); }

Var Tape::neg(Var a) {
  int ia = a.id();
  int id = push(-a.value(), {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, -g, t.value(ia));
                });
  return Var(this, id);
}

Var Tape::matmul(Var a, Var b) {
  const Matrix &va = a.value();
  const Matrix &vb = b.value();
  int ia = a.id(), ib = b.id();
  if (is_scalar(va) || is_scalar(vb)) {
    // Scalar scaling with broadcast.
    Matrix out;
    if (is_scalar(va)) {
      out = va(0, 0) * vb;
    } else {
      out = vb(0, 0) * va;
    }
    int id = push(out, {ia, ib},
                  [ia, ib](const Tape &t, const Matrix &g,
                           std::vector<Matrix> &adj) {
                    const Matrix &xa = t.value(ia);
                    const Matrix &xb = t.value(ib);
                    if (is_scalar(xa)) {
                      accumulate(adj, ia,
                                 Matrix::Constant(1, 1, (g.array() * xb.array()).sum()),
                                 xa);
                      accumulate(adj, ib, xa(0, 0) * g, xb);
                    } else {
                      accumulate(adj, ib,
                                 Matrix::Constant(1, 1, (g.array() * xa.array()).sum()),
                                 xb);
                      accumulate(adj, ia, xb(0, 0) * g, xa);
                    }
                  });
    return Var(this, id);
  }
  if (va.cols() != vb.rows()) {
    shape_fail("matmul", va, vb);
  }
  int id = push(va * vb, {ia, ib},
                [ia, ib](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, g * t.value(ib).transpose(), t.value(ia));
                  accumulate(adj, ib, t.value(ia).transpose() * g, t.value(ib));
                });
  return Var(this, id);
}

Var Tape::cmul(Var a, Var b) {
  const Matrix &va = a.value();
  const Matrix &vb = b.value();
  int ia = a.id(), ib = b.id();
  if (is_scalar(va) || is_scalar(vb)) {
    return matmul(a, b);
  }
  if (va.rows() != vb.rows() || va.cols() != vb.cols()) {
    shape_fail("cmul", va, vb);
  }
  Matrix out = va.array() * vb.array();
  int id = push(out, {ia, ib},
                [ia, ib](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, (g.array() * t.value(ib).array()).matrix(),
                             t.value(ia));
                  accumulate(adj, ib, (g.array() * t.value(ia).array()).matrix(),
                             t.value(ib));
                });
  return Var(this, id);
}

Var Tape::transpose(Var a) {
  int ia = a.id();
  int id = push(a.value().transpose(), {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, g.transpose(), t.value(ia));
                });
  return Var(this, id);
}

Var Tape::exp(Var a) {
  int ia = a.id();
  Matrix out = a.value().array().exp();
  int self = push(out, {ia}, nullptr);
  nodes_[self].pull = [ia, self](const Tape &t, const Matrix &g,
                                 std::vector<Matrix> &adj) {
    accumulate(adj, ia, (g.array() * t.value(self).array()).matrix(),
               t.value(ia));
  };
  return Var(this, self);
}

Var Tape::log(Var a) {
  int ia = a.id();
  Matrix out = a.value().array().log();
  int id = push(out, {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, (g.array() / t.value(ia).array()).matrix(),
                             t.value(ia));
                });
  return Var(this, id);
}

Var Tape::logistic(Var a) {
  int ia = a.id();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp()));
  int self = push(out, {ia}, nullptr);
  nodes_[self].pull = [ia, self](const Tape &t, const Matrix &g,
                                 std::vector<Matrix> &adj) {
    Eigen::ArrayXXd s = t.value(self).array();
    accumulate(adj, ia, (g.array() * s * (1.0 - s)).matrix(), t.value(ia));
  };
  return Var(this, self);
}

Var Tape::square(Var a) {
  int ia = a.id();
  Matrix out = a.value().array().square();
  int id = push(out, {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia,
                             (2.0 * g.array() * t.value(ia).array()).matrix(),
                             t.value(ia));
                });
  return Var(this, id);
}

Var Tape::sqrt(Var a) {
  int ia = a.id();
  Matrix out = a.value().array().sqrt();
  int self = push(out, {ia}, nullptr);
  nodes_[self].pull = [ia, self](const Tape &t, const Matrix &g,
                                 std::vector<Matrix> &adj) {
    accumulate(adj, ia, (0.5 * g.array() / t.value(self).array()).matrix(),
               t.value(ia));
  };
  return Var(this, self);
}

Var Tape::clamp(Var a, double lo, double hi) {
  int ia = a.id();
  Matrix out = a.value().array().max(lo).min(hi);
  int id = push(out, {ia},
                [ia, lo, hi](const Tape &t, const Matrix &g,
                             std::vector<Matrix> &adj) {
                  const Matrix &x = t.value(ia);
                  Matrix masked =
                      (x.array() > lo && x.array() < hi)
                          .select(g.array(), Eigen::ArrayXXd::Zero(g.rows(), g.cols()));
                  accumulate(adj, ia, masked, x);
                });
  return Var(this, id);
}

Var Tape::sum(Var a) {
  int ia = a.id();
  int id = push(Matrix::Constant(1, 1, a.value().sum()), {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  const Matrix &x = t.value(ia);
                  accumulate(adj, ia,
                             Matrix::Constant(x.rows(), x.cols(), g(0, 0)), x);
                });
  return Var(this, id);
}

Var Tape::trace(Var a) {
  const Matrix &va = a.value();
  if (va.rows() != va.cols()) {
    throw ShapeError("trace: matrix must be square");
  }
  int ia = a.id();
  int id = push(Matrix::Constant(1, 1, va.trace()), {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  const Matrix &x = t.value(ia);
                  Matrix grad = Matrix::Zero(x.rows(), x.cols());
                  grad.diagonal().setConstant(g(0, 0));
                  accumulate(adj, ia, grad, x);
                });
  return Var(this, id);
}

Var Tape::diag_part(Var a) {
  const Matrix &va = a.value();
  if (va.rows() != va.cols()) {
    throw ShapeError("diag_part: matrix must be square");
  }
  int ia = a.id();
  int id = push(va.diagonal(), {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  const Matrix &x = t.value(ia);
                  Matrix grad = Matrix::Zero(x.rows(), x.cols());
                  grad.diagonal() = g.col(0);
                  accumulate(adj, ia, grad, x);
                });
  return Var(this, id);
}

Var Tape::diag_embed(Var a) {
  const Matrix &va = a.value();
  if (va.cols() != 1) {
    throw ShapeError("diag_embed: expects a column vector");
  }
  int ia = a.id();
  Matrix out = Matrix::Zero(va.rows(), va.rows());
  out.diagonal() = va.col(0);
  int id = push(out, {ia},
                [ia](const Tape &t, const Matrix &g, std::vector<Matrix> &adj) {
                  accumulate(adj, ia, g.diagonal(), t.value(ia));
                });
  return Var(this, id);
}

Matrix cholesky_with_jitter(const Matrix &a) {
  if (a.rows() != a.cols()) {
    throw ShapeError("cholesky: matrix must be square");
  }
  Matrix sym = 0.5 * (a + a.transpose());
  double jitter = 1e-6 * sym.diagonal().mean();
  Matrix attempt = sym;
  for (int k = 0; k <= 3; ++k) {
    Eigen::LLT<Matrix> llt(attempt);
    if (llt.info() == Eigen::Success) {
      return llt.matrixL();
    }
    attempt = sym;
    attempt.diagonal().array() += jitter;
    jitter *= 10.0;
  }
  double min_eig =
      Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly)
          .eigenvalues()
          .minCoeff();
  std::ostringstream os;
  os << "cholesky failed after jitter escalation; min eigenvalue estimate "
     << min_eig;
  throw CholeskyError(os.str(), min_eig);
}

Var Tape::cholesky(Var a) {
  Matrix l = cholesky_with_jitter(a.value());
  // Jitter is treated as a constant diagonal shift, so the reverse rule is
  // unchanged.
  int ia = a.id();
  int self = push(l, {ia}, nullptr);
  nodes_[self].pull = [ia, self](const Tape &t, const Matrix &g,
                                 std::vector<Matrix> &adj) {
    const Matrix &lv = t.value(self);
    Matrix p = phi(lv.transpose() * g);
    // X = L^{-T} P L^{-1}
    Matrix y = lv.transpose().triangularView<Eigen::Upper>().solve(p);
    Matrix x = lv.transpose()
                   .triangularView<Eigen::Upper>()
                   .solve(y.transpose())
                   .transpose();
    Matrix sym_grad = 0.5 * (x + x.transpose());
    // Input was symmetrized before factorization; chain through that too.
    accumulate(adj, ia, sym_grad, t.value(ia));
  };
  return Var(this, self);
}

Var Tape::tri_solve_lower(Var l, Var b) {
  const Matrix &vl = l.value();
  const Matrix &vb = b.value();
  if (vl.rows() != vl.cols() || vl.cols() != vb.rows()) {
    shape_fail("tri_solve_lower", vl, vb);
  }
  Matrix x = vl.triangularView<Eigen::Lower>().solve(vb);
  int il = l.id(), ib = b.id();
  int self = push(x, {il, ib}, nullptr);
  nodes_[self].pull = [il, ib, self](const Tape &t, const Matrix &g,
                                     std::vector<Matrix> &adj) {
    const Matrix &lv = t.value(il);
    const Matrix &xv = t.value(self);
    Matrix c = lv.transpose().triangularView<Eigen::Upper>().solve(g);
    Matrix gl = -(c * xv.transpose());
    gl = gl.triangularView<Eigen::Lower>();
    accumulate(adj, il, gl, lv);
    accumulate(adj, ib, c, t.value(ib));
  };
  return Var(this, self);
}

Var Tape::tri_solve_lower_transpose(Var l, Var b) {
  const Matrix &vl = l.value();
  const Matrix &vb = b.value();
  if (vl.rows() != vl.cols() || vl.cols() != vb.rows()) {
    shape_fail("tri_solve_lower_transpose", vl, vb);
  }
  Matrix x = vl.transpose().triangularView<Eigen::Upper>().solve(vb);
  int il = l.id(), ib = b.id();
  int self = push(x, {il, ib}, nullptr);
  nodes_[self].pull = [il, ib, self](const Tape &t, const Matrix &g,
                                     std::vector<Matrix> &adj) {
    const Matrix &lv = t.value(il);
    const Matrix &xv = t.value(self);
    Matrix c = lv.triangularView<Eigen::Lower>().solve(g);
    Matrix gl = -(xv * c.transpose());
    gl = gl.triangularView<Eigen::Lower>();
    accumulate(adj, il, gl, lv);
    accumulate(adj, ib, c, t.value(ib));
  };
  return Var(this, self);
}

Var Tape::gather(Var a, const std::vector<int> &rows,
                 const std::vector<int> &cols) {
  const Matrix &va = a.value();
  for (int r : rows) {
    if (r < 0 || r >= va.rows()) {
      throw std::out_of_range("gather: row index out of range");
    }
  }
  for (int c : cols) {
    if (c < 0 || c >= va.cols()) {
      throw std::out_of_range("gather: column index out of range");
    }
  }
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(i, j) = va(rows[i], cols[j]);
    }
  }
  int ia = a.id();
  int id = push(out, {ia},
                [ia, rows, cols](const Tape &t, const Matrix &g,
                                 std::vector<Matrix> &adj) {
                  const Matrix &x = t.value(ia);
                  Matrix grad = Matrix::Zero(x.rows(), x.cols());
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    for (std::size_t j = 0; j < cols.size(); ++j) {
                      grad(rows[i], cols[j]) += g(i, j);
                    }
                  }
                  accumulate(adj, ia, grad, x);
                });
  return Var(this, id);
}

Var logdet_spd(Tape &t, Var a) {
  Var l = t.cholesky(a);
  return t.matmul(t.constant(2.0), t.sum(t.log(t.diag_part(l))));
}

Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
Var operator-(Var a) { return a.tape()->neg(a); }
Var operator*(Var a, Var b) { return a.tape()->matmul(a, b); }

double check_gradients(
    const std::function<Var(Tape &, const std::map<std::string, Matrix> &)>
        &build,
    const std::map<std::string, Matrix> &point, double step) {
  GradientMap analytic;
  {
    Tape t;
    Var out = build(t, point);
    analytic = t.backward(out);
  }
  auto eval = [&](const std::map<std::string, Matrix> &p) {
    Tape t;
    return build(t, p).scalar();
  };
  double max_err = 0.0;
  for (const auto &[name, value] : point) {
    auto it = analytic.find(name);
    if (it == analytic.end()) {
      continue;
    }
    for (Eigen::Index i = 0; i < value.rows(); ++i) {
      for (Eigen::Index j = 0; j < value.cols(); ++j) {
        std::map<std::string, Matrix> p = point;
        p[name](i, j) = value(i, j) + step;
        double up = eval(p);
        p[name](i, j) = value(i, j) - step;
        double down = eval(p);
        double fd = (up - down) / (2.0 * step);
        double an = it->second(i, j);
        double err = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
        max_err = std::max(max_err, err);
      }
    }
  }
  return max_err;
}

} // namespace ad
} // namespace asvgp
