#include "asvgp/kernel.hpp"

namespace asvgp {
namespace kernel {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd gram(const KernelParams &params, const MatrixXd &x,
              const MatrixXd &x2) {
  if (x.cols() != x2.cols() || x.cols() != params.input_dim()) {
    throw ad::ShapeError("kernel::gram: input dimensionality mismatch");
  }
  VectorXd inv_l = (-params.log_lengthscales).array().exp();
  MatrixXd xs = x * inv_l.asDiagonal();
  MatrixXd x2s = x2 * inv_l.asDiagonal();
  VectorXd sq1 = xs.rowwise().squaredNorm();
  VectorXd sq2 = x2s.rowwise().squaredNorm();
  MatrixXd d2 = sq1.replicate(1, x2.rows()) +
                sq2.transpose().replicate(x.rows(), 1) -
                2.0 * xs * x2s.transpose();
  return params.variance() * (-0.5 * d2.array()).exp();
}

VectorXd gram_diag(const KernelParams &params, const MatrixXd &x) {
  return VectorXd::Constant(x.rows(), params.variance());
}

Var gram(Tape &t, Var log_lengthscales, Var log_variance, Var x, Var x2) {
  const Eigen::Index d = x.value().cols();
  if (x2.value().cols() != d || log_lengthscales.value().rows() != d) {
    throw ad::ShapeError("kernel::gram: input dimensionality mismatch");
  }
  Var inv_l = t.exp(-log_lengthscales);
  Var xs = x * t.diag_embed(inv_l);
  Var x2s = x2 * t.diag_embed(inv_l);
  Var ones_d = t.constant(Matrix::Ones(d, 1));
  Var sq1 = t.square(xs) * ones_d;                 // n x 1
  Var sq2 = t.square(x2s) * ones_d;                // n' x 1
  Var ones_row = t.constant(Matrix::Ones(1, x2.rows()));
  Var ones_col = t.constant(Matrix::Ones(x.rows(), 1));
  Var d2 = sq1 * ones_row + ones_col * t.transpose(sq2) +
           t.constant(-2.0) * (xs * t.transpose(x2s));
  return t.cmul(t.exp(log_variance), t.exp(t.constant(-0.5) * d2));
}

Var gram_diag(Tape &t, Var log_variance, Eigen::Index n) {
  return t.cmul(t.exp(log_variance), t.constant(Matrix::Ones(n, 1)));
}

GramLeaves leaves(Tape &t, const KernelParams &params,
                  const std::string &prefix) {
  GramLeaves out;
  out.log_lengthscales =
      t.parameter(prefix + "log_lengthscales", params.log_lengthscales);
  out.log_variance = t.parameter(
      prefix + "log_variance", Matrix::Constant(1, 1, params.log_variance));
  return out;
}

} // namespace kernel
} // namespace asvgp
