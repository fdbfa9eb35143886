#pragma once

#include "asvgp/autodiff.hpp"

#include <Eigen/Dense>

namespace asvgp {

/// RBF-ARD hyperparameters, stored unconstrained. The mean function is
/// fixed to zero.
struct KernelParams {
  Eigen::VectorXd log_lengthscales; // one per input dimension
  double log_variance = 0.0;

  static KernelParams unit(int input_dim) {
    KernelParams p;
    p.log_lengthscales = Eigen::VectorXd::Zero(input_dim);
    p.log_variance = 0.0;
    return p;
  }

  Eigen::VectorXd lengthscales() const {
    return log_lengthscales.array().exp();
  }
  double variance() const { return std::exp(log_variance); }
  int input_dim() const { return static_cast<int>(log_lengthscales.size()); }
};

namespace kernel {

/// k(x, x') = v * exp(-1/2 sum_d (x_d - x'_d)^2 / l_d^2)
Eigen::MatrixXd gram(const KernelParams &params, const Eigen::MatrixXd &x,
                     const Eigen::MatrixXd &x2);

/// Diagonal of gram(params, x, x); O(n) for this stationary kernel.
Eigen::VectorXd gram_diag(const KernelParams &params, const Eigen::MatrixXd &x);

/// Differentiable Gram matrix. `x` and `x2` are n x d / n' x d Vars (may
/// be constants or parameters); `log_lengthscales` is d x 1 and
/// `log_variance` 1 x 1.
ad::Var gram(ad::Tape &t, ad::Var log_lengthscales, ad::Var log_variance,
             ad::Var x, ad::Var x2);

ad::Var gram_diag(ad::Tape &t, ad::Var log_variance, Eigen::Index n);

/// Registers the kernel leaves on a tape under the given name prefix
/// ("<prefix>log_lengthscales", "<prefix>log_variance").
struct GramLeaves {
  ad::Var log_lengthscales;
  ad::Var log_variance;
};
GramLeaves leaves(ad::Tape &t, const KernelParams &params,
                  const std::string &prefix = "");

} // namespace kernel
} // namespace asvgp
