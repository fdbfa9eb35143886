#pragma once

#include "asvgp/autodiff.hpp"
#include "asvgp/kernel.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace asvgp {

enum class BoundMode { Collapsed, Uncollapsed };

/// Sorted, distinct indices into the candidate inducing set.
struct SubsetIndex {
  std::vector<int> indices;

  SubsetIndex() = default;
  explicit SubsetIndex(std::vector<int> idx);
  static SubsetIndex all(int k);

  bool empty() const { return indices.empty(); }
  int size() const { return static_cast<int>(indices.size()); }
  void validate(int candidate_count) const;
};

/// Sparse variational GP state over a fixed candidate inducing set. The
/// variational Gaussian covers all K candidates; bounds subset it.
struct SvgpModel {
  Eigen::MatrixXd inducing_candidates; // K x d
  KernelParams kernel;
  double log_noise_variance = 0.0;
  Eigen::VectorXd var_mean;            // K
  Eigen::MatrixXd var_factor_strict;   // K x K, strictly lower part used
  Eigen::VectorXd var_factor_log_diag; // K
  BoundMode mode = BoundMode::Collapsed;

  static SvgpModel init(const Eigen::MatrixXd &candidates, BoundMode mode);

  int candidate_count() const {
    return static_cast<int>(inducing_candidates.rows());
  }
  int input_dim() const { return static_cast<int>(inducing_candidates.cols()); }
  double noise_variance() const { return std::exp(log_noise_variance); }
  Eigen::MatrixXd var_factor() const; // lower triangular with positive diag
  Eigen::MatrixXd var_cov() const;    // S* = F F^T

  /// Sets (m*, S*) to the prior: m* = 0, S* = K(Z*, Z*). With this state
  /// the uncollapsed KL term is zero.
  void reset_variational_to_prior();
};

namespace gp {

/// Jittered lower Cholesky of a symmetric matrix (same retry policy as the
/// differentiation engine).
Eigen::MatrixXd cholesky_jitter(const Eigen::MatrixXd &a);

double exact_lml(const KernelParams &params, double log_noise_variance,
                 const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

double gaussian_kl(const Eigen::VectorXd &m0, const Eigen::MatrixXd &s0,
                   const Eigen::VectorXd &m1, const Eigen::MatrixXd &s1);

/// Optimal variational Gaussian for the given subset under the Gaussian
/// likelihood. Throws on an empty subset.
std::pair<Eigen::VectorXd, Eigen::MatrixXd>
collapsed_q_u(const SvgpModel &model, const SubsetIndex &subset,
              const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

double collapsed_elbo(const SvgpModel &model, const SubsetIndex &subset,
                      const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

double uncollapsed_elbo(const SvgpModel &model, const SubsetIndex &subset,
                        const Eigen::MatrixXd &x_batch,
                        const Eigen::VectorXd &y_batch, double scale);

/// Predictive mean and variance of the latent function at x_test, given an
/// explicit variational Gaussian (m, S) over the subset.
std::pair<Eigen::VectorXd, Eigen::VectorXd>
predict(const SvgpModel &model, const SubsetIndex &subset,
        const Eigen::VectorXd &m, const Eigen::MatrixXd &s,
        const Eigen::MatrixXd &x_test);

// --- differentiable builders ---------------------------------------------

/// Leaves registered under fixed names: log_lengthscales, log_variance,
/// log_noise, z, var_mean, var_factor_strict, var_factor_log_diag.
struct ModelLeaves {
  ad::Var log_lengthscales;
  ad::Var log_variance;
  ad::Var log_noise;
  ad::Var z;
  ad::Var var_mean;            // only bound in uncollapsed mode
  ad::Var var_factor_strict;   // "
  ad::Var var_factor_log_diag; // "
};

ModelLeaves leaves(ad::Tape &t, const SvgpModel &model);

ad::Var collapsed_elbo(ad::Tape &t, const ModelLeaves &ml,
                       const SubsetIndex &subset, const Eigen::MatrixXd &x,
                       const Eigen::VectorXd &y);

ad::Var uncollapsed_elbo(ad::Tape &t, const ModelLeaves &ml,
                         const SubsetIndex &subset,
                         const Eigen::MatrixXd &x_batch,
                         const Eigen::VectorXd &y_batch, double scale);

ad::Var exact_lml(ad::Tape &t, ad::Var log_lengthscales, ad::Var log_variance,
                  ad::Var log_noise, const Eigen::MatrixXd &x,
                  const Eigen::VectorXd &y);

/// Bound for the model's mode (full batch, scale 1).
double bound_value(const SvgpModel &model, const SubsetIndex &subset,
                   const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

ad::Var bound(ad::Tape &t, const ModelLeaves &ml, BoundMode mode,
              const SubsetIndex &subset, const Eigen::MatrixXd &x,
              const Eigen::VectorXd &y, double scale = 1.0);

} // namespace gp
} // namespace asvgp
