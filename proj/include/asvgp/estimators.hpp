#pragma once

#include "asvgp/gp_core.hpp"
#include "asvgp/point_process.hpp"

#include <functional>
#include <random>
#include <utility>

namespace asvgp {
namespace est {

/// Decaying average of sampled bound values, used to center the
/// score-function estimator.
struct BaselineState {
  double decay = 0.9;
  double average = 0.0;
  bool initialized = false;

  explicit BaselineState(double decay_ = 0.9);

  /// Centering value: the running average, or zero before the first update.
  double value() const { return initialized ? average : 0.0; }
  void update(double sample_mean);
};

/// Thrown when the bound cannot be evaluated for a sampled subset; carries
/// the offending subset.
class BoundEvalError : public std::runtime_error {
public:
  BoundEvalError(const std::string &what, SubsetIndex subset)
      : std::runtime_error(what), subset(std::move(subset)) {}
  SubsetIndex subset;
};

/// Evaluates the bound for a subset and returns (value, parameter
/// gradients keyed by leaf name).
using BoundFn =
    std::function<std::pair<double, ad::GradientMap>(const SubsetIndex &)>;

struct SfResult {
  Eigen::VectorXd logit_grad;  // score-function estimate, baseline-centered
  ad::GradientMap param_grads; // pathwise, averaged over the S subsets
  double mean_bound = 0.0;
};

/// Score-function gradient of E_q[L(Z)] w.r.t. the inclusion logits, with
/// pathwise parameter gradients averaged over the same S sampled subsets.
/// Updates the baseline with the mean sampled bound value.
SfResult sf_gradient(const pp::PppPosterior &post, const BoundFn &bound_fn,
                     int s, BaselineState &baseline, std::mt19937_64 &rng);

/// Exact expectation and exact logit gradient by 2^K enumeration (K <= 20).
std::pair<double, Eigen::VectorXd>
enumerate_expectation(const pp::PppPosterior &post,
                      const std::function<double(const SubsetIndex &)> &bound_fn);

/// Collapsed bound over the full candidate set with the mask applied to the
/// inducing-point kernel blocks: off-diagonal entries scale by b_i b_j, the
/// diagonal interpolates toward 1 as b_k(kappa_kk - 1) + 1, and the
/// cross-covariance rows scale by b. For binary b this equals the collapsed
/// bound of the unmasked subset.
ad::Var masked_bound(ad::Tape &t, const gp::ModelLeaves &ml, ad::Var b,
                     const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

/// Value-only masked bound; requires entries of b in [0, 1] and collapsed
/// mode on the model.
double masked_bound(const SvgpModel &model, const Eigen::VectorXd &b,
                    const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

/// Temperature schedule for the relaxed-mask estimator.
struct ConcreteConfig {
  double temperature = 0.5;
  double temperature_final = 0.1;
  double decay_per_epoch = 1.0; // multiplicative, applied per epoch

  ConcreteConfig(double temperature_, double temperature_final_,
                 double decay_per_epoch_);
  ConcreteConfig() = default;

  double annealed(int epoch) const;
};

struct ConcreteResult {
  Eigen::VectorXd logit_grad;
  ad::GradientMap param_grads;
  double bound = 0.0;
  Eigen::VectorXd relaxed_mask;
};

/// One relaxed-mask sample: b_k = logistic((logit_k + logistic noise) / T),
/// pushed through the masked bound with gradients to the logits by
/// reparameterization. Biased but fully pathwise.
ConcreteResult concrete_gradient(const SvgpModel &model,
                                 const pp::PppPosterior &post,
                                 const ConcreteConfig &config,
                                 const Eigen::MatrixXd &x,
                                 const Eigen::VectorXd &y,
                                 std::mt19937_64 &rng);

} // namespace est
} // namespace asvgp
