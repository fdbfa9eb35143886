#pragma once

#include "asvgp/autodiff.hpp"
#include "asvgp/gp_core.hpp"

#include <random>
#include <utility>

namespace asvgp {
namespace pp {

/// Independent-inclusion posterior over the candidate set: point k belongs
/// to the active set with probability lambda_k = logistic(logit_k).
struct PppPosterior {
  Eigen::VectorXd logits;

  static PppPosterior init(int k, double initial_probability = 0.5);

  int size() const { return static_cast<int>(logits.size()); }
  Eigen::VectorXd probabilities() const;
};

/// Cardinality prior p(Z) proportional to exp(-alpha |Z|^2) over subsets of
/// a K-point candidate set.
struct PriorSpec {
  double alpha = 0.0;
  int k = 0;

  PriorSpec(double alpha_, int k_);
};

// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] inside logs so
// saturated logits stay finite during optimization.
inline constexpr double kProbFloor = 1e-7;

double log_pmf(const PppPosterior &post, const SubsetIndex &subset);
ad::Var log_pmf(ad::Tape &t, ad::Var logits, const SubsetIndex &subset);

SubsetIndex sample(const PppPosterior &post, std::mt19937_64 &rng);

/// Gradient of log q(subset) with respect to the logits: indicator - lambda.
Eigen::VectorXd score(const PppPosterior &post, const SubsetIndex &subset);

/// Exact mean and variance of |Z| (Poisson binomial cardinality).
std::pair<double, double> cardinality_stats(const PppPosterior &post);

double entropy(const PppPosterior &post);

/// log C for the prior, i.e. -log sum_{k=0}^{K} binom(K,k) exp(-alpha k^2),
/// evaluated with a log-sum-exp so large K does not overflow.
double log_normalizer(const PriorSpec &prior);

double kl_to_prior(const PppPosterior &post, const PriorSpec &prior);
ad::Var kl_to_prior(ad::Tape &t, ad::Var logits, const PriorSpec &prior);

} // namespace pp
} // namespace asvgp
