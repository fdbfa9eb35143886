#include "asvgp/point_process.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asvgp {
namespace pp {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clamp_prob(double p) {
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

// Indicator vector of the subset as a K x 1 matrix.
Eigen::MatrixXd indicator(const SubsetIndex &subset, int k) {
  Eigen::MatrixXd ind = Eigen::MatrixXd::Zero(k, 1);
  for (int i : subset.indices) {
    ind(i, 0) = 1.0;
  }
  return ind;
}

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

} // namespace

PppPosterior PppPosterior::init(int k, double initial_probability) {
  if (k < 1) {
    throw std::invalid_argument("PppPosterior::init: candidate count must be positive");
  }
  double p = clamp_prob(initial_probability);
  PppPosterior post;
  post.logits = Eigen::VectorXd::Constant(k, std::log(p) - std::log1p(-p));
  return post;
}

Eigen::VectorXd PppPosterior::probabilities() const {
  return logits.unaryExpr([](double x) { return logistic(x); });
}

PriorSpec::PriorSpec(double alpha_, int k_) : alpha(alpha_), k(k_) {
  if (alpha < 0.0) {
    throw std::invalid_argument("PriorSpec: alpha must be non-negative");
  }
  if (k < 1) {
    throw std::invalid_argument("PriorSpec: candidate count must be positive");
  }
}

double log_pmf(const PppPosterior &post, const SubsetIndex &subset) {
  subset.validate(post.size());
  Eigen::VectorXd lam = post.probabilities();
  Eigen::MatrixXd ind = indicator(subset, post.size());
  double acc = 0.0;
  for (int i = 0; i < post.size(); ++i) {
    double p = clamp_prob(lam(i));
    acc += ind(i, 0) > 0.5 ? std::log(p) : std::log1p(-p);
  }
  return acc;
}

ad::Var log_pmf(ad::Tape &t, ad::Var logits, const SubsetIndex &subset) {
  int k = static_cast<int>(logits.rows());
  subset.validate(k);
  ad::Var lam = t.clamp(t.logistic(logits), kProbFloor, 1.0 - kProbFloor);
  ad::Var ind = t.constant(indicator(subset, k));
  ad::Var one = t.constant(Eigen::MatrixXd::Ones(k, 1));
  ad::Var on = t.cmul(ind, t.log(lam));
  ad::Var off = t.cmul(one - ind, t.log(one - lam));
  return t.sum(on + off);
}

SubsetIndex sample(const PppPosterior &post, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd lam = post.probabilities();
  std::vector<int> idx;
  for (int i = 0; i < post.size(); ++i) {
    if (unif(rng) < lam(i)) {
      idx.push_back(i);
    }
  }
  return SubsetIndex(std::move(idx));
}

Eigen::VectorXd score(const PppPosterior &post, const SubsetIndex &subset) {
  subset.validate(post.size());
  Eigen::VectorXd g = -post.probabilities();
  for (int i : subset.indices) {
    g(i) += 1.0;
  }
  return g;
}

std::pair<double, double> cardinality_stats(const PppPosterior &post) {
  Eigen::VectorXd lam = post.probabilities();
  double mean = lam.sum();
  double var = (lam.array() * (1.0 - lam.array())).sum();
  return {mean, var};
}

double entropy(const PppPosterior &post) {
  // Clamp only inside the logs: the multipliers keep their exact values so
  // saturated logits give (near) zero entropy rather than the clamp floor's.
  Eigen::VectorXd lam = post.probabilities();
  double h = 0.0;
  for (int i = 0; i < post.size(); ++i) {
    double p = lam(i);
    h -= p * std::log(clamp_prob(p)) + (1.0 - p) * std::log(clamp_prob(1.0 - p));
  }
  return h;
}

double log_normalizer(const PriorSpec &prior) {
  // The empty set carries positive posterior mass, so the prior's support
  // (and hence this sum) must include k = 0.
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(prior.k + 1);
  for (int k = 0; k <= prior.k; ++k) {
    terms[k] = log_binom(prior.k, k) - prior.alpha * static_cast<double>(k) * k;
    max_term = std::max(max_term, terms[k]);
  }
  double acc = 0.0;
  for (double term : terms) {
    acc += std::exp(term - max_term);
  }
  return -(max_term + std::log(acc));
}

double kl_to_prior(const PppPosterior &post, const PriorSpec &prior) {
  if (post.size() != prior.k) {
    throw std::invalid_argument("kl_to_prior: posterior and prior sizes differ");
  }
  auto [mean, var] = cardinality_stats(post);
  double cross_entropy =
      -log_normalizer(prior) + prior.alpha * (var + mean * mean);
  return cross_entropy - entropy(post);
}

ad::Var kl_to_prior(ad::Tape &t, ad::Var logits, const PriorSpec &prior) {
  int k = static_cast<int>(logits.rows());
  if (k != prior.k) {
    throw std::invalid_argument("kl_to_prior: posterior and prior sizes differ");
  }
  ad::Var lam = t.logistic(logits);
  ad::Var one = t.constant(Eigen::MatrixXd::Ones(k, 1));
  ad::Var mean = t.sum(lam);
  ad::Var var = t.sum(t.cmul(lam, one - lam));
  ad::Var second_moment = var + t.square(mean);
  ad::Var cross_entropy = t.constant(-log_normalizer(prior)) +
                          t.constant(prior.alpha) * second_moment;
  ad::Var log_on = t.log(t.clamp(lam, kProbFloor, 1.0 - kProbFloor));
  ad::Var log_off = t.log(t.clamp(one - lam, kProbFloor, 1.0 - kProbFloor));
  ad::Var entropy_term =
      -t.sum(t.cmul(lam, log_on) + t.cmul(one - lam, log_off));
  return cross_entropy - entropy_term;
}

} // namespace pp
} // namespace asvgp
