#include "asvgp/point_process.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using asvgp::SubsetIndex;
using asvgp::pp::PppPosterior;
using asvgp::pp::PriorSpec;
using Eigen::VectorXd;

namespace {

PppPosterior from_probs(const VectorXd &lam) {
  PppPosterior post;
  post.logits =
      lam.unaryExpr([](double p) { return std::log(p) - std::log1p(-p); });
  return post;
}

VectorXd random_probs(int k, std::mt19937_64 &rng, double lo = 0.05,
                      double hi = 0.95) {
  std::uniform_real_distribution<double> unif(lo, hi);
  VectorXd lam(k);
  for (int i = 0; i < k; ++i) {
    lam(i) = unif(rng);
  }
  return lam;
}

// All 2^k subsets in index order; k must stay small.
std::vector<SubsetIndex> all_subsets(int k) {
  std::vector<SubsetIndex> out;
  for (int mask = 0; mask < (1 << k); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < k; ++i) {
      if (mask & (1 << i)) {
        idx.push_back(i);
      }
    }
    out.emplace_back(std::move(idx));
  }
  return out;
}

double brute_force_log_prior(const PriorSpec &prior, int subset_size) {
  return asvgp::pp::log_normalizer(prior) -
         prior.alpha * static_cast<double>(subset_size) * subset_size;
}

} // namespace

TEST_CASE("log_pmf closed-form values") {
  VectorXd lam(2);
  lam << 0.3, 0.6;
  PppPosterior post = from_probs(lam);
  CHECK(asvgp::pp::log_pmf(post, SubsetIndex(std::vector<int>{0})) ==
        doctest::Approx(std::log(0.12)).epsilon(1e-9));

  PppPosterior half = from_probs(VectorXd::Constant(5, 0.5));
  CHECK(asvgp::pp::log_pmf(half, SubsetIndex(std::vector<int>{1, 3})) ==
        doctest::Approx(-5.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_pmf normalizes over all subsets") {
  std::mt19937_64 rng(1);
  PppPosterior post = from_probs(random_probs(10, rng));
  double total = 0.0;
  for (const auto &subset : all_subsets(10)) {
    total += std::exp(asvgp::pp::log_pmf(post, subset));
  }
  CHECK(std::abs(total - 1.0) < 1e-10);
}

TEST_CASE("log_pmf AD value and gradient") {
  std::mt19937_64 rng(2);
  PppPosterior post = from_probs(random_probs(6, rng));
  SubsetIndex subset(std::vector<int>{0, 2, 5});

  std::map<std::string, Eigen::MatrixXd> pt{{"logits", post.logits}};
  auto build = [&](asvgp::ad::Tape &t,
                   const std::map<std::string, Eigen::MatrixXd> &p) {
    return asvgp::pp::log_pmf(t, t.parameter("logits", p.at("logits")), subset);
  };
  asvgp::ad::Tape t;
  asvgp::ad::Var out = build(t, pt);
  CHECK(out.scalar() ==
        doctest::Approx(asvgp::pp::log_pmf(post, subset)).epsilon(1e-12));
  CHECK(asvgp::ad::check_gradients(build, pt, 1e-6) < 1e-6);

  // The analytic score is indicator - lambda.
  Eigen::MatrixXd g = t.backward(out).at("logits");
  VectorXd expected = asvgp::pp::score(post, subset);
  CHECK((g.col(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample respects saturation and inclusion frequencies") {
  std::mt19937_64 rng(3);

  PppPosterior on;
  on.logits = VectorXd::Constant(4, 20.0);
  PppPosterior off;
  off.logits = VectorXd::Constant(4, -20.0);
  for (int i = 0; i < 100; ++i) {
    CHECK(asvgp::pp::sample(on, rng).size() == 4);
    CHECK(asvgp::pp::sample(off, rng).empty());
  }

  VectorXd lam(3);
  lam << 0.2, 0.7, 0.9;
  PppPosterior post = from_probs(lam);
  VectorXd freq = VectorXd::Zero(3);
  const int draws = 100000;
  for (int s = 0; s < draws; ++s) {
    for (int i : asvgp::pp::sample(post, rng).indices) {
      freq(i) += 1.0;
    }
  }
  freq /= draws;
  CHECK((freq - lam).cwiseAbs().maxCoeff() < 0.01);

  // Deterministic given the seed.
  std::mt19937_64 a(77), b(77);
  for (int s = 0; s < 50; ++s) {
    CHECK(asvgp::pp::sample(post, a).indices ==
          asvgp::pp::sample(post, b).indices);
  }
}

TEST_CASE("cardinality_stats closed forms and enumeration") {
  VectorXd det(3);
  det << 1.0 - 1e-12, 1.0 - 1e-12, 1e-12;
  auto [e_det, v_det] = asvgp::pp::cardinality_stats(from_probs(det));
  CHECK(e_det == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(v_det == doctest::Approx(0.0).epsilon(1e-9));

  auto [e_half, v_half] =
      asvgp::pp::cardinality_stats(from_probs(VectorXd::Constant(2, 0.5)));
  CHECK(e_half == doctest::Approx(1.0));
  CHECK(v_half == doctest::Approx(0.5));

  VectorXd lam(3);
  lam << 0.2, 0.7, 0.9;
  auto [e, v] = asvgp::pp::cardinality_stats(from_probs(lam));
  CHECK(e == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(v == doctest::Approx(0.46).epsilon(1e-12));

  // E[|Z|^2] = V + E^2 against exhaustive enumeration.
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    int k = 4 + rep;
    PppPosterior post = from_probs(random_probs(k, rng));
    auto [mean, var] = asvgp::pp::cardinality_stats(post);
    double second = 0.0;
    for (const auto &subset : all_subsets(k)) {
      second += std::exp(asvgp::pp::log_pmf(post, subset)) *
                static_cast<double>(subset.size()) * subset.size();
    }
    CHECK(std::abs(second - (var + mean * mean)) < 1e-10);
  }
}

TEST_CASE("entropy closed forms") {
  CHECK(asvgp::pp::entropy(from_probs(VectorXd::Constant(1, 0.5))) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(asvgp::pp::entropy(from_probs(VectorXd::Constant(1, 1.0 - 1e-12))) <
        1e-5);
  CHECK(asvgp::pp::entropy(from_probs(VectorXd::Constant(2, 0.5))) ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log_normalizer closed forms and direct sum") {
  CHECK(asvgp::pp::log_normalizer(PriorSpec(0.0, 1)) ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(asvgp::pp::log_normalizer(PriorSpec(0.0, 10)) ==
        doctest::Approx(-10.0 * std::log(2.0)).epsilon(1e-12));

  // Direct small-K summation oracle.
  double direct = 0.0;
  for (int k = 0; k <= 8; ++k) {
    double binom = std::round(std::exp(std::lgamma(9.0) - std::lgamma(k + 1.0) -
                                       std::lgamma(9.0 - k)));
    direct += binom * std::exp(-0.05 * k * k);
  }
  CHECK(asvgp::pp::log_normalizer(PriorSpec(0.05, 8)) ==
        doctest::Approx(-std::log(direct)).epsilon(1e-12));

  // Large K must not overflow: 2^K alone would.
  double big = asvgp::pp::log_normalizer(PriorSpec(0.05, 10000));
  CHECK(std::isfinite(big));
}

TEST_CASE("kl_to_prior closed forms") {
  CHECK(std::abs(asvgp::pp::kl_to_prior(from_probs(VectorXd::Constant(1, 0.5)),
                                        PriorSpec(0.0, 1))) < 1e-12);

  PppPosterior sure;
  sure.logits = VectorXd::Constant(1, 30.0);
  CHECK(asvgp::pp::kl_to_prior(sure, PriorSpec(0.0, 1)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("kl_to_prior matches the enumeration oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha_dist(0.0, 0.3);
  std::uniform_int_distribution<int> k_dist(2, 12);
  for (int rep = 0; rep < 50; ++rep) {
    int k = k_dist(rng);
    double alpha = alpha_dist(rng);
    PppPosterior post = from_probs(random_probs(k, rng));
    PriorSpec prior(alpha, k);
    double brute = 0.0;
    for (const auto &subset : all_subsets(k)) {
      double lq = asvgp::pp::log_pmf(post, subset);
      brute += std::exp(lq) * (lq - brute_force_log_prior(prior, subset.size()));
    }
    CHECK(std::abs(asvgp::pp::kl_to_prior(post, prior) - brute) < 1e-9);
    CHECK(asvgp::pp::kl_to_prior(post, prior) >= -1e-12);
  }
}

TEST_CASE("kl_to_prior AD path: value, gradient, non-negativity") {
  std::mt19937_64 rng(6);
  PppPosterior post = from_probs(random_probs(7, rng));
  PriorSpec prior(0.05, 7);

  std::map<std::string, Eigen::MatrixXd> pt{{"logits", post.logits}};
  auto build = [&](asvgp::ad::Tape &t,
                   const std::map<std::string, Eigen::MatrixXd> &p) {
    return asvgp::pp::kl_to_prior(t, t.parameter("logits", p.at("logits")),
                                  prior);
  };
  asvgp::ad::Tape t;
  CHECK(build(t, pt).scalar() ==
        doctest::Approx(asvgp::pp::kl_to_prior(post, prior)).epsilon(1e-9));
  CHECK(asvgp::ad::check_gradients(build, pt, 1e-6) < 1e-6);
}

TEST_CASE("kl_to_prior is monotone in alpha for a heavy posterior") {
  // d KL / d alpha = E_q[|Z|^2] - E_p[|Z|^2], so monotonicity needs the
  // posterior's second moment to dominate the prior's at alpha = 0; a
  // near-full posterior (lambda = 0.9, second moment ~ 29.7 vs the
  // binomial prior's 10.5) guarantees it for every alpha >= 0.
  PppPosterior post = from_probs(VectorXd::Constant(6, 0.9));
  double prev = asvgp::pp::kl_to_prior(post, PriorSpec(0.0, 6));
  for (double alpha : {0.01, 0.05, 0.1, 0.5, 1.0}) {
    double cur = asvgp::pp::kl_to_prior(post, PriorSpec(alpha, 6));
    CHECK(cur >= prev - 1e-12);
    prev = cur;
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(PriorSpec(-0.1, 4), std::invalid_argument);
  CHECK_THROWS_AS(PriorSpec(0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(PppPosterior::init(0), std::invalid_argument);
  PppPosterior post = PppPosterior::init(3);
  CHECK_THROWS_AS(asvgp::pp::log_pmf(post, SubsetIndex(std::vector<int>{3})),
                  std::out_of_range);
  CHECK_THROWS_AS(asvgp::pp::kl_to_prior(post, PriorSpec(0.1, 4)),
                  std::invalid_argument);
}
