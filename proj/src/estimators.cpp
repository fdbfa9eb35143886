#include "asvgp/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace asvgp {
namespace est {

using ad::GradientMap;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void accumulate_grads(GradientMap &into, const GradientMap &grads) {
  for (const auto &[name, g] : grads) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g);
    } else {
      it->second += g;
    }
  }
}


constexpr double kLog2Pi = 1.8378770664093453;

} // namespace

BaselineState::BaselineState(double decay_) : decay(decay_) {
  if (!(decay > 0.0 && decay < 1.0)) {
    throw std::invalid_argument("BaselineState: decay must lie in (0, 1)");
  }
}

void BaselineState::update(double sample_mean) {
  if (!std::isfinite(sample_mean)) {
    throw std::invalid_argument("BaselineState: non-finite update");
  }
  average = initialized ? decay * average + (1.0 - decay) * sample_mean
                        : sample_mean;
  initialized = true;
}

SfResult sf_gradient(const pp::PppPosterior &post, const BoundFn &bound_fn,
                     int s, BaselineState &baseline, std::mt19937_64 &rng) {
  if (s < 1) {
    throw std::invalid_argument("sf_gradient: need at least one sample");
  }
  const double center = baseline.value();
  SfResult result;
  result.logit_grad = VectorXd::Zero(post.size());
  double total = 0.0;
  for (int i = 0; i < s; ++i) {
    SubsetIndex subset = pp::sample(post, rng);
    double value = 0.0;
    GradientMap grads;
    try {
      std::tie(value, grads) = bound_fn(subset);
    } catch (const std::exception &e) {
      throw BoundEvalError(std::string("sf_gradient: bound evaluation failed: ") +
                               e.what(),
                           subset);
    }
    result.logit_grad += (value - center) * pp::score(post, subset);
    accumulate_grads(result.param_grads, grads);
    total += value;
  }
  result.logit_grad /= s;
  for (auto &[name, g] : result.param_grads) {
    g /= s;
  }
  result.mean_bound = total / s;
  baseline.update(result.mean_bound);
  return result;
}

std::pair<double, VectorXd> enumerate_expectation(
    const pp::PppPosterior &post,
    const std::function<double(const SubsetIndex &)> &bound_fn) {
  const int k = post.size();
  if (k > 20) {
    throw std::invalid_argument(
        "enumerate_expectation: candidate set too large for 2^K enumeration");
  }
  VectorXd lam = post.probabilities();
  double expectation = 0.0;
  VectorXd grad = VectorXd::Zero(k);
  for (long mask = 0; mask < (1L << k); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < k; ++i) {
      if (mask & (1L << i)) {
        idx.push_back(i);
      }
    }
    SubsetIndex subset(std::move(idx));
    double q = std::exp(pp::log_pmf(post, subset));
    double value = bound_fn(subset);
    expectation += q * value;
    grad += q * value * pp::score(post, subset);
  }
  return {expectation, grad};
}

Var masked_bound(Tape &t, const gp::ModelLeaves &ml, Var b, const MatrixXd &x,
                 const VectorXd &y) {
  const double n = static_cast<double>(x.rows());
  const int k = static_cast<int>(ml.z.rows());
  if (b.rows() != k || b.cols() != 1) {
    throw ad::ShapeError("masked_bound: mask must be K x 1");
  }
  Var kmm = kernel::gram(t, ml.log_lengthscales, ml.log_variance, ml.z, ml.z);
  Var kmn = kernel::gram(t, ml.log_lengthscales, ml.log_variance, ml.z,
                         t.constant(x));
  // Masked kernel blocks: off-diagonal b_i b_j kappa_ij, diagonal
  // b_k (kappa_kk - 1) + 1, cross rows scaled by b. Data-side entries keep
  // the unmasked kernel.
  Var ones = t.constant(Matrix::Ones(k, 1));
  Var kd = t.diag_part(kmm);
  Var outer = b * t.transpose(b);
  Var diag_fix = t.cmul(b, kd - ones) + ones - t.cmul(t.square(b), kd);
  Var kmm_hat = t.cmul(kmm, outer) + t.diag_embed(diag_fix);
  Var kmn_hat = t.diag_embed(b) * kmn;

  Var l = t.cholesky(kmm_hat);
  Var a = t.tri_solve_lower(l, kmn_hat);
  Var sig2 = t.exp(ml.log_noise);
  Var inv_sig2 = t.exp(-ml.log_noise);
  Var bmat = a * t.transpose(a) +
             t.cmul(sig2, t.constant(Matrix::Identity(k, k)));
  Var lb = t.cholesky(bmat);
  Var logdet = t.constant(2.0) * t.sum(t.log(t.diag_part(lb))) +
               t.constant(n - k) * ml.log_noise;
  Var c = t.tri_solve_lower(lb, a * t.constant(Matrix(y)));
  Var quad =
      t.cmul(inv_sig2, t.constant(y.squaredNorm()) - t.sum(t.square(c)));
  Var loglik = t.constant(-0.5) * (t.constant(n * kLog2Pi) + logdet + quad);
  Var trace_term =
      t.constant(0.5) *
      t.cmul(inv_sig2,
             t.constant(n) * t.exp(ml.log_variance) - t.sum(t.square(a)));
  return loglik - trace_term;
}

double masked_bound(const SvgpModel &model, const VectorXd &b,
                    const MatrixXd &x, const VectorXd &y) {
  if (model.mode != BoundMode::Collapsed) {
    throw std::invalid_argument("masked_bound: requires the collapsed bound");
  }
  if (b.size() != model.candidate_count()) {
    throw ad::ShapeError("masked_bound: mask length mismatch");
  }
  if ((b.array() < 0.0).any() || (b.array() > 1.0).any()) {
    throw std::invalid_argument("masked_bound: mask entries must lie in [0, 1]");
  }
  Tape t;
  gp::ModelLeaves ml = gp::leaves(t, model);
  return masked_bound(t, ml, t.constant(Matrix(b)), x, y).scalar();
}

ConcreteConfig::ConcreteConfig(double temperature_, double temperature_final_,
                               double decay_per_epoch_)
    : temperature(temperature_), temperature_final(temperature_final_),
      decay_per_epoch(decay_per_epoch_) {
  if (!(temperature > 0.0) || !(temperature_final > 0.0) ||
      !(decay_per_epoch > 0.0) || decay_per_epoch > 1.0) {
    throw std::invalid_argument("ConcreteConfig: invalid temperature schedule");
  }
}

double ConcreteConfig::annealed(int epoch) const {
  return std::max(temperature_final,
                  temperature * std::pow(decay_per_epoch, epoch));
}

ConcreteResult concrete_gradient(const SvgpModel &model,
                                 const pp::PppPosterior &post,
                                 const ConcreteConfig &config,
                                 const MatrixXd &x, const VectorXd &y,
                                 std::mt19937_64 &rng) {
  if (model.mode != BoundMode::Collapsed) {
    throw std::invalid_argument("concrete_gradient: requires the collapsed bound");
  }
  if (!(config.temperature > 0.0)) {
    throw std::invalid_argument("concrete_gradient: temperature must be positive");
  }
  const int k = post.size();
  if (k != model.candidate_count()) {
    throw std::invalid_argument("concrete_gradient: posterior size mismatch");
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix noise(k, 1);
  for (int i = 0; i < k; ++i) {
    double u = unif(rng);
    noise(i, 0) = std::log(u) - std::log1p(-u);
  }

  Tape t;
  Var logits = t.parameter("ppp_logits", Matrix(post.logits));
  Var b = t.logistic(t.constant(1.0 / config.temperature) *
                     (logits + t.constant(noise)));
  gp::ModelLeaves ml = gp::leaves(t, model);
  Var bound = masked_bound(t, ml, b, x, y);

  ConcreteResult result;
  result.bound = bound.scalar();
  result.relaxed_mask = b.value().col(0);
  GradientMap grads = t.backward(bound);
  result.logit_grad = grads.at("ppp_logits").col(0);
  grads.erase("ppp_logits");
  result.param_grads = std::move(grads);
  return result;
}

} // namespace est
} // namespace asvgp
