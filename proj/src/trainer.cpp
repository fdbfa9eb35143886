#include "asvgp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace asvgp {
namespace train {

using ad::GradientMap;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::map<std::string, MatrixXd> pack(const SvgpModel &model) {
  std::map<std::string, MatrixXd> p;
  p["log_lengthscales"] = model.kernel.log_lengthscales;
  p["log_variance"] = MatrixXd::Constant(1, 1, model.kernel.log_variance);
  p["log_noise"] = MatrixXd::Constant(1, 1, model.log_noise_variance);
  p["z"] = model.inducing_candidates;
  if (model.mode == BoundMode::Uncollapsed) {
    p["var_mean"] = model.var_mean;
    p["var_factor_strict"] = model.var_factor_strict;
    p["var_factor_log_diag"] = model.var_factor_log_diag;
  }
  return p;
}

void unpack(const std::map<std::string, MatrixXd> &p, SvgpModel &model) {
  model.kernel.log_lengthscales = p.at("log_lengthscales").col(0);
  model.kernel.log_variance = p.at("log_variance")(0, 0);
  model.log_noise_variance = p.at("log_noise")(0, 0);
  model.inducing_candidates = p.at("z");
  if (model.mode == BoundMode::Uncollapsed) {
    model.var_mean = p.at("var_mean").col(0);
    model.var_factor_strict = p.at("var_factor_strict");
    model.var_factor_log_diag = p.at("var_factor_log_diag").col(0);
  }
}

GradientMap negate(GradientMap grads) {
  for (auto &[name, g] : grads) {
    g = -g;
  }
  return grads;
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

} // namespace

void TrainConfig::validate(int n) const {
  if (n_pre < 0 || n_ppp < 0 || n_post < 0) {
    throw std::invalid_argument("TrainConfig: epoch counts must be non-negative");
  }
  if (!(lr_main > 0.0) || !(lr_logits > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  }
  if (mc_samples < 1) {
    throw std::invalid_argument("TrainConfig: need at least one MC sample");
  }
  if (!(baseline_decay > 0.0 && baseline_decay < 1.0)) {
    throw std::invalid_argument("TrainConfig: baseline decay must lie in (0, 1)");
  }
  if (alpha < 0.0) {
    throw std::invalid_argument("TrainConfig: alpha must be non-negative");
  }
  if (minibatch < 0 || minibatch > n) {
    throw std::invalid_argument("TrainConfig: minibatch size out of range");
  }
}

std::vector<std::string> adam_step(std::map<std::string, MatrixXd> &params,
                                   const GradientMap &grads, AdamState &state,
                                   double lr) {
  std::vector<std::string> skipped;
  for (const auto &[name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) {
      continue;
    }
    MatrixXd &p = it->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ad::ShapeError("adam_step: gradient shape mismatch for " + name);
    }
    if (!g.allFinite()) {
      skipped.push_back(name);
      continue;
    }
    MatrixXd &m = state.m.try_emplace(name, MatrixXd::Zero(p.rows(), p.cols()))
                      .first->second;
    MatrixXd &v = state.v.try_emplace(name, MatrixXd::Zero(p.rows(), p.cols()))
                      .first->second;
    long step = ++state.steps[name];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = (state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square())
            .matrix();
    double c1 = 1.0 - std::pow(state.beta1, step);
    double c2 = 1.0 - std::pow(state.beta2, step);
    p.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
  return skipped;
}

SubsetIndex extract_subset(const pp::PppPosterior &post, ExtractionMode mode,
                           std::mt19937_64 &rng) {
  SubsetIndex subset;
  if (mode == ExtractionMode::Threshold) {
    std::vector<int> idx;
    VectorXd lam = post.probabilities();
    for (int i = 0; i < post.size(); ++i) {
      if (lam(i) >= 0.5) {
        idx.push_back(i);
      }
    }
    subset = SubsetIndex(std::move(idx));
  } else {
    subset = pp::sample(post, rng);
  }
  if (subset.empty()) {
    int best = 0;
    post.probabilities().maxCoeff(&best);
    subset = SubsetIndex(std::vector<int>{best});
  }
  return subset;
}

std::vector<std::vector<int>> minibatch_iter(int n, int size, BoundMode mode,
                                             std::mt19937_64 &rng) {
  if (size <= 0 || size >= n) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return {all};
  }
  if (mode == BoundMode::Collapsed) {
    throw std::invalid_argument(
        "minibatch_iter: the collapsed bound does not support subsampling");
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += size) {
    int stop = std::min(start + size, n);
    batches.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return batches;
}

namespace {

struct TrainLoop {
  SvgpModel &model;
  const MatrixXd &x;
  const VectorXd &y;
  const TrainConfig &config;
  TrainHistory &history;
  std::mt19937_64 &rng;
  AdamState gp_state;
  int epoch_counter = 0;

  int n() const { return static_cast<int>(x.rows()); }

  void log_skipped(const std::vector<std::string> &names, const char *phase) {
    for (const auto &name : names) {
      history.events.push_back(std::string(phase) + " epoch " +
                               std::to_string(epoch_counter) +
                               ": non-finite gradient for " + name +
                               ", step skipped");
    }
  }

  // One GP-only epoch on a fixed subset; returns the mean (scaled) bound.
  double gp_epoch(const SubsetIndex &subset, const char *phase) {
    auto params = pack(model);
    double acc = 0.0;
    auto batches = minibatch_iter(n(), config.minibatch, model.mode, rng);
    for (const auto &batch : batches) {
      MatrixXd xb = x(batch, Eigen::all);
      VectorXd yb = y(batch);
      double scale = static_cast<double>(n()) / batch.size();
      Tape t;
      auto ml = gp::leaves(t, model);
      Var b = gp::bound(t, ml, model.mode, subset, xb, yb, scale);
      acc += b.scalar();
      log_skipped(adam_step(params, negate(t.backward(b)), gp_state,
                            config.lr_main),
                  phase);
      unpack(params, model);
    }
    return acc / batches.size();
  }

  void record(const char *phase, double objective, double kl, double card,
              double wall_ms) {
    history.records.push_back(
        {epoch_counter, phase, objective, kl, card, wall_ms});
    ++epoch_counter;
  }
};

} // namespace

TrainResult run_training(SvgpModel model, const MatrixXd &x, const VectorXd &y,
                         const TrainConfig &config) {
  config.validate(static_cast<int>(x.rows()));
  const int k = model.candidate_count();
  TrainResult result;
  std::mt19937_64 rng(config.seed);
  TrainLoop loop{model, x, y, config, result.history, rng};

  pp::PppPosterior post = pp::PppPosterior::init(k, 0.5);
  pp::PriorSpec prior(config.alpha, k);
  est::BaselineState baseline(config.baseline_decay);
  AdamState logit_state;
  SubsetIndex full = SubsetIndex::all(k);

  auto guarded = [&](const char *phase, auto &&body) {
    try {
      body();
    } catch (const std::exception &e) {
      throw std::runtime_error(std::string("run_training: ") + phase +
                               " phase, epoch " +
                               std::to_string(loop.epoch_counter) + ": " +
                               e.what());
    }
  };

  for (int epoch = 0; epoch < config.n_pre; ++epoch) {
    guarded("pre", [&] {
      double t0 = now_ms();
      double objective = loop.gp_epoch(full, "pre");
      loop.record("pre", objective, 0.0, static_cast<double>(k), now_ms() - t0);
    });
  }

  for (int epoch = 0; epoch < config.n_ppp; ++epoch) {
    guarded("ppp", [&] {
      double t0 = now_ms();
      auto params = pack(model);
      auto batches = minibatch_iter(loop.n(), config.minibatch, model.mode, rng);
      double acc = 0.0;
      double kl = 0.0;
      for (const auto &batch : batches) {
        MatrixXd xb = x(batch, Eigen::all);
        VectorXd yb = y(batch);
        double scale = static_cast<double>(loop.n()) / batch.size();
        auto bound_fn = [&](const SubsetIndex &subset) {
          Tape t;
          auto ml = gp::leaves(t, model);
          Var b = gp::bound(t, ml, model.mode, subset, xb, yb, scale);
          return std::make_pair(b.scalar(), t.backward(b));
        };
        auto sf = est::sf_gradient(post, bound_fn, config.mc_samples, baseline,
                                   rng);

        Tape tk;
        Var logits_leaf = tk.parameter("ppp_logits", ad::Matrix(post.logits));
        Var kl_var = pp::kl_to_prior(tk, logits_leaf, prior);
        kl = kl_var.scalar();
        VectorXd kl_grad = tk.backward(kl_var).at("ppp_logits").col(0);

        // Ascend the augmented objective E_q[L] - KL.
        VectorXd logit_grad = sf.logit_grad - kl_grad;
        std::map<std::string, MatrixXd> logit_param{{"ppp_logits", post.logits}};
        GradientMap logit_gmap{{"ppp_logits", ad::Matrix(-logit_grad)}};
        loop.log_skipped(
            adam_step(logit_param, logit_gmap, logit_state, config.lr_logits),
            "ppp");
        post.logits = logit_param.at("ppp_logits").col(0);

        GradientMap param_grads = negate(std::move(sf.param_grads));
        if (!config.optimize_z_during_ppp) {
          param_grads.erase("z");
        }
        loop.log_skipped(adam_step(params, param_grads, loop.gp_state,
                                   config.lr_main),
                         "ppp");
        unpack(params, model);
        acc += sf.mean_bound - kl;
      }
      auto [card, card_var] = pp::cardinality_stats(post);
      (void)card_var;
      loop.record("ppp", acc / batches.size(), kl, card, now_ms() - t0);
    });
  }

  result.subset = extract_subset(post, config.extraction, rng);

  for (int epoch = 0; epoch < config.n_post; ++epoch) {
    guarded("post", [&] {
      double t0 = now_ms();
      double objective = loop.gp_epoch(result.subset, "post");
      loop.record("post", objective, 0.0,
                  static_cast<double>(result.subset.size()), now_ms() - t0);
    });
  }

  result.model = std::move(model);
  result.posterior = std::move(post);
  return result;
}

} // namespace train
} // namespace asvgp
