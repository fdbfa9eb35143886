#include "asvgp/dgp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace asvgp {
namespace dgp {

using ad::GradientMap;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kVarFloor = 1e-10;

std::vector<int> all_cols(Eigen::Index d) {
  std::vector<int> c(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    c[i] = static_cast<int>(i);
  }
  return c;
}

std::string leaf_prefix(int l) { return "L" + std::to_string(l) + "_"; }

std::string dim_prefix(int l, int d) {
  return leaf_prefix(l) + "d" + std::to_string(d) + "_";
}

} // namespace

MatrixXd DgpLayer::var_factor(int d) const {
  const int k = candidate_count();
  MatrixXd f = MatrixXd::Zero(k, k);
  f.triangularView<Eigen::StrictlyLower>() = var_factor_strict[d];
  f.diagonal() = var_factor_log_diag[d].array().exp();
  return f;
}

MatrixXd DgpLayer::var_cov(int d) const {
  MatrixXd f = var_factor(d);
  return f * f.transpose();
}

void DgpLayer::reset_variational_to_prior() {
  const int k = candidate_count();
  MatrixXd l =
      gp::cholesky_jitter(kernel::gram(kernel, candidates, candidates));
  var_mean.assign(output_dim, VectorXd::Zero(k));
  var_factor_strict.assign(output_dim, MatrixXd::Zero(k, k));
  var_factor_log_diag.assign(output_dim, l.diagonal().array().log());
  for (int d = 0; d < output_dim; ++d) {
    var_factor_strict[d].triangularView<Eigen::StrictlyLower>() = l;
  }
}

int DgpModel::layer_input_dim(int l) const {
  if (l == 0) {
    return observed_dim;
  }
  int width = layers[l - 1].output_dim;
  return width + (concat_input && l == 1 ? observed_dim : 0);
}

DgpModel DgpModel::init(std::vector<MatrixXd> candidates,
                        const std::vector<int> &widths, int observed_dim,
                        bool concat_input) {
  if (candidates.empty() || candidates.size() != widths.size()) {
    throw std::invalid_argument("DgpModel: need one candidate set per layer");
  }
  if (widths.back() != 1) {
    throw std::invalid_argument("DgpModel: last layer width must be 1");
  }
  DgpModel model;
  model.observed_dim = observed_dim;
  model.concat_input = concat_input;
  for (std::size_t l = 0; l < candidates.size(); ++l) {
    if (widths[l] < 1 || widths[l] > 3) {
      throw std::invalid_argument("DgpModel: layer widths must lie in [1, 3]");
    }
    DgpLayer layer;
    layer.candidates = std::move(candidates[l]);
    layer.output_dim = widths[l];
    model.layers.push_back(std::move(layer));
    int expected = model.layer_input_dim(static_cast<int>(l));
    if (model.layers[l].input_dim() != expected) {
      throw std::invalid_argument(
          "DgpModel: layer " + std::to_string(l) + " candidates have " +
          std::to_string(model.layers[l].input_dim()) + " columns, expected " +
          std::to_string(expected));
    }
    model.layers[l].kernel = KernelParams::unit(expected);
    model.layers[l].reset_variational_to_prior();
  }
  return model;
}

LayerOutput layer_propagate(const DgpLayer &layer, const SubsetIndex &subset,
                            const MatrixXd &inputs, std::mt19937_64 &rng) {
  if (subset.empty()) {
    throw std::invalid_argument("layer_propagate: empty subset");
  }
  subset.validate(layer.candidate_count());
  const Eigen::Index n = inputs.rows();
  LayerOutput out;
  out.samples.resize(n, layer.output_dim);
  out.mean.resize(n, layer.output_dim);
  out.var.resize(n, layer.output_dim);
  SvgpModel view;
  view.inducing_candidates = layer.candidates;
  view.kernel = layer.kernel;
  std::normal_distribution<double> g;
  for (int d = 0; d < layer.output_dim; ++d) {
    VectorXd m_sub = layer.var_mean[d](subset.indices);
    MatrixXd s_full = layer.var_cov(d);
    MatrixXd s_sub = s_full(subset.indices, subset.indices);
    auto [mean, var] = gp::predict(view, subset, m_sub, s_sub, inputs);
    out.mean.col(d) = mean;
    out.var.col(d) = var;
    for (Eigen::Index i = 0; i < n; ++i) {
      out.samples(i, d) = mean(i) + std::sqrt(std::max(var(i), 0.0)) * g(rng);
    }
  }
  return out;
}

DgpLeaves leaves(Tape &t, const DgpModel &model) {
  DgpLeaves ml;
  for (int l = 0; l < model.depth(); ++l) {
    const DgpLayer &layer = model.layers[l];
    DgpLeaves::Layer lv;
    auto kl = kernel::leaves(t, layer.kernel, leaf_prefix(l));
    lv.log_lengthscales = kl.log_lengthscales;
    lv.log_variance = kl.log_variance;
    lv.z = t.parameter(leaf_prefix(l) + "z", layer.candidates);
    for (int d = 0; d < layer.output_dim; ++d) {
      lv.var_mean.push_back(
          t.parameter(dim_prefix(l, d) + "var_mean", layer.var_mean[d]));
      lv.var_factor_strict.push_back(t.parameter(
          dim_prefix(l, d) + "var_factor_strict", layer.var_factor_strict[d]));
      lv.var_factor_log_diag.push_back(
          t.parameter(dim_prefix(l, d) + "var_factor_log_diag",
                      layer.var_factor_log_diag[d]));
    }
    ml.layers.push_back(std::move(lv));
  }
  ml.log_noise = t.parameter(
      "log_noise", Matrix::Constant(1, 1, model.log_noise_variance));
  return ml;
}

namespace {

// Per-dimension conditional of one layer on the tape. Empty subsets take
// the prior limit: zero mean, full kernel variance, zero KL.
struct AdConditional {
  Var mu;  // N x 1
  Var var; // N x 1
  Var kl;  // 1 x 1
};

AdConditional layer_conditional(Tape &t, const DgpLeaves::Layer &lv,
                                const SubsetIndex &subset, Var f_in, int dim,
                                Eigen::Index n) {
  AdConditional out;
  Var kdiag = kernel::gram_diag(t, lv.log_variance, n);
  if (subset.empty()) {
    out.mu = t.constant(Matrix::Zero(n, 1));
    out.var = kdiag;
    out.kl = t.constant(Matrix::Zero(1, 1));
    return out;
  }
  const int m = subset.size();
  Var z = t.gather(lv.z, subset.indices, all_cols(lv.z.cols()));
  Var kmm = kernel::gram(t, lv.log_lengthscales, lv.log_variance, z, z);
  Var kmf = kernel::gram(t, lv.log_lengthscales, lv.log_variance, z, f_in);
  Var l = t.cholesky(kmm);
  Var a0 = t.tri_solve_lower(l, kmf);
  Var a = t.tri_solve_lower_transpose(l, a0); // Kmm^-1 Kmf

  const int k = static_cast<int>(lv.var_mean[dim].rows());
  Matrix strict_mask = Matrix::Zero(k, k);
  strict_mask.triangularView<Eigen::StrictlyLower>().setConstant(1.0);
  Var fct = t.cmul(t.constant(strict_mask), lv.var_factor_strict[dim]) +
            t.diag_embed(t.exp(lv.var_factor_log_diag[dim]));
  Var s_full = fct * t.transpose(fct);
  Var s_sub = t.gather(s_full, subset.indices, subset.indices);
  std::vector<int> zero_col{0};
  Var m_sub = t.gather(lv.var_mean[dim], subset.indices, zero_col);

  out.mu = t.transpose(a) * m_sub;
  Var ones_row = t.constant(Matrix::Ones(1, m));
  Var q1 = t.transpose(ones_row * t.cmul(kmf, a));
  Var q2 = t.transpose(ones_row * t.cmul(a, s_sub * a));
  out.var = t.clamp(kdiag - q1 + q2, kVarFloor, 1e300);

  Var w0 = t.tri_solve_lower(l, s_sub);
  Var w1 = t.tri_solve_lower_transpose(l, w0);
  Var alpha = t.tri_solve_lower(l, m_sub);
  Var logdet_kmm = t.constant(2.0) * t.sum(t.log(t.diag_part(l)));
  Var logdet_s = ad::logdet_spd(t, s_sub);
  out.kl = t.constant(0.5) *
           (t.trace(w1) + t.sum(t.square(alpha)) + t.constant(-1.0 * m) +
            logdet_kmm - logdet_s);
  return out;
}

// [f, x_const]: widen f with a selector and add the shifted constant block.
Var concat_constant(Tape &t, Var f, const MatrixXd &x) {
  const Eigen::Index dl = f.cols();
  const Eigen::Index dr = x.cols();
  Matrix selector = Matrix::Zero(dl, dl + dr);
  selector.leftCols(dl).setIdentity();
  Matrix shifted = Matrix::Zero(x.rows(), dl + dr);
  shifted.rightCols(dr) = x;
  return f * t.constant(selector) + t.constant(shifted);
}

} // namespace

std::vector<MatrixXd> sample_path_noise(const DgpModel &model, Eigen::Index n,
                                        std::mt19937_64 &rng, int depth_limit) {
  const int effective =
      depth_limit < 0 ? model.depth() : std::min(depth_limit + 1, model.depth());
  std::normal_distribution<double> g;
  std::vector<MatrixXd> noise;
  for (int l = 0; l + 1 < effective; ++l) {
    MatrixXd e(n, model.layers[l].output_dim);
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      for (Eigen::Index j = 0; j < e.cols(); ++j) {
        e(i, j) = g(rng);
      }
    }
    noise.push_back(std::move(e));
  }
  return noise;
}

Var dgp_elbo(Tape &t, const DgpLeaves &ml, const DgpModel &model,
             const std::vector<SubsetIndex> &subsets, const MatrixXd &x,
             const VectorXd &y, double scale,
             const std::vector<MatrixXd> &path_noise, int depth_limit) {
  const int effective =
      depth_limit < 0 ? model.depth() : std::min(depth_limit + 1, model.depth());
  if (static_cast<int>(subsets.size()) < effective) {
    throw std::invalid_argument("dgp_elbo: one subset per layer required");
  }
  if (static_cast<int>(path_noise.size()) + 1 < effective) {
    throw std::invalid_argument("dgp_elbo: missing path noise for hidden layers");
  }
  const Eigen::Index n = x.rows();
  const double nd = static_cast<double>(n);

  Var f = t.constant(x);
  Var kl_total = t.constant(Matrix::Zero(1, 1));
  Var ell;
  for (int l = 0; l < effective; ++l) {
    if (l == 1 && model.concat_input) {
      f = concat_constant(t, f, x);
    }
    const DgpLayer &layer = model.layers[l];
    subsets[l].validate(layer.candidate_count());
    const bool likelihood_layer = l == effective - 1;
    if (likelihood_layer) {
      // Only the first output dimension feeds the likelihood; the full
      // model's last layer has width 1 by construction.
      auto cond = layer_conditional(t, ml.layers[l], subsets[l], f, 0, n);
      kl_total = kl_total + cond.kl;
      Var inv_sig2 = t.exp(-ml.log_noise);
      Var resid2 = t.square(cond.mu - t.constant(Matrix(y)));
      ell = t.constant(scale) *
            (t.constant(-0.5 * nd) * (t.constant(kLog2Pi) + ml.log_noise) +
             t.constant(-0.5) * t.cmul(inv_sig2, t.sum(cond.var + resid2)));
    } else {
      const MatrixXd &eps = path_noise[l];
      if (eps.rows() != n || eps.cols() != layer.output_dim) {
        throw ad::ShapeError("dgp_elbo: path noise shape mismatch");
      }
      Var next;
      for (int d = 0; d < layer.output_dim; ++d) {
        auto cond = layer_conditional(t, ml.layers[l], subsets[l], f, d, n);
        kl_total = kl_total + cond.kl;
        Var sample =
            cond.mu + t.cmul(t.sqrt(cond.var), t.constant(Matrix(eps.col(d))));
        Matrix unit_row = Matrix::Zero(1, layer.output_dim);
        unit_row(0, d) = 1.0;
        Var placed = sample * t.constant(unit_row);
        next = d == 0 ? placed : next + placed;
      }
      f = next;
    }
  }
  return ell - kl_total;
}

double dgp_elbo(const DgpModel &model, const std::vector<SubsetIndex> &subsets,
                const MatrixXd &x, const VectorXd &y, double scale,
                std::mt19937_64 &rng) {
  auto noise = sample_path_noise(model, x.rows(), rng);
  Tape t;
  DgpLeaves ml = leaves(t, model);
  return dgp_elbo(t, ml, model, subsets, x, y, scale, noise).scalar();
}

std::pair<VectorXd, VectorXd> dgp_predict(const DgpModel &model,
                                          const std::vector<SubsetIndex> &subsets,
                                          const MatrixXd &x_test, int n_samples,
                                          std::mt19937_64 &rng) {
  if (n_samples < 1) {
    throw std::invalid_argument("dgp_predict: need at least one sample");
  }
  if (static_cast<int>(subsets.size()) != model.depth()) {
    throw std::invalid_argument("dgp_predict: one subset per layer required");
  }
  const Eigen::Index n = x_test.rows();
  VectorXd mean_acc = VectorXd::Zero(n);
  VectorXd second_acc = VectorXd::Zero(n);
  VectorXd var_acc = VectorXd::Zero(n);
  for (int s = 0; s < n_samples; ++s) {
    MatrixXd f = x_test;
    for (int l = 0; l + 1 < model.depth(); ++l) {
      if (l == 1 && model.concat_input) {
        MatrixXd widened(n, f.cols() + x_test.cols());
        widened << f, x_test;
        f = widened;
      }
      f = layer_propagate(model.layers[l], subsets[l], f, rng).samples;
    }
    if (model.depth() > 1 && model.concat_input && model.depth() == 2) {
      MatrixXd widened(n, f.cols() + x_test.cols());
      widened << f, x_test;
      f = widened;
    }
    const int top = model.depth() - 1;
    LayerOutput out = layer_propagate(model.layers[top], subsets[top], f, rng);
    mean_acc += out.mean.col(0);
    second_acc += out.mean.col(0).array().square().matrix();
    var_acc += out.var.col(0);
  }
  VectorXd mean = mean_acc / n_samples;
  VectorXd var = (var_acc + second_acc) / n_samples -
                 mean.array().square().matrix();
  var = var.cwiseMax(0.0);
  return {mean, var};
}

namespace {

std::map<std::string, MatrixXd> pack(const DgpModel &model) {
  std::map<std::string, MatrixXd> p;
  for (int l = 0; l < model.depth(); ++l) {
    const DgpLayer &layer = model.layers[l];
    p[leaf_prefix(l) + "log_lengthscales"] = layer.kernel.log_lengthscales;
    p[leaf_prefix(l) + "log_variance"] =
        MatrixXd::Constant(1, 1, layer.kernel.log_variance);
    p[leaf_prefix(l) + "z"] = layer.candidates;
    for (int d = 0; d < layer.output_dim; ++d) {
      p[dim_prefix(l, d) + "var_mean"] = layer.var_mean[d];
      p[dim_prefix(l, d) + "var_factor_strict"] = layer.var_factor_strict[d];
      p[dim_prefix(l, d) + "var_factor_log_diag"] = layer.var_factor_log_diag[d];
    }
  }
  p["log_noise"] = MatrixXd::Constant(1, 1, model.log_noise_variance);
  return p;
}

void unpack(const std::map<std::string, MatrixXd> &p, DgpModel &model) {
  for (int l = 0; l < model.depth(); ++l) {
    DgpLayer &layer = model.layers[l];
    layer.kernel.log_lengthscales =
        p.at(leaf_prefix(l) + "log_lengthscales").col(0);
    layer.kernel.log_variance = p.at(leaf_prefix(l) + "log_variance")(0, 0);
    layer.candidates = p.at(leaf_prefix(l) + "z");
    for (int d = 0; d < layer.output_dim; ++d) {
      layer.var_mean[d] = p.at(dim_prefix(l, d) + "var_mean").col(0);
      layer.var_factor_strict[d] = p.at(dim_prefix(l, d) + "var_factor_strict");
      layer.var_factor_log_diag[d] =
          p.at(dim_prefix(l, d) + "var_factor_log_diag").col(0);
    }
  }
  model.log_noise_variance = p.at("log_noise")(0, 0);
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

// Flat <-> per-layer subset bookkeeping for the product point process.
struct FlatIndexer {
  std::vector<int> offsets; // per layer
  int total = 0;

  explicit FlatIndexer(const DgpModel &model) {
    for (int l = 0; l < model.depth(); ++l) {
      offsets.push_back(total);
      total += model.layers[l].candidate_count();
    }
  }

  std::vector<SubsetIndex> split(const SubsetIndex &flat) const {
    std::vector<SubsetIndex> out;
    std::size_t cursor = 0;
    for (std::size_t l = 0; l < offsets.size(); ++l) {
      int lo = offsets[l];
      int hi = l + 1 < offsets.size() ? offsets[l + 1] : total;
      std::vector<int> idx;
      while (cursor < flat.indices.size() && flat.indices[cursor] < hi) {
        idx.push_back(flat.indices[cursor] - lo);
        ++cursor;
      }
      out.emplace_back(std::move(idx));
    }
    return out;
  }

  pp::PppPosterior layer_view(const pp::PppPosterior &flat, int l) const {
    int lo = offsets[l];
    int hi = l + 1 < static_cast<int>(offsets.size()) ? offsets[l + 1] : total;
    pp::PppPosterior view;
    view.logits = flat.logits.segment(lo, hi - lo);
    return view;
  }
};

} // namespace

DgpTrainResult dgp_train(DgpModel model, const MatrixXd &x, const VectorXd &y,
                         const train::TrainConfig &config) {
  config.validate(static_cast<int>(x.rows()));
  const int n = static_cast<int>(x.rows());
  const int depth = model.depth();
  DgpTrainResult result;
  std::mt19937_64 rng(config.seed);
  train::AdamState gp_state;
  train::AdamState logit_state;
  int epoch_counter = 0;

  FlatIndexer indexer(model);
  pp::PppPosterior flat_post = pp::PppPosterior::init(indexer.total, 0.5);
  std::vector<pp::PriorSpec> priors;
  for (int l = 0; l < depth; ++l) {
    priors.emplace_back(config.alpha, model.layers[l].candidate_count());
  }
  est::BaselineState baseline(config.baseline_decay);

  std::vector<SubsetIndex> full_subsets;
  for (int l = 0; l < depth; ++l) {
    full_subsets.push_back(SubsetIndex::all(model.layers[l].candidate_count()));
  }

  auto log_skipped = [&](const std::vector<std::string> &names,
                         const char *phase) {
    for (const auto &name : names) {
      result.history.events.push_back(std::string(phase) + " epoch " +
                                      std::to_string(epoch_counter) +
                                      ": non-finite gradient for " + name +
                                      ", step skipped");
    }
  };

  auto record = [&](const char *phase, double objective, double kl,
                    double card, double wall) {
    result.history.records.push_back(
        {epoch_counter, phase, objective, kl, card, wall});
    ++epoch_counter;
  };

  // One GP-only epoch over the given subsets; only parameters whose names
  // pass the filter are updated. depth_limit truncates the model for the
  // layer-wise pre-training phase.
  auto gp_epoch = [&](const std::vector<SubsetIndex> &subsets, int depth_limit,
                      const std::function<bool(const std::string &)> &filter,
                      const char *phase) {
    auto params = pack(model);
    auto batches = train::minibatch_iter(n, config.minibatch,
                                         BoundMode::Uncollapsed, rng);
    double acc = 0.0;
    for (const auto &batch : batches) {
      MatrixXd xb = x(batch, Eigen::all);
      VectorXd yb = y(batch);
      double scale = static_cast<double>(n) / batch.size();
      auto noise = sample_path_noise(model, xb.rows(), rng, depth_limit);
      Tape t;
      DgpLeaves ml = leaves(t, model);
      Var b = dgp_elbo(t, ml, model, subsets, xb, yb, scale, noise, depth_limit);
      acc += b.scalar();
      GradientMap grads = negate(t.backward(b));
      for (auto it = grads.begin(); it != grads.end();) {
        it = filter(it->first) ? std::next(it) : grads.erase(it);
      }
      log_skipped(train::adam_step(params, grads, gp_state, config.lr_main),
                  phase);
      unpack(params, model);
    }
    return acc / batches.size();
  };

  auto all_params = [](const std::string &) { return true; };

  // Phase 1: sequential layer-wise pre-training, downstream layers replaced
  // by an identity pass-through (the truncated model's last layer feeds the
  // likelihood directly).
  for (int l = 0; l < depth; ++l) {
    std::string prefix = leaf_prefix(l);
    auto filter = [&prefix](const std::string &name) {
      return name.rfind(prefix, 0) == 0 || name == "log_noise";
    };
    for (int epoch = 0; epoch < config.n_pre; ++epoch) {
      double t0 = now_ms();
      double objective = gp_epoch(full_subsets, l, filter, "pre");
      record("pre", objective, 0.0, static_cast<double>(indexer.total),
             now_ms() - t0);
    }
  }

  // Phase 2: joint point-process phase over the product posterior.
  for (int epoch = 0; epoch < config.n_ppp; ++epoch) {
    double t0 = now_ms();
    auto params = pack(model);
    auto batches = train::minibatch_iter(n, config.minibatch,
                                         BoundMode::Uncollapsed, rng);
    double acc = 0.0;
    double kl_value = 0.0;
    for (const auto &batch : batches) {
      MatrixXd xb = x(batch, Eigen::all);
      VectorXd yb = y(batch);
      double scale = static_cast<double>(n) / batch.size();
      auto bound_fn = [&](const SubsetIndex &flat) {
        auto subsets = indexer.split(flat);
        auto noise = sample_path_noise(model, xb.rows(), rng);
        Tape t;
        DgpLeaves ml = leaves(t, model);
        Var b = dgp_elbo(t, ml, model, subsets, xb, yb, scale, noise);
        return std::make_pair(b.scalar(), t.backward(b));
      };
      auto sf = est::sf_gradient(flat_post, bound_fn, config.mc_samples,
                                 baseline, rng);

      Tape tk;
      Var logits_leaf = tk.parameter("ppp_logits", Matrix(flat_post.logits));
      Var kl_var;
      for (int l = 0; l < depth; ++l) {
        int lo = indexer.offsets[l];
        int hi = l + 1 < depth ? indexer.offsets[l + 1] : indexer.total;
        std::vector<int> rows(hi - lo);
        std::iota(rows.begin(), rows.end(), lo);
        Var slice = tk.gather(logits_leaf, rows, std::vector<int>{0});
        Var kl_l = pp::kl_to_prior(tk, slice, priors[l]);
        kl_var = l == 0 ? kl_l : kl_var + kl_l;
      }
      kl_value = kl_var.scalar();
      VectorXd kl_grad = tk.backward(kl_var).at("ppp_logits").col(0);

      VectorXd logit_grad = sf.logit_grad - kl_grad;
      std::map<std::string, MatrixXd> logit_param{
          {"ppp_logits", flat_post.logits}};
      GradientMap logit_gmap{{"ppp_logits", Matrix(-logit_grad)}};
      log_skipped(train::adam_step(logit_param, logit_gmap, logit_state,
                                   config.lr_logits),
                  "ppp");
      flat_post.logits = logit_param.at("ppp_logits").col(0);

      GradientMap param_grads = negate(std::move(sf.param_grads));
      if (!config.optimize_z_during_ppp) {
        for (int l = 0; l < depth; ++l) {
          param_grads.erase(leaf_prefix(l) + "z");
        }
      }
      log_skipped(train::adam_step(params, param_grads, gp_state,
                                   config.lr_main),
                  "ppp");
      unpack(params, model);
      acc += sf.mean_bound - kl_value;
    }
    auto [card, card_var] = pp::cardinality_stats(flat_post);
    (void)card_var;
    record("ppp", acc / batches.size(), kl_value, card, now_ms() - t0);
  }

  // Per-layer extraction, each guaranteed non-empty.
  for (int l = 0; l < depth; ++l) {
    result.subsets.push_back(train::extract_subset(
        indexer.layer_view(flat_post, l), config.extraction, rng));
  }

  // Phase 3: joint GP training on the extracted subsets.
  for (int epoch = 0; epoch < config.n_post; ++epoch) {
    double t0 = now_ms();
    double objective = gp_epoch(result.subsets, -1, all_params, "post");
    double card = 0.0;
    for (const auto &s : result.subsets) {
      card += s.size();
    }
    record("post", objective, 0.0, card, now_ms() - t0);
  }

  for (int l = 0; l < depth; ++l) {
    result.posteriors.push_back(indexer.layer_view(flat_post, l));
  }
  result.model = std::move(model);
  return result;
}

} // namespace dgp
} // namespace asvgp
