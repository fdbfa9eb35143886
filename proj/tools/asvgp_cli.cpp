// Command-line front end: synthetic data generation, model fitting,
// subset selection, prediction, and experiment sweeps.

#include <CLI11.hpp>

#include "asvgp/data.hpp"
#include "asvgp/dgp.hpp"
#include "asvgp/experiment.hpp"
#include "asvgp/serialize.hpp"
#include "asvgp/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace {

using namespace asvgp;

serialize::AppConfig load_optional_config(const std::string &path) {
  if (path.empty()) {
    return serialize::parse_config("{}");
  }
  return serialize::load_config(path);
}

/// Packs a fitted SVGP into deployment form: the selected subset becomes
/// the full candidate set and the variational fields hold the posterior
/// moments over it, so prediction needs no training data.
SvgpModel pack_for_prediction(const train::TrainResult &result,
                              const Eigen::MatrixXd &x,
                              const Eigen::VectorXd &y) {
  const SvgpModel &m = result.model;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  if (m.mode == BoundMode::Collapsed) {
    std::tie(mean, cov) = gp::collapsed_q_u(m, result.subset, x, y);
  } else {
    const std::vector<int> &idx = result.subset.indices;
    mean = m.var_mean(idx);
    Eigen::MatrixXd full = m.var_cov();
    cov = full(idx, idx);
  }
  SvgpModel packed = m;
  packed.inducing_candidates = m.inducing_candidates(result.subset.indices,
                                                     Eigen::all);
  packed.var_mean = mean;
  Eigen::MatrixXd factor = gp::cholesky_jitter(cov);
  packed.var_factor_strict = factor;
  packed.var_factor_log_diag = factor.diagonal().array().log();
  return packed;
}

int cmd_synth(const std::string &config_path, const data::SynthSpec &flags,
              const std::string &out_path) {
  serialize::AppConfig config = load_optional_config(config_path);
  data::SynthSpec spec = config_path.empty() ? flags : config.synth;
  if (!config_path.empty()) {
    // Flags override the file when both are given.
    spec = flags;
  }
  data::Dataset d = data::synth_generate(spec);
  data::save_csv(out_path, d);
  std::cout << "wrote " << d.n() << " rows (" << d.provenance << ") to "
            << out_path << "\n";
  return 0;
}

int cmd_fit(const std::string &data_path, const std::string &config_path,
            const std::string &target, const std::string &model_path,
            const std::string &history_path) {
  serialize::AppConfig config = load_optional_config(config_path);
  std::string target_col = target.empty() ? config.target : target;
  data::Dataset d = data::load_csv(data_path, target_col);
  Eigen::MatrixXd x = d.standardized_x();
  Eigen::VectorXd y = d.standardized_y();
  std::mt19937_64 rng(config.train.seed ^ 0x9e3779b97f4a7c15ULL);

  serialize::ModelBundle bundle;
  bundle.stats = d.stats;
  train::TrainHistory history;

  if (config.model.widths.empty()) {
    int k = std::min(config.model.candidates, d.n());
    SvgpModel model = SvgpModel::init(data::random_row_subset(x, k, rng),
                                      config.model.mode);
    train::TrainResult result =
        train::run_training(std::move(model), x, y, config.train);
    bundle.kind = "svgp";
    bundle.svgp = pack_for_prediction(result, x, y);
    bundle.posteriors.push_back(result.posterior);
    bundle.subsets.push_back(SubsetIndex::all(result.subset.size()));
    history = std::move(result.history);
    std::cout << "fit svgp: kept " << result.subset.size() << " of " << k
              << " candidates, expected cardinality "
              << pp::cardinality_stats(result.posterior).first << "\n";
  } else {
    std::vector<int> widths = config.model.widths;
    if (widths.back() != 1) {
      throw std::runtime_error("fit: the last layer width must be 1");
    }
    int k = std::min(config.model.candidates, d.n());
    std::vector<Eigen::MatrixXd> candidates;
    int prev_width = static_cast<int>(x.cols());
    std::normal_distribution<double> g;
    for (std::size_t l = 0; l < widths.size(); ++l) {
      int in_dim = prev_width;
      if (l == 1 && config.model.concat_input) {
        in_dim += static_cast<int>(x.cols());
      }
      if (l == 0) {
        candidates.push_back(data::random_row_subset(x, k, rng));
      } else {
        Eigen::MatrixXd z(k, in_dim);
        for (int i = 0; i < k; ++i) {
          for (int j = 0; j < in_dim; ++j) {
            z(i, j) = g(rng);
          }
        }
        candidates.push_back(std::move(z));
      }
      prev_width = widths[l];
    }
    dgp::DgpModel model =
        dgp::DgpModel::init(std::move(candidates), widths,
                            static_cast<int>(x.cols()),
                            config.model.concat_input);
    dgp::DgpTrainResult result =
        dgp::dgp_train(std::move(model), x, y, config.train);
    bundle.kind = "dgp";
    bundle.dgp = std::move(result.model);
    bundle.posteriors = std::move(result.posteriors);
    bundle.subsets = std::move(result.subsets);
    history = std::move(result.history);
    std::cout << "fit dgp:";
    for (const SubsetIndex &s : bundle.subsets) {
      std::cout << " " << s.size();
    }
    std::cout << " points kept per layer\n";
  }

  serialize::save_model(model_path, bundle);
  if (!history_path.empty()) {
    serialize::write_history(history_path, history);
  }
  std::cout << "model written to " << model_path << "\n";
  return 0;
}

int cmd_select(const std::string &model_path, const std::string &data_path,
               const std::string &config_path, double alpha,
               const std::string &target, const std::string &out_path) {
  serialize::ModelBundle bundle = serialize::load_model(model_path);
  if (bundle.kind != "svgp") {
    throw std::runtime_error("select: only svgp models are supported");
  }
  serialize::AppConfig config = load_optional_config(config_path);
  config.train.n_pre = 0; // resume from the loaded state
  if (alpha >= 0.0) {
    config.train.alpha = alpha;
  }
  std::string target_col = target.empty() ? config.target : target;
  data::Dataset d = data::load_csv(data_path, target_col);
  Eigen::MatrixXd x = bundle.stats.apply_x(d.x);
  Eigen::VectorXd y = bundle.stats.apply_y(d.y);

  train::TrainResult result =
      train::run_training(bundle.svgp, x, y, config.train);
  Eigen::VectorXd lambda = result.posterior.probabilities();
  std::cout << "index,lambda,kept\n";
  for (int i = 0; i < lambda.size(); ++i) {
    bool kept = std::find(result.subset.indices.begin(),
                          result.subset.indices.end(),
                          i) != result.subset.indices.end();
    std::cout << i << "," << lambda(i) << "," << (kept ? 1 : 0) << "\n";
  }

  serialize::ModelBundle pruned;
  pruned.kind = "svgp";
  pruned.svgp = pack_for_prediction(result, x, y);
  pruned.posteriors.push_back(result.posterior);
  pruned.subsets.push_back(SubsetIndex::all(result.subset.size()));
  pruned.stats = bundle.stats;
  serialize::save_model(out_path, pruned);
  std::cout << "kept " << result.subset.size() << " of " << lambda.size()
            << " points; pruned model written to " << out_path << "\n";
  return 0;
}

int cmd_predict(const std::string &model_path, const std::string &data_path,
                const std::string &target, const std::string &out_path,
                int mc_samples, std::uint64_t seed) {
  serialize::ModelBundle bundle = serialize::load_model(model_path);
  data::Dataset d = data::load_csv(data_path, target);
  Eigen::MatrixXd x = bundle.stats.apply_x(d.x);

  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double noise = 0.0;
  if (bundle.kind == "svgp") {
    const SvgpModel &m = bundle.svgp;
    SubsetIndex subset = SubsetIndex::all(m.candidate_count());
    std::tie(mean, var) = gp::predict(m, subset, m.var_mean, m.var_cov(), x);
    noise = m.noise_variance();
  } else {
    std::mt19937_64 rng(seed);
    std::tie(mean, var) =
        dgp::dgp_predict(bundle.dgp, bundle.subsets, x, mc_samples, rng);
    noise = bundle.dgp.noise_variance();
  }
  // Predictive distribution of y in original units: latent + noise.
  Eigen::VectorXd y_var = var.array() + noise;
  mean = bundle.stats.invert_mean(mean);
  y_var = bundle.stats.invert_var(y_var);

  std::ofstream out(out_path);
  if (!out) {
    throw std::runtime_error("predict: cannot open " + out_path);
  }
  out.precision(17);
  out << "mean,variance\n";
  for (int i = 0; i < mean.size(); ++i) {
    out << mean(i) << "," << y_var(i) << "\n";
  }
  std::cout << "wrote " << mean.size() << " predictions to " << out_path
            << "\n";
  return 0;
}

int cmd_experiment(const std::string &config_path) {
  serialize::AppConfig config = serialize::load_config(config_path);
  std::vector<serialize::RunRecord> records =
      experiment::run_and_emit(config);
  std::vector<double> medians = experiment::median_expected(
      records, config.experiment.intensities);
  for (std::size_t i = 0; i < medians.size(); ++i) {
    std::cout << "intensity " << config.experiment.intensities[i]
              << ": median expected cardinality " << medians[i] << "\n";
  }
  int failures = 0;
  for (const serialize::RunRecord &r : records) {
    if (!r.error.empty()) {
      ++failures;
      std::cerr << "run failed (" << r.method << ", intensity " << r.intensity
                << ", seed " << r.seed << "): " << r.error << "\n";
    }
  }
  std::cout << records.size() << " runs, " << failures
            << " failed; results in " << config.experiment.output_dir << "\n";
  return failures == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Sparse variational GP fitting with an adaptive number of "
               "inducing points"};
  app.require_subcommand(1);

  // synth
  auto *synth = app.add_subcommand("synth", "Generate a synthetic CSV dataset");
  std::string synth_condition = "noise";
  data::SynthSpec synth_spec;
  std::string synth_out = "synth.csv";
  std::string synth_config;
  synth->add_option("--condition", synth_condition,
                    "noise | smoothness | clustering");
  synth->add_option("--intensity", synth_spec.intensity,
                    "sigma / gamma / beta for the chosen condition");
  synth->add_option("--n", synth_spec.n, "number of points (<= 5000)");
  synth->add_option("--seed", synth_spec.seed, "RNG seed");
  synth->add_option("--sigma", synth_spec.sigma, "default noise SD");
  synth->add_option("--gamma", synth_spec.gamma, "default lengthscale");
  synth->add_option("--out", synth_out, "output CSV path");
  synth->add_option("--config", synth_config, "JSON config file");

  // fit
  auto *fit = app.add_subcommand("fit", "Fit a model to a CSV dataset");
  std::string fit_data, fit_config, fit_target;
  std::string fit_model = "model.json";
  std::string fit_history;
  fit->add_option("--data", fit_data, "training CSV")->required();
  fit->add_option("--config", fit_config, "JSON config file");
  fit->add_option("--target", fit_target, "target column name");
  fit->add_option("--model", fit_model, "output model path");
  fit->add_option("--history", fit_history, "output history path (JSONL)");

  // select
  auto *select = app.add_subcommand(
      "select", "Re-run subset selection on a fitted model");
  std::string sel_model, sel_data, sel_config, sel_target;
  std::string sel_out = "pruned.json";
  double sel_alpha = -1.0;
  select->add_option("--model", sel_model, "input model path")->required();
  select->add_option("--data", sel_data, "training CSV")->required();
  select->add_option("--config", sel_config, "JSON config file");
  select->add_option("--alpha", sel_alpha, "cardinality penalty override");
  select->add_option("--target", sel_target, "target column name");
  select->add_option("--out", sel_out, "pruned model path");

  // predict
  auto *predict = app.add_subcommand("predict", "Predict on a CSV dataset");
  std::string pred_model, pred_data, pred_target;
  std::string pred_out = "predictions.csv";
  int pred_samples = 256;
  std::uint64_t pred_seed = 0;
  predict->add_option("--model", pred_model, "model path")->required();
  predict->add_option("--data", pred_data, "input CSV")->required();
  predict->add_option("--target", pred_target, "target column name");
  predict->add_option("--out", pred_out, "output CSV (mean, variance)");
  predict->add_option("--samples", pred_samples, "MC samples (deep models)");
  predict->add_option("--seed", pred_seed, "RNG seed (deep models)");

  // experiment
  auto *exp = app.add_subcommand("experiment", "Run a configured sweep");
  std::string exp_config;
  exp->add_option("--config", exp_config, "JSON config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_spec.condition = data::condition_from_string(synth_condition);
      return cmd_synth(synth_config, synth_spec, synth_out);
    }
    if (fit->parsed()) {
      return cmd_fit(fit_data, fit_config, fit_target, fit_model, fit_history);
    }
    if (select->parsed()) {
      return cmd_select(sel_model, sel_data, sel_config, sel_alpha, sel_target,
                        sel_out);
    }
    if (predict->parsed()) {
      return cmd_predict(pred_model, pred_data, pred_target, pred_out,
                         pred_samples, pred_seed);
    }
    if (exp->parsed()) {
      return cmd_experiment(exp_config);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
