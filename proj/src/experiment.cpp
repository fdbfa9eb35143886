#include "asvgp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace asvgp {
namespace experiment {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Prepared {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  SvgpModel model;
};

Prepared prepare(const data::Dataset &dataset, std::uint64_t seed,
                 int candidates, BoundMode mode) {
  Prepared p{dataset.standardized_x(), dataset.standardized_y(), {}};
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd z = data::random_row_subset(p.x, candidates, rng);
  p.model = SvgpModel::init(z, mode);
  return p;
}

serialize::RunRecord finish(serialize::RunRecord record,
                            const train::TrainResult &result,
                            const Eigen::MatrixXd &x, const Eigen::VectorXd &y,
                            double started_ms) {
  record.expected_cardinality =
      pp::cardinality_stats(result.posterior).first;
  record.subset_size = result.subset.size();
  record.final_elbo = gp::bound_value(result.model, result.subset, x, y);
  if (x.rows() <= 3000 && result.model.mode == BoundMode::Collapsed) {
    record.posterior_gap = data::posterior_gap(result.model, result.subset,
                                               x, y);
  } else {
    record.posterior_gap = std::numeric_limits<double>::quiet_NaN();
  }
  record.wall_ms = now_ms() - started_ms;
  return record;
}

} // namespace

serialize::RunRecord run_adaptive(const data::Dataset &dataset,
                                  const std::string &condition,
                                  double intensity, std::uint64_t seed,
                                  int candidates, train::TrainConfig config,
                                  BoundMode mode) {
  double started = now_ms();
  config.seed = seed;
  Prepared p = prepare(dataset, seed, candidates, mode);
  train::TrainResult result =
      train::run_training(std::move(p.model), p.x, p.y, config);
  serialize::RunRecord record;
  record.condition = condition;
  record.intensity = intensity;
  record.seed = seed;
  record.method = "adaptive";
  return finish(std::move(record), result, p.x, p.y, started);
}

serialize::RunRecord run_fixed(const data::Dataset &dataset,
                               const std::string &condition, double intensity,
                               std::uint64_t seed, int m,
                               train::TrainConfig config, BoundMode mode) {
  double started = now_ms();
  config.seed = seed;
  // Same total epoch budget as the adaptive run, all spent on the GP.
  config.n_pre = config.n_pre + config.n_ppp + config.n_post;
  config.n_ppp = 0;
  config.n_post = 0;
  // The untouched posterior keeps every candidate at extraction.
  config.extraction = train::ExtractionMode::Threshold;
  Prepared p = prepare(dataset, seed, m, mode);
  train::TrainResult result =
      train::run_training(std::move(p.model), p.x, p.y, config);
  serialize::RunRecord record;
  record.condition = condition;
  record.intensity = intensity;
  record.seed = seed;
  record.method = "fixed-M";
  record.fixed_m = m;
  return finish(std::move(record), result, p.x, p.y, started);
}

std::vector<serialize::RunRecord>
run_sweep(const serialize::AppConfig &config) {
  const serialize::ExperimentConfig &exp = config.experiment;
  if (exp.intensities.empty()) {
    throw std::invalid_argument("experiment: no intensities configured");
  }
  if (exp.seeds < 1) {
    throw std::invalid_argument("experiment: need at least one seed");
  }
  data::SynthCondition condition = data::condition_from_string(exp.condition);

  std::vector<serialize::RunRecord> records;
  std::uint64_t run_index = 0;
  for (double intensity : exp.intensities) {
    for (int s = 0; s < exp.seeds; ++s) {
      std::uint64_t seed = exp.base_seed + run_index++;
      data::SynthSpec spec = config.synth;
      spec.condition = condition;
      spec.intensity = intensity;
      spec.n = exp.n;
      spec.seed = seed;

      serialize::RunRecord adaptive;
      adaptive.condition = exp.condition;
      adaptive.intensity = intensity;
      adaptive.seed = seed;
      adaptive.method = "adaptive";
      try {
        data::Dataset dataset = data::synth_generate(spec);
        adaptive = run_adaptive(dataset, exp.condition, intensity, seed,
                                config.model.candidates, config.train,
                                config.model.mode);
        records.push_back(adaptive);

        std::vector<int> baselines = exp.baseline_m;
        if (baselines.empty()) {
          int m = std::max(
              1, static_cast<int>(std::lround(adaptive.expected_cardinality)));
          baselines.push_back(std::min(m, dataset.n()));
        }
        for (int m : baselines) {
          try {
            records.push_back(run_fixed(dataset, exp.condition, intensity,
                                        seed, m, config.train,
                                        config.model.mode));
          } catch (const std::exception &e) {
            serialize::RunRecord failed;
            failed.condition = exp.condition;
            failed.intensity = intensity;
            failed.seed = seed;
            failed.method = "fixed-M";
            failed.fixed_m = m;
            failed.error = e.what();
            records.push_back(std::move(failed));
          }
        }
      } catch (const std::exception &e) {
        adaptive.error = e.what();
        records.push_back(std::move(adaptive));
      }
    }
  }
  return records;
}

std::vector<serialize::RunRecord>
run_and_emit(const serialize::AppConfig &config) {
  std::vector<serialize::RunRecord> records = run_sweep(config);
  const std::string dir = config.experiment.output_dir;
  serialize::write_results(dir + "/results.jsonl", records);
  serialize::write_long_table(dir + "/results_long.csv", records);
  return records;
}

std::vector<double>
median_expected(const std::vector<serialize::RunRecord> &records,
                const std::vector<double> &intensities) {
  std::vector<double> medians;
  for (double intensity : intensities) {
    std::vector<double> values;
    for (const serialize::RunRecord &r : records) {
      if (r.method == "adaptive" && r.error.empty() &&
          r.intensity == intensity) {
        values.push_back(r.expected_cardinality);
      }
    }
    if (values.empty()) {
      throw std::runtime_error("experiment: no successful adaptive runs at "
                               "intensity " +
                               std::to_string(intensity));
    }
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    medians.push_back(n % 2 == 1
                          ? values[n / 2]
                          : 0.5 * (values[n / 2 - 1] + values[n / 2]));
  }
  return medians;
}

} // namespace experiment
} // namespace asvgp
