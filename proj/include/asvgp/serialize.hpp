#pragma once

#include "asvgp/data.hpp"
#include "asvgp/dgp.hpp"
#include "asvgp/gp_core.hpp"
#include "asvgp/point_process.hpp"
#include "asvgp/trainer.hpp"

#include <string>
#include <vector>

namespace asvgp {
namespace serialize {

inline constexpr int kModelFormatVersion = 1;

/// Model geometry and bound choice; widths describe a deep model (last
/// entry must be 1) and an empty list means a shallow model.
struct ModelConfig {
  int candidates = 20;
  BoundMode mode = BoundMode::Collapsed;
  std::vector<int> widths;
  bool concat_input = false;
};

/// Sweep description for the experiment runner.
struct ExperimentConfig {
  std::string condition = "noise";
  std::vector<double> intensities;
  std::vector<int> baseline_m; // fixed-size baselines; empty = round(E)
  int n = 300;
  int seeds = 3;
  std::uint64_t base_seed = 0;
  std::string output_dir = ".";
};

/// Full application configuration. Every field is optional in the file;
/// unknown keys are errors.
struct AppConfig {
  train::TrainConfig train;
  data::SynthSpec synth;
  ModelConfig model;
  ExperimentConfig experiment;
  std::string target; // CSV target column name ("" = last column)
};

AppConfig parse_config(const std::string &json_text);
AppConfig load_config(const std::string &path);

/// A model file bundles the GP state, the point-process posterior(s), the
/// extracted subset(s), and the standardization used at fit time.
struct ModelBundle {
  std::string kind = "svgp"; // "svgp" | "dgp"
  SvgpModel svgp;
  dgp::DgpModel dgp;
  std::vector<pp::PppPosterior> posteriors; // 1 for svgp, 1 per layer for dgp
  std::vector<SubsetIndex> subsets;         // same arity
  data::Standardizer stats;
};

std::string to_json(const ModelBundle &bundle);
ModelBundle bundle_from_json(const std::string &json_text);

void save_model(const std::string &path, const ModelBundle &bundle);
ModelBundle load_model(const std::string &path);

/// One line-delimited record per epoch with fields
/// {epoch, phase, elbo, ppp_kl, expected_M, wall_ms}, followed by one
/// {event: ...} line per logged event.
void write_history(const std::string &path, const train::TrainHistory &history);

/// One experiment run; `error` is empty on success.
struct RunRecord {
  std::string condition;
  double intensity = 0.0;
  std::uint64_t seed = 0;
  std::string method; // "adaptive" | "fixed-M"
  int fixed_m = 0;    // only for fixed-M baselines
  double expected_cardinality = 0.0;
  int subset_size = 0;
  double final_elbo = 0.0;
  double posterior_gap = 0.0;
  double wall_ms = 0.0;
  std::string error;
};

/// Line-delimited records, one per run.
void write_results(const std::string &path,
                   const std::vector<RunRecord> &records);

/// Plot-ready long-format CSV: condition,intensity,seed,method,metric,value.
void write_long_table(const std::string &path,
                      const std::vector<RunRecord> &records);

/// The results serialization with wall time removed, for determinism
/// comparisons between repeated runs.
std::string results_fingerprint(const std::vector<RunRecord> &records);

} // namespace serialize
} // namespace asvgp
