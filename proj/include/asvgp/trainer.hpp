#pragma once

#include "asvgp/estimators.hpp"
#include "asvgp/gp_core.hpp"
#include "asvgp/point_process.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace asvgp {
namespace train {

enum class ExtractionMode { Threshold, Sample };

struct TrainConfig {
  int n_pre = 200;
  int n_ppp = 600;
  int n_post = 200;
  double lr_main = 0.01;
  double lr_logits = 0.2;
  int mc_samples = 4;
  double baseline_decay = 0.9;
  int minibatch = 0; // 0 = full batch
  std::uint64_t seed = 0;
  double alpha = 0.05;
  ExtractionMode extraction = ExtractionMode::Threshold;
  bool optimize_z_during_ppp = false;

  void validate(int n) const;
};

struct EpochRecord {
  int epoch = 0;
  std::string phase; // "pre" | "ppp" | "post"
  double objective = 0.0;
  double ppp_kl = 0.0;
  double expected_cardinality = 0.0;
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::vector<std::string> events; // skipped steps etc.
};

/// Per-parameter Adam moments; bias correction counts steps per parameter
/// so a skipped (non-finite) update does not advance the correction.
struct AdamState {
  std::map<std::string, Eigen::MatrixXd> m;
  std::map<std::string, Eigen::MatrixXd> v;
  std::map<std::string, long> steps;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam descent step per named parameter present in grads. Parameters
/// with non-finite gradients are left untouched; their names are returned
/// so the caller can log the event.
std::vector<std::string> adam_step(std::map<std::string, Eigen::MatrixXd> &params,
                                   const ad::GradientMap &grads,
                                   AdamState &state, double lr);

/// Non-empty subset from the posterior: threshold keeps lambda >= 0.5 and
/// falls back to the argmax-lambda singleton; sample draws once from q.
SubsetIndex extract_subset(const pp::PppPosterior &post, ExtractionMode mode,
                           std::mt19937_64 &rng);

/// Uniform random partition of {0..n-1} into batches of the given size.
/// Subsampling is only valid for the uncollapsed bound.
std::vector<std::vector<int>> minibatch_iter(int n, int size, BoundMode mode,
                                             std::mt19937_64 &rng);

struct TrainResult {
  SvgpModel model;
  pp::PppPosterior posterior;
  SubsetIndex subset;
  TrainHistory history;
};

/// Three-phase fit: GP-only pre-training on the full candidate set, joint
/// point-process phase driven by the score-function estimator, subset
/// extraction, and GP-only post-training on the extracted subset.
TrainResult run_training(SvgpModel model, const Eigen::MatrixXd &x,
                         const Eigen::VectorXd &y, const TrainConfig &config);

} // namespace train
} // namespace asvgp
