#pragma once

#include "asvgp/data.hpp"
#include "asvgp/serialize.hpp"
#include "asvgp/trainer.hpp"

#include <string>
#include <vector>

namespace asvgp {
namespace experiment {

/// Trains adaptively on standardized data with a K-point random candidate
/// set and fills an experiment record. Throws on failure.
serialize::RunRecord
run_adaptive(const data::Dataset &dataset, const std::string &condition,
             double intensity, std::uint64_t seed, int candidates,
             train::TrainConfig config, BoundMode mode = BoundMode::Collapsed);

/// GP-only baseline with a fixed set of M inducing points (no point-process
/// phase); epoch budget matches the adaptive run's total.
serialize::RunRecord
run_fixed(const data::Dataset &dataset, const std::string &condition,
          double intensity, std::uint64_t seed, int m,
          train::TrainConfig config, BoundMode mode = BoundMode::Collapsed);

/// Full sweep per the experiment config: for every (intensity, seed) pair
/// one adaptive run plus fixed-M baselines (the configured list, or the
/// single M = round(E) of the matching adaptive run when the list is
/// empty). Run r uses seed base_seed + r. A failed run is recorded with its
/// error message and the sweep continues.
std::vector<serialize::RunRecord> run_sweep(const serialize::AppConfig &config);

/// run_sweep + results.jsonl and results_long.csv in the output directory.
std::vector<serialize::RunRecord>
run_and_emit(const serialize::AppConfig &config);

/// Median expected cardinality of the successful adaptive runs at each
/// intensity, in the order the intensities appear in the config.
std::vector<double> median_expected(const std::vector<serialize::RunRecord> &records,
                                    const std::vector<double> &intensities);

} // namespace experiment
} // namespace asvgp
