#pragma once

#include "asvgp/gp_core.hpp"

#include <random>
#include <string>
#include <vector>

namespace asvgp {
namespace data {

/// Per-column input statistics plus output statistics; constant columns are
/// left unscaled and flagged.
struct Standardizer {
  Eigen::VectorXd x_mean;
  Eigen::VectorXd x_sd;
  std::vector<bool> x_scaled;
  double y_mean = 0.0;
  double y_sd = 1.0;
  bool y_scaled = true;

  static Standardizer fit(const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

  Eigen::MatrixXd apply_x(const Eigen::MatrixXd &x) const;
  Eigen::VectorXd apply_y(const Eigen::VectorXd &y) const;
  /// Back to original units.
  Eigen::VectorXd invert_mean(const Eigen::VectorXd &mean) const;
  Eigen::VectorXd invert_var(const Eigen::VectorXd &var) const;
};

struct Dataset {
  Eigen::MatrixXd x; // original units
  Eigen::VectorXd y;
  Standardizer stats; // fitted on (x, y)
  std::string provenance;

  int n() const { return static_cast<int>(x.rows()); }
  Eigen::MatrixXd standardized_x() const { return stats.apply_x(x); }
  Eigen::VectorXd standardized_y() const { return stats.apply_y(y); }
};

enum class SynthCondition { Noise, Smoothness, Clustering };

SynthCondition condition_from_string(const std::string &name);
std::string to_string(SynthCondition condition);

/// Synthetic 1-D regression draw: x from U[0, 100] (noise / smoothness) or
/// a 5-component equidistant Gaussian mixture with shared precision beta
/// (clustering); f sampled exactly from a unit-variance RBF GP with
/// lengthscale gamma; y = f + N(0, sigma^2).
struct SynthSpec {
  SynthCondition condition = SynthCondition::Noise;
  double intensity = 0.1; // sigma, gamma, or beta depending on condition
  int n = 500;
  std::uint64_t seed = 0;
  double sigma = 0.1; // defaults used for the parameters not swept
  double gamma = 1.0;

  void validate() const;
  double effective_sigma() const;
  double effective_gamma() const;
};

Dataset synth_generate(const SynthSpec &spec);

/// y + eps * sd(y) * v with standard Gaussian eps; v in [0, 1).
Eigen::VectorXd corrupt_outputs(const Eigen::VectorXd &y, double v,
                                std::uint64_t seed);

/// UTF-8 CSV with a header row; the target column is named, or the last
/// column when the name is empty.
Dataset load_csv(const std::string &path, const std::string &target = "");

void save_csv(const std::string &path, const Dataset &dataset);

/// log p(y) - collapsed ELBO == KL between approximate and exact posterior
/// for the Gaussian likelihood. Requires N <= 3000.
double posterior_gap(const SvgpModel &model, const SubsetIndex &subset,
                     const Eigen::MatrixXd &x, const Eigen::VectorXd &y);

/// Uniform random subset of rows (inducing-point initialization).
Eigen::MatrixXd random_row_subset(const Eigen::MatrixXd &x, int k,
                                  std::mt19937_64 &rng);

} // namespace data
} // namespace asvgp
