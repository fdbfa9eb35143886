#pragma once

#include "asvgp/estimators.hpp"
#include "asvgp/gp_core.hpp"
#include "asvgp/point_process.hpp"
#include "asvgp/trainer.hpp"

#include <random>
#include <string>
#include <vector>

namespace asvgp {
namespace dgp {

/// One GP layer: a shared candidate set and kernel across output
/// dimensions, with an independent variational Gaussian per dimension.
struct DgpLayer {
  Eigen::MatrixXd candidates; // K x d_in
  KernelParams kernel;
  int output_dim = 1;
  // Per output dimension, same parameterization as SvgpModel.
  std::vector<Eigen::VectorXd> var_mean;
  std::vector<Eigen::MatrixXd> var_factor_strict;
  std::vector<Eigen::VectorXd> var_factor_log_diag;

  int candidate_count() const { return static_cast<int>(candidates.rows()); }
  int input_dim() const { return static_cast<int>(candidates.cols()); }
  Eigen::MatrixXd var_factor(int d) const;
  Eigen::MatrixXd var_cov(int d) const;
  void reset_variational_to_prior();
};

/// Doubly-stochastic deep GP with a Gaussian likelihood on a scalar output.
struct DgpModel {
  std::vector<DgpLayer> layers;
  double log_noise_variance = std::log(0.1);
  bool concat_input = false; // observed input appended to layer-2 input
  int observed_dim = 0;

  /// Builds a model with the given per-layer candidate sets and output
  /// widths (last width must be 1). Candidate input dimensions must match
  /// the propagated widths (plus observed_dim for layer 2 when
  /// concat_input is set).
  static DgpModel init(std::vector<Eigen::MatrixXd> candidates,
                       const std::vector<int> &widths, int observed_dim,
                       bool concat_input);

  int depth() const { return static_cast<int>(layers.size()); }
  double noise_variance() const { return std::exp(log_noise_variance); }
  /// Input dimensionality of layer l given the model wiring.
  int layer_input_dim(int l) const;
};

struct LayerOutput {
  Eigen::MatrixXd samples; // N x D, reparameterized draws
  Eigen::MatrixXd mean;    // N x D
  Eigen::MatrixXd var;     // N x D
};

/// Per-point Gaussian conditional of one layer restricted to a subset of
/// its candidates, plus one reparameterized sample per point.
LayerOutput layer_propagate(const DgpLayer &layer, const SubsetIndex &subset,
                            const Eigen::MatrixXd &inputs,
                            std::mt19937_64 &rng);

/// Tape leaves for the whole model. Leaf names: "L<l>_log_lengthscales",
/// "L<l>_log_variance", "L<l>_z", "L<l>_d<d>_var_mean",
/// "L<l>_d<d>_var_factor_strict", "L<l>_d<d>_var_factor_log_diag",
/// "log_noise".
struct DgpLeaves {
  struct Layer {
    ad::Var log_lengthscales;
    ad::Var log_variance;
    ad::Var z;
    std::vector<ad::Var> var_mean;
    std::vector<ad::Var> var_factor_strict;
    std::vector<ad::Var> var_factor_log_diag;
  };
  std::vector<Layer> layers;
  ad::Var log_noise;
};

DgpLeaves leaves(ad::Tape &t, const DgpModel &model);

/// ELBO estimate with the hidden-layer path noise frozen to the supplied
/// draws (one N x D_l matrix per hidden layer), so the whole expression is
/// pathwise-differentiable. `depth_limit` < 0 uses all layers; otherwise
/// layers [0, depth_limit] form the model and the last of them feeds the
/// likelihood through its first output dimension (layer-wise pre-training).
ad::Var dgp_elbo(ad::Tape &t, const DgpLeaves &ml, const DgpModel &model,
                 const std::vector<SubsetIndex> &subsets,
                 const Eigen::MatrixXd &x, const Eigen::VectorXd &y,
                 double scale, const std::vector<Eigen::MatrixXd> &path_noise,
                 int depth_limit = -1);

/// Draws the path noise from rng, then evaluates the frozen-noise ELBO.
double dgp_elbo(const DgpModel &model, const std::vector<SubsetIndex> &subsets,
                const Eigen::MatrixXd &x, const Eigen::VectorXd &y,
                double scale, std::mt19937_64 &rng);

/// Standard-normal path noise draws shaped for the model's hidden layers.
std::vector<Eigen::MatrixXd> sample_path_noise(const DgpModel &model,
                                               Eigen::Index n,
                                               std::mt19937_64 &rng,
                                               int depth_limit = -1);

/// Monte-Carlo moment-matched latent predictions.
std::pair<Eigen::VectorXd, Eigen::VectorXd>
dgp_predict(const DgpModel &model, const std::vector<SubsetIndex> &subsets,
            const Eigen::MatrixXd &x_test, int n_samples,
            std::mt19937_64 &rng);

struct DgpTrainResult {
  DgpModel model;
  std::vector<pp::PppPosterior> posteriors;
  std::vector<SubsetIndex> subsets;
  train::TrainHistory history;
};

/// Three-phase fit mirroring train::run_training: sequential layer-wise
/// pre-training (n_pre epochs per layer), a joint point-process phase over
/// the product posterior (independent per-layer subsets; the score is the
/// sum of per-layer scores), per-layer extraction, and joint post-training
/// on the extracted subsets.
DgpTrainResult dgp_train(DgpModel model, const Eigen::MatrixXd &x,
                         const Eigen::VectorXd &y,
                         const train::TrainConfig &config);

} // namespace dgp
} // namespace asvgp
