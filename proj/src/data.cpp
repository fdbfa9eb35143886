#include "asvgp/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace asvgp {
namespace data {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Standardizer Standardizer::fit(const MatrixXd &x, const VectorXd &y) {
  const int n = static_cast<int>(x.rows());
  if (n < 1 || y.size() != n) {
    throw std::invalid_argument("Standardizer: empty data or length mismatch");
  }
  Standardizer s;
  s.x_mean = x.colwise().mean();
  s.x_sd.resize(x.cols());
  s.x_scaled.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double var = (x.col(j).array() - s.x_mean(j)).square().sum() / n;
    double sd = std::sqrt(var);
    s.x_scaled[j] = sd > 0.0;
    s.x_sd(j) = s.x_scaled[j] ? sd : 1.0;
  }
  s.y_mean = y.mean();
  double yvar = (y.array() - s.y_mean).square().sum() / n;
  double ysd = std::sqrt(yvar);
  s.y_scaled = ysd > 0.0;
  s.y_sd = s.y_scaled ? ysd : 1.0;
  return s;
}

MatrixXd Standardizer::apply_x(const MatrixXd &x) const {
  if (x.cols() != x_mean.size()) {
    throw std::invalid_argument("Standardizer: input width mismatch");
  }
  return (x.rowwise() - x_mean.transpose()).array().rowwise() /
         x_sd.transpose().array();
}

VectorXd Standardizer::apply_y(const VectorXd &y) const {
  return (y.array() - y_mean) / y_sd;
}

VectorXd Standardizer::invert_mean(const VectorXd &mean) const {
  return (mean.array() * y_sd + y_mean).matrix();
}

VectorXd Standardizer::invert_var(const VectorXd &var) const {
  return var * (y_sd * y_sd);
}

SynthCondition condition_from_string(const std::string &name) {
  if (name == "noise") {
    return SynthCondition::Noise;
  }
  if (name == "smoothness") {
    return SynthCondition::Smoothness;
  }
  if (name == "clustering") {
    return SynthCondition::Clustering;
  }
  throw std::invalid_argument("unknown synthetic condition: " + name);
}

std::string to_string(SynthCondition condition) {
  switch (condition) {
  case SynthCondition::Noise:
    return "noise";
  case SynthCondition::Smoothness:
    return "smoothness";
  default:
    return "clustering";
  }
}

void SynthSpec::validate() const {
  if (n < 1 || n > 5000) {
    throw std::invalid_argument(
        "SynthSpec: N must lie in [1, 5000] for exact GP sampling");
  }
  if (condition == SynthCondition::Noise) {
    if (intensity < 0.0) {
      throw std::invalid_argument("SynthSpec: noise sigma must be >= 0");
    }
  } else if (!(intensity > 0.0)) {
    throw std::invalid_argument("SynthSpec: intensity must be positive");
  }
  if (sigma < 0.0 || !(gamma > 0.0)) {
    throw std::invalid_argument("SynthSpec: invalid default intensities");
  }
}

double SynthSpec::effective_sigma() const {
  return condition == SynthCondition::Noise ? intensity : sigma;
}

double SynthSpec::effective_gamma() const {
  return condition == SynthCondition::Smoothness ? intensity : gamma;
}

Dataset synth_generate(const SynthSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  MatrixXd x(spec.n, 1);
  if (spec.condition == SynthCondition::Clustering) {
    // Equidistant mixture components with shared precision beta.
    const double means[5] = {10.0, 30.0, 50.0, 70.0, 90.0};
    double sd = 1.0 / std::sqrt(spec.intensity);
    std::uniform_int_distribution<int> pick(0, 4);
    std::normal_distribution<double> g;
    for (int i = 0; i < spec.n; ++i) {
      x(i, 0) = means[pick(rng)] + sd * g(rng);
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, 100.0);
    for (int i = 0; i < spec.n; ++i) {
      x(i, 0) = unif(rng);
    }
  }

  KernelParams kernel = KernelParams::unit(1);
  kernel.log_lengthscales(0) = std::log(spec.effective_gamma());
  MatrixXd k = kernel::gram(kernel, x, x);
  MatrixXd l = gp::cholesky_jitter(k);
  std::normal_distribution<double> g;
  VectorXd eps(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    eps(i) = g(rng);
  }
  VectorXd f = l * eps;
  double sigma = spec.effective_sigma();
  VectorXd y = f;
  for (int i = 0; i < spec.n; ++i) {
    y(i) += sigma * g(rng);
  }

  Dataset out;
  out.x = std::move(x);
  out.y = std::move(y);
  out.stats = Standardizer::fit(out.x, out.y);
  out.provenance = "synth:" + to_string(spec.condition) + ":intensity=" +
                   std::to_string(spec.intensity) + ":seed=" +
                   std::to_string(spec.seed);
  return out;
}

VectorXd corrupt_outputs(const VectorXd &y, double v, std::uint64_t seed) {
  if (v < 0.0 || v >= 1.0) {
    throw std::invalid_argument("corrupt_outputs: v must lie in [0, 1)");
  }
  const int n = static_cast<int>(y.size());
  double sd = std::sqrt((y.array() - y.mean()).square().sum() / n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  VectorXd out = y;
  for (int i = 0; i < n; ++i) {
    out(i) += g(rng) * sd * v;
  }
  return out;
}

namespace {

std::vector<std::string> split_row(const std::string &line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') {
    cells.push_back("");
  }
  return cells;
}

double parse_cell(const std::string &cell, int row, const std::string &column) {
  std::size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(cell, &consumed);
  } catch (const std::exception &) {
    consumed = 0;
  }
  // Allow trailing whitespace only.
  while (consumed < cell.size() &&
         std::isspace(static_cast<unsigned char>(cell[consumed]))) {
    ++consumed;
  }
  if (cell.empty() || consumed != cell.size()) {
    throw std::runtime_error("load_csv: non-numeric cell at row " +
                             std::to_string(row) + ", column '" + column +
                             "'");
  }
  return value;
}

} // namespace

Dataset load_csv(const std::string &path, const std::string &target) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_csv: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("load_csv: empty file " + path);
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  std::vector<std::string> header = split_row(line);
  if (header.size() < 2) {
    throw std::runtime_error("load_csv: need at least one input column and a target");
  }
  int target_col = static_cast<int>(header.size()) - 1;
  if (!target.empty()) {
    auto it = std::find(header.begin(), header.end(), target);
    if (it == header.end()) {
      throw std::runtime_error("load_csv: target column '" + target +
                               "' not found");
    }
    target_col = static_cast<int>(it - header.begin());
  }

  std::vector<std::vector<double>> rows;
  int row_number = 1; // header is row 0
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells = split_row(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_csv: row " + std::to_string(row_number) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " +
                               std::to_string(header.size()));
    }
    std::vector<double> parsed(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      parsed[j] = parse_cell(cells[j], row_number, header[j]);
    }
    rows.push_back(std::move(parsed));
    ++row_number;
  }
  if (rows.empty()) {
    throw std::runtime_error("load_csv: no data rows in " + path);
  }

  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(header.size()) - 1;
  Dataset out;
  out.x.resize(n, d);
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    int col = 0;
    for (int j = 0; j < static_cast<int>(header.size()); ++j) {
      if (j == target_col) {
        out.y(i) = rows[i][j];
      } else {
        out.x(i, col++) = rows[i][j];
      }
    }
  }
  if (!out.x.allFinite() || !out.y.allFinite()) {
    throw std::runtime_error("load_csv: non-finite values in " + path);
  }
  out.stats = Standardizer::fit(out.x, out.y);
  out.provenance = "csv:" + path;
  return out;
}

void save_csv(const std::string &path, const Dataset &dataset) {
  std::ofstream outf(path);
  if (!outf) {
    throw std::runtime_error("save_csv: cannot open " + path);
  }
  outf.precision(17);
  for (Eigen::Index j = 0; j < dataset.x.cols(); ++j) {
    outf << "x" << j << ",";
  }
  outf << "y\n";
  for (int i = 0; i < dataset.n(); ++i) {
    for (Eigen::Index j = 0; j < dataset.x.cols(); ++j) {
      outf << dataset.x(i, j) << ",";
    }
    outf << dataset.y(i) << "\n";
  }
}

double posterior_gap(const SvgpModel &model, const SubsetIndex &subset,
                     const MatrixXd &x, const VectorXd &y) {
  if (x.rows() > 3000) {
    throw std::invalid_argument("posterior_gap: N too large for the exact LML");
  }
  double lml = gp::exact_lml(model.kernel, model.log_noise_variance, x, y);
  return lml - gp::collapsed_elbo(model, subset, x, y);
}

MatrixXd random_row_subset(const MatrixXd &x, int k, std::mt19937_64 &rng) {
  const int n = static_cast<int>(x.rows());
  if (k < 1 || k > n) {
    throw std::invalid_argument("random_row_subset: k out of range");
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return x(perm, Eigen::all);
}

} // namespace data
} // namespace asvgp
