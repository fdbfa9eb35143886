#include "asvgp/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace asvgp {
namespace serialize {

using nlohmann::json;

namespace {

// --- generic helpers ------------------------------------------------------

void check_keys(const json &node, const std::set<std::string> &allowed,
                const std::string &where) {
  if (!node.is_object()) {
    throw std::runtime_error("config: '" + where + "' must be an object");
  }
  for (auto it = node.begin(); it != node.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::runtime_error("config: unknown key '" + it.key() + "' in '" +
                               where + "'");
    }
  }
}

template <typename T>
void read_field(const json &node, const char *key, T &out) {
  if (node.contains(key)) {
    node.at(key).get_to(out);
  }
}

json to_json(const Eigen::MatrixXd &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Eigen::VectorXd &v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    arr.push_back(v(i));
  }
  return arr;
}

Eigen::MatrixXd matrix_from_json(const json &node) {
  if (!node.is_array()) {
    throw std::runtime_error("model file: expected a matrix (array of rows)");
  }
  const auto rows = node.size();
  if (rows == 0) {
    return Eigen::MatrixXd(0, 0);
  }
  const auto cols = node.at(0).size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const json &row = node.at(i);
    if (row.size() != cols) {
      throw std::runtime_error("model file: ragged matrix rows");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      m(i, j) = row.at(j).get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json &node) {
  if (!node.is_array()) {
    throw std::runtime_error("model file: expected a numeric array");
  }
  Eigen::VectorXd v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) {
    v(i) = node.at(i).get<double>();
  }
  return v;
}

// --- config sections ------------------------------------------------------

void parse_train(const json &node, train::TrainConfig &out) {
  check_keys(node,
             {"n_pre", "n_ppp", "n_post", "lr_main", "lr_logits", "mc_samples",
              "baseline_decay", "minibatch", "seed", "alpha", "extraction",
              "optimize_z_during_ppp"},
             "train");
  read_field(node, "n_pre", out.n_pre);
  read_field(node, "n_ppp", out.n_ppp);
  read_field(node, "n_post", out.n_post);
  read_field(node, "lr_main", out.lr_main);
  read_field(node, "lr_logits", out.lr_logits);
  read_field(node, "mc_samples", out.mc_samples);
  read_field(node, "baseline_decay", out.baseline_decay);
  read_field(node, "minibatch", out.minibatch);
  read_field(node, "seed", out.seed);
  read_field(node, "alpha", out.alpha);
  read_field(node, "optimize_z_during_ppp", out.optimize_z_during_ppp);
  if (node.contains("extraction")) {
    std::string mode = node.at("extraction").get<std::string>();
    if (mode == "threshold") {
      out.extraction = train::ExtractionMode::Threshold;
    } else if (mode == "sample") {
      out.extraction = train::ExtractionMode::Sample;
    } else {
      throw std::runtime_error("config: extraction must be 'threshold' or "
                               "'sample', got '" +
                               mode + "'");
    }
  }
}

void parse_synth(const json &node, data::SynthSpec &out) {
  check_keys(node, {"condition", "intensity", "n", "seed", "sigma", "gamma"},
             "synth");
  if (node.contains("condition")) {
    out.condition =
        data::condition_from_string(node.at("condition").get<std::string>());
  }
  read_field(node, "intensity", out.intensity);
  read_field(node, "n", out.n);
  read_field(node, "seed", out.seed);
  read_field(node, "sigma", out.sigma);
  read_field(node, "gamma", out.gamma);
}

BoundMode mode_from_string(const std::string &mode) {
  if (mode == "collapsed") {
    return BoundMode::Collapsed;
  }
  if (mode == "uncollapsed") {
    return BoundMode::Uncollapsed;
  }
  throw std::runtime_error(
      "config: mode must be 'collapsed' or 'uncollapsed', got '" + mode + "'");
}

void parse_model(const json &node, ModelConfig &out) {
  check_keys(node, {"candidates", "mode", "widths", "concat_input"}, "model");
  read_field(node, "candidates", out.candidates);
  read_field(node, "widths", out.widths);
  read_field(node, "concat_input", out.concat_input);
  if (node.contains("mode")) {
    out.mode = mode_from_string(node.at("mode").get<std::string>());
  }
}

void parse_experiment(const json &node, ExperimentConfig &out) {
  check_keys(node,
             {"condition", "intensities", "baseline_m", "n", "seeds",
              "base_seed", "output_dir"},
             "experiment");
  read_field(node, "condition", out.condition);
  read_field(node, "intensities", out.intensities);
  read_field(node, "baseline_m", out.baseline_m);
  read_field(node, "n", out.n);
  read_field(node, "seeds", out.seeds);
  read_field(node, "base_seed", out.base_seed);
  read_field(node, "output_dir", out.output_dir);
}

} // namespace

AppConfig parse_config(const std::string &json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw std::runtime_error(std::string("config: parse error: ") + e.what());
  }
  check_keys(root, {"train", "synth", "model", "experiment", "target"},
             "top level");
  AppConfig out;
  if (root.contains("train")) {
    parse_train(root.at("train"), out.train);
  }
  if (root.contains("synth")) {
    parse_synth(root.at("synth"), out.synth);
  }
  if (root.contains("model")) {
    parse_model(root.at("model"), out.model);
  }
  if (root.contains("experiment")) {
    parse_experiment(root.at("experiment"), out.experiment);
  }
  read_field(root, "target", out.target);
  return out;
}

AppConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

namespace {

json svgp_to_json(const SvgpModel &m) {
  return json{{"inducing_candidates", to_json(m.inducing_candidates)},
              {"log_lengthscales", to_json(m.kernel.log_lengthscales)},
              {"log_variance", m.kernel.log_variance},
              {"log_noise_variance", m.log_noise_variance},
              {"var_mean", to_json(m.var_mean)},
              {"var_factor_strict", to_json(m.var_factor_strict)},
              {"var_factor_log_diag", to_json(m.var_factor_log_diag)},
              {"mode", m.mode == BoundMode::Collapsed ? "collapsed"
                                                      : "uncollapsed"}};
}

SvgpModel svgp_from_json(const json &node) {
  SvgpModel m;
  m.inducing_candidates = matrix_from_json(node.at("inducing_candidates"));
  m.kernel.log_lengthscales = vector_from_json(node.at("log_lengthscales"));
  m.kernel.log_variance = node.at("log_variance").get<double>();
  m.log_noise_variance = node.at("log_noise_variance").get<double>();
  m.var_mean = vector_from_json(node.at("var_mean"));
  m.var_factor_strict = matrix_from_json(node.at("var_factor_strict"));
  m.var_factor_log_diag = vector_from_json(node.at("var_factor_log_diag"));
  m.mode = mode_from_string(node.at("mode").get<std::string>());
  return m;
}

json layer_to_json(const dgp::DgpLayer &layer) {
  json dims = json::array();
  for (int d = 0; d < layer.output_dim; ++d) {
    dims.push_back(json{
        {"var_mean", to_json(layer.var_mean[d])},
        {"var_factor_strict", to_json(layer.var_factor_strict[d])},
        {"var_factor_log_diag", to_json(layer.var_factor_log_diag[d])}});
  }
  return json{{"candidates", to_json(layer.candidates)},
              {"log_lengthscales", to_json(layer.kernel.log_lengthscales)},
              {"log_variance", layer.kernel.log_variance},
              {"output_dim", layer.output_dim},
              {"dims", std::move(dims)}};
}

dgp::DgpLayer layer_from_json(const json &node) {
  dgp::DgpLayer layer;
  layer.candidates = matrix_from_json(node.at("candidates"));
  layer.kernel.log_lengthscales =
      vector_from_json(node.at("log_lengthscales"));
  layer.kernel.log_variance = node.at("log_variance").get<double>();
  layer.output_dim = node.at("output_dim").get<int>();
  for (const json &dim : node.at("dims")) {
    layer.var_mean.push_back(vector_from_json(dim.at("var_mean")));
    layer.var_factor_strict.push_back(
        matrix_from_json(dim.at("var_factor_strict")));
    layer.var_factor_log_diag.push_back(
        vector_from_json(dim.at("var_factor_log_diag")));
  }
  if (static_cast<int>(layer.var_mean.size()) != layer.output_dim) {
    throw std::runtime_error("model file: layer dims/output_dim mismatch");
  }
  return layer;
}

json stats_to_json(const data::Standardizer &s) {
  json scaled = json::array();
  for (bool flag : s.x_scaled) {
    scaled.push_back(flag);
  }
  return json{{"x_mean", to_json(s.x_mean)}, {"x_sd", to_json(s.x_sd)},
              {"x_scaled", std::move(scaled)}, {"y_mean", s.y_mean},
              {"y_sd", s.y_sd},               {"y_scaled", s.y_scaled}};
}

data::Standardizer stats_from_json(const json &node) {
  data::Standardizer s;
  s.x_mean = vector_from_json(node.at("x_mean"));
  s.x_sd = vector_from_json(node.at("x_sd"));
  for (const json &flag : node.at("x_scaled")) {
    s.x_scaled.push_back(flag.get<bool>());
  }
  s.y_mean = node.at("y_mean").get<double>();
  s.y_sd = node.at("y_sd").get<double>();
  s.y_scaled = node.at("y_scaled").get<bool>();
  return s;
}

} // namespace

std::string to_json(const ModelBundle &bundle) {
  json root{{"format", "asvgp-model"}, {"version", kModelFormatVersion}};
  root["kind"] = bundle.kind;
  if (bundle.kind == "svgp") {
    root["svgp"] = svgp_to_json(bundle.svgp);
  } else if (bundle.kind == "dgp") {
    json layers = json::array();
    for (const dgp::DgpLayer &layer : bundle.dgp.layers) {
      layers.push_back(layer_to_json(layer));
    }
    root["dgp"] = json{{"layers", std::move(layers)},
                       {"log_noise_variance", bundle.dgp.log_noise_variance},
                       {"concat_input", bundle.dgp.concat_input},
                       {"observed_dim", bundle.dgp.observed_dim}};
  } else {
    throw std::runtime_error("model file: unknown kind '" + bundle.kind + "'");
  }
  json posteriors = json::array();
  for (const pp::PppPosterior &post : bundle.posteriors) {
    posteriors.push_back(to_json(post.logits));
  }
  root["posteriors"] = std::move(posteriors);
  json subsets = json::array();
  for (const SubsetIndex &subset : bundle.subsets) {
    subsets.push_back(subset.indices);
  }
  root["subsets"] = std::move(subsets);
  root["stats"] = stats_to_json(bundle.stats);
  return root.dump(2);
}

ModelBundle bundle_from_json(const std::string &json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw std::runtime_error(std::string("model file: parse error: ") +
                             e.what());
  }
  if (!root.is_object() || root.value("format", "") != "asvgp-model") {
    throw std::runtime_error("model file: missing 'format: asvgp-model' tag");
  }
  int version = root.value("version", -1);
  if (version != kModelFormatVersion) {
    throw std::runtime_error(
        "model file: version " + std::to_string(version) +
        " is not supported (expected " +
        std::to_string(kModelFormatVersion) + ")");
  }
  ModelBundle bundle;
  bundle.kind = root.at("kind").get<std::string>();
  if (bundle.kind == "svgp") {
    bundle.svgp = svgp_from_json(root.at("svgp"));
  } else if (bundle.kind == "dgp") {
    const json &d = root.at("dgp");
    for (const json &layer : d.at("layers")) {
      bundle.dgp.layers.push_back(layer_from_json(layer));
    }
    bundle.dgp.log_noise_variance = d.at("log_noise_variance").get<double>();
    bundle.dgp.concat_input = d.at("concat_input").get<bool>();
    bundle.dgp.observed_dim = d.at("observed_dim").get<int>();
  } else {
    throw std::runtime_error("model file: unknown kind '" + bundle.kind + "'");
  }
  for (const json &post : root.at("posteriors")) {
    pp::PppPosterior p;
    p.logits = vector_from_json(post);
    bundle.posteriors.push_back(std::move(p));
  }
  for (const json &subset : root.at("subsets")) {
    bundle.subsets.push_back(SubsetIndex(subset.get<std::vector<int>>()));
  }
  bundle.stats = stats_from_json(root.at("stats"));
  return bundle;
}

void save_model(const std::string &path, const ModelBundle &bundle) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("model file: cannot open " + path);
  }
  out << to_json(bundle) << "\n";
}

ModelBundle load_model(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("model file: cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return bundle_from_json(buffer.str());
}

void write_history(const std::string &path,
                   const train::TrainHistory &history) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("history: cannot open " + path);
  }
  for (const train::EpochRecord &r : history.records) {
    json line{{"epoch", r.epoch},
              {"phase", r.phase},
              {"elbo", r.objective},
              {"ppp_kl", r.ppp_kl},
              {"expected_M", r.expected_cardinality},
              {"wall_ms", r.wall_ms}};
    out << line.dump() << "\n";
  }
  for (const std::string &event : history.events) {
    out << json{{"event", event}}.dump() << "\n";
  }
}

namespace {

json record_to_json(const RunRecord &r, bool include_wall) {
  json line{{"condition", r.condition},
            {"intensity", r.intensity},
            {"seed", r.seed},
            {"method", r.method},
            {"expected_M", r.expected_cardinality},
            {"subset_size", r.subset_size},
            {"final_elbo", r.final_elbo},
            {"posterior_gap", r.posterior_gap}};
  if (r.method == "fixed-M") {
    line["fixed_m"] = r.fixed_m;
  }
  if (include_wall) {
    line["wall_ms"] = r.wall_ms;
  }
  if (!r.error.empty()) {
    line["error"] = r.error;
  }
  return line;
}

} // namespace

void write_results(const std::string &path,
                   const std::vector<RunRecord> &records) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("results: cannot open " + path);
  }
  for (const RunRecord &r : records) {
    out << record_to_json(r, true).dump() << "\n";
  }
}

void write_long_table(const std::string &path,
                      const std::vector<RunRecord> &records) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("results: cannot open " + path);
  }
  out.precision(17);
  out << "condition,intensity,seed,method,metric,value\n";
  for (const RunRecord &r : records) {
    if (!r.error.empty()) {
      continue;
    }
    auto row = [&](const char *metric, double value) {
      out << r.condition << "," << r.intensity << "," << r.seed << ","
          << r.method << "," << metric << "," << value << "\n";
    };
    row("expected_M", r.expected_cardinality);
    row("subset_size", r.subset_size);
    row("final_elbo", r.final_elbo);
    row("posterior_gap", r.posterior_gap);
  }
}

std::string results_fingerprint(const std::vector<RunRecord> &records) {
  std::string out;
  for (const RunRecord &r : records) {
    out += record_to_json(r, false).dump();
    out += "\n";
  }
  return out;
}

} // namespace serialize
} // namespace asvgp
