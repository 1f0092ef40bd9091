#include "imfbridge/config.hpp"

#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "imfbridge/errors.hpp"

namespace imfb {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(fmt::format("{}: {}", where, what));
}

const json& require(const json& node, const char* key, const std::string& where) {
  if (!node.is_object() || !node.contains(key)) fail(where, fmt::format("missing field '{}'", key));
  return node.at(key);
}

double number(const json& node, const std::string& where) {
  if (!node.is_number()) fail(where, "expected a number");
  return node.get<double>();
}

int integer(const json& node, const std::string& where) {
  if (!node.is_number_integer()) fail(where, "expected an integer");
  return node.get<int>();
}

// A scalar is accepted as a 1-vector.
Vec vector_of(const json& node, const std::string& where) {
  if (node.is_number()) return Vec::Constant(1, node.get<double>());
  if (!node.is_array() || node.empty()) fail(where, "expected a number or a non-empty array");
  Vec v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) v[i] = number(node[i], fmt::format("{}[{}]", where, i));
  return v;
}

// A scalar is accepted as a 1x1 matrix.
Mat matrix_of(const json& node, const std::string& where) {
  if (node.is_number()) return Mat::Constant(1, 1, node.get<double>());
  if (!node.is_array() || node.empty()) fail(where, "expected a number or an array of rows");
  const std::size_t rows = node.size();
  Mat m(rows, rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = node[i];
    if (!row.is_array() || row.size() != rows) fail(where, "matrix must be square");
    for (std::size_t j = 0; j < rows; ++j) m(i, j) = number(row[j], fmt::format("{}[{}][{}]", where, i, j));
  }
  return m;
}

GaussianDist gaussian_of(const json& node, const std::string& where) {
  const Vec mean = vector_of(require(node, "mean", where), where + ".mean");
  const Mat cov = matrix_of(require(node, "cov", where), where + ".cov");
  if (cov.rows() != mean.size()) fail(where, "mean and cov dimensions differ");
  try {
    GaussianDist g(mean, cov);
    if (Eigen::LLT<Mat>(cov).info() != Eigen::Success) fail(where, "cov is not positive definite");
    return g;
  } catch (const Error& e) {
    fail(where, e.what());
  }
}

MarginalSpec marginal_of(const json& node, const std::string& where) {
  MarginalSpec spec;
  if (node.is_object() && node.contains("mixture")) {
    const json& mix = node.at("mixture");
    const json& weights = require(mix, "weights", where + ".mixture");
    const json& comps = require(mix, "components", where + ".mixture");
    if (!weights.is_array() || !comps.is_array() || weights.size() != comps.size() || comps.empty()) {
      fail(where, "mixture needs equally many weights and components");
    }
    spec.is_mixture = true;
    double total = 0.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const double w = number(weights[k], fmt::format("{}.mixture.weights[{}]", where, k));
      if (!(w >= 0.0)) fail(where, "mixture weights must be nonnegative");
      total += w;
      spec.weights.push_back(w);
      spec.components.push_back(gaussian_of(comps[k], fmt::format("{}.mixture.components[{}]", where, k)));
      if (spec.components.back().dim() != spec.components.front().dim()) {
        fail(where, "mixture components differ in dimension");
      }
    }
    if (std::abs(total - 1.0) > 1e-9) fail(where, fmt::format("mixture weights sum to {}", total));
  } else {
    spec.weights = {1.0};
    spec.components.push_back(gaussian_of(node, where));
  }
  return spec;
}

}  // namespace

ReferenceProcess ExperimentConfig::make_reference() const {
  return imfb::make_reference(reference, rate_matrix, dim());
}

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!root.is_object()) fail("config", "top level must be an object");

  ExperimentConfig cfg;
  const json& marginals = require(root, "marginals", "config");
  cfg.mu = marginal_of(require(marginals, "mu", "marginals"), "marginals.mu");
  cfg.nu = marginal_of(require(marginals, "nu", "marginals"), "marginals.nu");
  if (cfg.mu.components.front().dim() != cfg.nu.components.front().dim()) {
    fail("marginals", "mu and nu differ in dimension");
  }

  const json& ref = require(root, "reference", "config");
  const json& kind = require(ref, "kind", "reference");
  if (kind == "brownian") {
    cfg.reference = ReferenceKind::Brownian;
  } else if (kind == "ou") {
    cfg.reference = ReferenceKind::OU;
    cfg.rate_matrix = matrix_of(require(ref, "A", "reference"), "reference.A");
    if (cfg.rate_matrix->rows() != cfg.dim()) fail("reference.A", "dimension differs from the marginals");
  } else {
    fail("reference.kind", "expected \"brownian\" or \"ou\"");
  }
  try {
    (void)cfg.make_reference();
  } catch (const Error& e) {
    fail("reference", e.what());
  }

  cfg.horizon = number(require(root, "T", "config"), "T");
  if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon)) fail("T", "must be positive");
  cfg.iterations = integer(require(root, "iterations", "config"), "iterations");
  if (cfg.iterations < 1) fail("iterations", "must be at least 1");

  if (root.contains("algorithm")) {
    const json& alg = root.at("algorithm");
    if (alg == "imf") {
      cfg.algorithm = Algorithm::IMF;
    } else if (alg == "dsbm") {
      cfg.algorithm = Algorithm::DSBM;
    } else {
      fail("algorithm", "expected \"imf\" or \"dsbm\"");
    }
  }

  if (root.contains("ode")) {
    const json& ode = root.at("ode");
    if (!ode.is_object()) fail("ode", "expected an object");
    if (ode.contains("steps")) cfg.ode.steps = integer(ode.at("steps"), "ode.steps");
    if (ode.contains("eps")) cfg.ode.eps = number(ode.at("eps"), "ode.eps");
    if (ode.contains("marginal_tol")) cfg.ode.marginal_tol = number(ode.at("marginal_tol"), "ode.marginal_tol");
    if (cfg.ode.steps < 100) fail("ode.steps", "must be at least 100");
    if (cfg.ode.eps && !(*cfg.ode.eps > 0.0 && *cfg.ode.eps < cfg.horizon / 2.0)) {
      fail("ode.eps", "must lie in (0, T/2)");
    }
    if (!(cfg.ode.marginal_tol > 0.0)) fail("ode.marginal_tol", "must be positive");
  }

  if (root.contains("oracle")) {
    const json& oracle = root.at("oracle");
    if (oracle.contains("tol")) cfg.oracle.tol = number(oracle.at("tol"), "oracle.tol");
    if (oracle.contains("max_iter")) cfg.oracle.max_iter = integer(oracle.at("max_iter"), "oracle.max_iter");
    if (!(cfg.oracle.tol > 0.0) || cfg.oracle.max_iter < 1) fail("oracle", "tol and max_iter must be positive");
  }

  if (root.contains("seed")) {
    const json& seed = root.at("seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
      fail("seed", "expected a nonnegative integer");
    }
    cfg.seed = seed.get<std::uint64_t>();
  }
  if (root.contains("output")) {
    if (!root.at("output").is_string()) fail("output", "expected a path string");
    cfg.output = root.at("output").get<std::string>();
  }
  if (root.contains("particles")) {
    const json& p = root.at("particles");
    if (p.contains("N")) cfg.particles.count = integer(p.at("N"), "particles.N");
    if (p.contains("steps")) cfg.particles.steps = integer(p.at("steps"), "particles.steps");
    if (cfg.particles.count < 2) fail("particles.N", "must be at least 2");
    if (cfg.particles.steps < 4 || cfg.particles.steps % 4 != 0) {
      fail("particles.steps", "must be a positive multiple of 4");
    }
  }
  if (root.contains("threads")) {
    cfg.threads = integer(root.at("threads"), "threads");
    if (cfg.threads < 0) fail("threads", "must be nonnegative");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace imfb
