#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "imfbridge/gaussian.hpp"
#include "imfbridge/projection.hpp"
#include "imfbridge/reference.hpp"

namespace imfb {

/// Malformed or semantically invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A marginal given either as one Gaussian or as a named mixture.
struct MarginalSpec {
  bool is_mixture = false;
  std::vector<double> weights;
  std::vector<GaussianDist> components;

  const GaussianDist& gaussian() const { return components.front(); }
};

enum class Algorithm { IMF, DSBM };

struct ParticleSettings {
  int count = 100000;
  int steps = 2000;
};

struct ExperimentConfig {
  MarginalSpec mu;
  MarginalSpec nu;
  ReferenceKind reference = ReferenceKind::Brownian;
  std::optional<Mat> rate_matrix;
  double horizon = 0.0;
  int iterations = 0;
  Algorithm algorithm = Algorithm::IMF;
  OdeOptions ode;
  OracleOptions oracle;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  ParticleSettings particles;
  int threads = 0;

  int dim() const noexcept { return mu.components.front().dim(); }
  ReferenceProcess make_reference() const;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

}  // namespace imfb
