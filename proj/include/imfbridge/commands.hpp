#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace imfb {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitStatistical = 4,
};

/// Flag overrides shared by the config-driven commands.
struct RunOverrides {
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

/// Runs the IMF or DSBM loop of a config and writes the per-iteration trace.
/// Without an output path the CSV goes to `out` and the summary to `err`.
int run_converge(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                 std::ostream& err);

struct BoundsArgs {
  std::string theorem;  // t1, t2, t5 or t6
  double alpha_mu;
  double alpha_nu;
  std::optional<double> beta_mu;
  std::optional<double> beta_nu;
  double alpha;
  double L_mu = 0.0;
  double L_nu = 0.0;
  double L = 0.0;
  double L_U;
  double horizon;
  std::optional<std::string> output;
};

int run_bounds(const BoundsArgs& args, std::ostream& out, std::ostream& err);

/// Forward-SDE versus bridge-sampled moment checks at T/4, T/2, 3T/4, T.
int run_particle(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                 std::ostream& err);

/// Configures the stderr logger from IMF_BRIDGE_LOG (trace, debug, info,
/// warn, error, off; default warn).
void init_logging();

/// 17 significant digits; NaN becomes an empty field.
std::string csv_number(double v);

}  // namespace imfb
