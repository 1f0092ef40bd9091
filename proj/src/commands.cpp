#include "imfbridge/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <ostream>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "imfbridge/config.hpp"
#include "imfbridge/errors.hpp"
#include "imfbridge/particle.hpp"
#include "imfbridge/projection.hpp"
#include "imfbridge/rates.hpp"

namespace imfb {

void init_logging() {
  auto logger = spdlog::stderr_color_mt("imf-bridge");
  logger->set_pattern("[%l] %v");
  const char* env = std::getenv("IMF_BRIDGE_LOG");
  logger->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
  spdlog::set_default_logger(logger);
}

std::string csv_number(double v) {
  if (std::isnan(v)) return {};
  return fmt::format("{:.17g}", v);
}

namespace {

const char* bool_str(bool b) { return b ? "true" : "false"; }

// Maps library failures onto exit codes.
template <class Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return is_numerical_failure(e.code()) ? kExitNumerical : kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

class CsvSink {
 public:
  CsvSink(const std::optional<std::string>& path, std::ostream& fallback) {
    if (path) {
      file_.open(*path, std::ios::binary | std::ios::trunc);
      if (!file_) throw ConfigError(fmt::format("cannot open output file '{}'", *path));
    }
    stream_ = path ? &file_ : &fallback;
  }
  std::ostream& stream() { return *stream_; }
  void finish() {
    stream_->flush();
    if (!*stream_) throw std::runtime_error("failed writing CSV output");
  }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

}  // namespace

int run_converge(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    if (cfg.mu.is_mixture || cfg.nu.is_mixture) {
      throw ConfigError("converge needs Gaussian marginals; mixtures have no closed-form bridge");
    }
    const auto output = overrides.output ? overrides.output : cfg.output;
    const ReferenceProcess ref = cfg.make_reference();
    const GaussianDist& mu = cfg.mu.gaussian();
    const GaussianDist& nu = cfg.nu.gaussian();
    const GaussianCoupling pi0 = GaussianCoupling::product(mu, nu);
    spdlog::info("running {} for {} iterations, T={}",
                 cfg.algorithm == Algorithm::IMF ? "imf" : "dsbm", cfg.iterations, cfg.horizon);
    const IMFTrace trace =
        cfg.algorithm == Algorithm::IMF
            ? imf_run(pi0, mu, nu, ref, cfg.horizon, cfg.iterations, cfg.ode, cfg.oracle)
            : dsbm_run(pi0, mu, nu, ref, cfg.horizon, cfg.iterations, cfg.ode, cfg.oracle);

    CsvSink sink(output, out);
    std::ostream& csv = sink.stream();
    csv << "n,kl_to_star,ratio,bound,marginal_error\n";
    for (const IMFRecord& r : trace.iterations) {
      csv << r.n << ',' << csv_number(r.kl_to_star) << ',' << csv_number(r.ratio) << ','
          << csv_number(r.bound) << ',' << csv_number(r.marginal_error) << '\n';
    }
    sink.finish();

    std::ostream& summary = output ? out : err;
    summary << fmt::format("rate={} valid={} theorem={} threshold_T={} L_U={} alpha={} kl_floor={}\n",
                           csv_number(trace.rate.rate), bool_str(trace.rate.valid),
                           to_string(trace.rate.theorem), csv_number(trace.rate.threshold_T),
                           csv_number(trace.constants.L_U), csv_number(trace.constants.alpha),
                           csv_number(trace.kl_floor));
    return static_cast<int>(kExitOk);
  });
}

int run_bounds(const BoundsArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const double beta_mu = args.beta_mu.value_or(kInf);
    const double beta_nu = args.beta_nu.value_or(kInf);
    RateBound bound{};
    if (args.theorem == "t1") {
      bound = strong_rate(args.alpha_mu, args.alpha_nu, kInf, kInf, args.alpha, args.L_U, args.horizon);
    } else if (args.theorem == "t5") {
      bound = strong_rate(args.alpha_mu, args.alpha_nu, beta_mu, beta_nu, args.alpha, args.L_U,
                          args.horizon);
    } else if (args.theorem == "t2") {
      bound = weak_rate(args.alpha_mu, args.alpha_nu, kInf, kInf, args.alpha, args.L_mu, args.L_nu,
                        args.L, args.L_U, args.horizon);
    } else if (args.theorem == "t6") {
      bound = weak_rate(args.alpha_mu, args.alpha_nu, beta_mu, beta_nu, args.alpha, args.L_mu,
                        args.L_nu, args.L, args.L_U, args.horizon);
    } else {
      throw ConfigError(fmt::format("unknown theorem '{}' (expected t1, t2, t5 or t6)", args.theorem));
    }
    CsvSink sink(args.output, out);
    sink.stream() << "theorem,rate,valid,threshold_T,alpha_phi,alpha_psi\n"
                  << args.theorem << ',' << csv_number(bound.rate) << ',' << bool_str(bound.valid)
                  << ',' << csv_number(bound.threshold_T) << ',' << csv_number(bound.alpha_phi) << ','
                  << csv_number(bound.alpha_psi) << '\n';
    sink.finish();
    return static_cast<int>(kExitOk);
  });
}

namespace {

struct MomentRow {
  double t;
  std::string quantity;
  double analytic;
  double empirical;
  double se;
  bool pass;
};

void add_rows(std::vector<MomentRow>& rows, double t, const std::string& label, const Vec& mean,
              const Mat& cov, const ParticleEnsemble& e) {
  const EnsembleMoments m = ensemble_moments(e);
  const int d = static_cast<int>(mean.size());
  auto name = [&](const char* what, int c) {
    return d == 1 ? fmt::format("{}_{}", label, what) : fmt::format("{}_{}[{}]", label, what, c);
  };
  auto row = [&](std::string q, double a, double emp, double se) {
    rows.push_back(MomentRow{t, std::move(q), a, emp, se, std::abs(emp - a) <= 4.0 * se});
  };
  for (int c = 0; c < d; ++c) row(name("mean", c), mean[c], m.mean[c], m.se_mean[c]);
  for (int c = 0; c < d; ++c) row(name("var", c), cov(c, c), m.cov(c, c), m.se_var[c]);
}

}  // namespace

int run_particle(const std::string& config_path, const RunOverrides& overrides, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto seed = overrides.seed ? overrides.seed : cfg.seed;
    if (!seed) throw ConfigError("particle needs a seed (config field 'seed' or --seed)");
    const auto output = overrides.output ? overrides.output : cfg.output;
    const int threads = overrides.threads.value_or(cfg.threads);
    if (threads < 0) throw ConfigError("threads must be nonnegative");
    const ReferenceProcess ref = cfg.make_reference();
    const double T = cfg.horizon;
    const int n = cfg.particles.count;
    const int steps = cfg.particles.steps;
    const std::vector<double> interior{T / 4.0, T / 2.0, 3.0 * T / 4.0};
    const int d = cfg.dim();

    const MixtureCoupling pi = MixtureCoupling::product(cfg.mu.weights, cfg.mu.components,
                                                        cfg.nu.weights, cfg.nu.components);
    const bool gaussian = !cfg.mu.is_mixture && !cfg.nu.is_mixture;
    const EndpointSampler endpoint_sampler = mixture_sampler(pi);
    const PointSampler init = mixture_sampler(cfg.mu.weights, cfg.mu.components);

    SdeOptions sde_opts;
    sde_opts.snapshots = interior;
    sde_opts.threads = threads;
    spdlog::info("simulating {} particles over {} steps", n, steps);
    SdeResult forward;
    if (gaussian) {
      const GaussianCoupling& g = pi.components().front();
      forward = simulate_sde(AffineSchedule([&](double t) { return mimicking_drift(g, ref, T, t); }),
                             init, T, steps, n, *seed, sde_opts);
    } else {
      forward = simulate_sde(
          FieldSchedule([&](double t) { return mixture_drift_field(pi, ref, T, t); }), init,
          T, steps, n, *seed, sde_opts);
    }
    spdlog::info("sampling interpolant marginals");
    std::vector<ParticleEnsemble> bridge =
        sample_interpolant_path(endpoint_sampler, ref, T, interior, n, *seed, threads);
    const Mat ends = sample_endpoints(endpoint_sampler, n, *seed, threads);
    bridge.push_back(ParticleEnsemble{ends.rightCols(d), T, *seed});

    std::vector<MomentRow> rows;
    for (int j = 0; j < 4; ++j) {
      const double t = j < 3 ? interior[j] : T;
      const MixtureMarginal law = mixture_interpolant_marginal(pi, ref, T, t);
      const Vec mean = law.mean();
      const Mat cov = law.cov();
      add_rows(rows, t, "forward", mean, cov, j < 3 ? forward.snapshots[j] : forward.final);
      add_rows(rows, t, "bridge", mean, cov, bridge[j]);
    }

    CsvSink sink(output, out);
    std::ostream& csv = sink.stream();
    csv << "t,quantity,analytic,empirical,se,pass\n";
    bool all_pass = true;
    for (const MomentRow& r : rows) {
      all_pass = all_pass && r.pass;
      csv << csv_number(r.t) << ',' << r.quantity << ',' << csv_number(r.analytic) << ','
          << csv_number(r.empirical) << ',' << csv_number(r.se) << ',' << bool_str(r.pass) << '\n';
    }
    sink.finish();
    if (!all_pass) {
      err << "statistical check failed: at least one moment is outside 4 standard errors\n";
      return static_cast<int>(kExitStatistical);
    }
    return static_cast<int>(kExitOk);
  });
}

}  // namespace imfb
