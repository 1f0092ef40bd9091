#include "imfbridge/particle.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fmt/format.h>
#include <numbers>
#include <thread>

#include "imfbridge/errors.hpp"

namespace imfb {

double RandomStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

namespace {

constexpr std::uint32_t kEndpointDomain = 0;
constexpr std::uint32_t kInitDomain = 1;
constexpr std::uint32_t kNoiseDomain = 2;
constexpr std::uint32_t kGridDomainBase = 16;

int resolve_threads(int threads, int n) {
  int t = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(t, 1, std::max(1, n));
}

// Runs body(begin, end) over contiguous particle chunks.
template <class Body>
void parallel_chunks(int n, int threads, Body&& body) {
  const int workers = resolve_threads(threads, n);
  if (workers == 1) {
    body(0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
    pool.emplace_back([&, w, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Symmetric square root; tolerates singular PSD covariances.
Mat sqrt_factor(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  const Vec vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * vals.asDiagonal();
}

Vec standard_normal(RandomStream& rs, int d) {
  Vec z(d);
  for (int i = 0; i < d; ++i) z[i] = rs.normal();
  return z;
}

void require_particles(int n) {
  if (n < 1) throw Error(Errc::InvalidArgument, fmt::format("need at least one particle, got {}", n));
}

}  // namespace

MixtureCoupling::MixtureCoupling(std::vector<double> weights, std::vector<GaussianCoupling> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty() || weights_.size() != components_.size()) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("mixture has {} weights and {} components", weights_.size(),
                            components_.size()));
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(Errc::InvalidArgument, fmt::format("mixture weight {} is not a nonnegative number", w));
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(Errc::InvalidArgument, fmt::format("mixture weights sum to {}, not 1", total));
  }
  for (double& w : weights_) w /= total;
  for (const auto& c : components_) {
    if (c.dim() != components_.front().dim()) {
      throw Error(Errc::DimensionMismatch, "mixture components have different dimensions");
    }
    if (Eigen::LLT<Mat>(c.cov()).info() != Eigen::Success) {
      throw Error(Errc::NonSPDMatrix, "mixture component covariance is not positive definite");
    }
  }
}

MixtureCoupling MixtureCoupling::product(const std::vector<double>& mu_weights,
                                         const std::vector<GaussianDist>& mu_components,
                                         const std::vector<double>& nu_weights,
                                         const std::vector<GaussianDist>& nu_components) {
  if (mu_weights.size() != mu_components.size() || nu_weights.size() != nu_components.size()) {
    throw Error(Errc::DimensionMismatch, "mixture weights and components differ in number");
  }
  std::vector<double> w;
  std::vector<GaussianCoupling> comps;
  for (std::size_t i = 0; i < mu_weights.size(); ++i) {
    for (std::size_t j = 0; j < nu_weights.size(); ++j) {
      w.push_back(mu_weights[i] * nu_weights[j]);
      comps.push_back(GaussianCoupling::product(mu_components[i], nu_components[j]));
    }
  }
  return {std::move(w), std::move(comps)};
}

PointSampler gaussian_sampler(const GaussianDist& dist) {
  const Vec mean = dist.mean();
  const Mat factor = sqrt_factor(dist.cov());
  return [mean, factor](RandomStream& rs) -> Vec {
    return mean + factor * standard_normal(rs, static_cast<int>(mean.size()));
  };
}

PointSampler point_sampler(const Vec& point) {
  return [point](RandomStream&) { return point; };
}

EndpointSampler coupling_sampler(const GaussianCoupling& pi) { return gaussian_sampler(pi.joint()); }

PointSampler mixture_sampler(const std::vector<double>& weights,
                             const std::vector<GaussianDist>& components) {
  if (weights.size() != components.size() || components.empty()) {
    throw Error(Errc::DimensionMismatch, "mixture weights and components differ in number");
  }
  std::vector<double> cumulative;
  std::vector<Vec> means;
  std::vector<Mat> factors;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    cumulative.push_back(acc);
    means.push_back(components[k].mean());
    factors.push_back(sqrt_factor(components[k].cov()));
  }
  return [cumulative, means, factors](RandomStream& rs) -> Vec {
    const double u = rs.uniform() * cumulative.back();
    std::size_t k = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
    k = std::min(k, cumulative.size() - 1);
    return means[k] + factors[k] * standard_normal(rs, static_cast<int>(means[k].size()));
  };
}

EndpointSampler mixture_sampler(const MixtureCoupling& pi) {
  std::vector<GaussianDist> joints;
  for (const auto& c : pi.components()) joints.push_back(c.joint());
  return mixture_sampler(pi.weights(), joints);
}

Mat sample_endpoints(const EndpointSampler& sampler, int n, std::uint64_t seed, int threads) {
  require_particles(n);
  RandomStream probe(seed, 0, kEndpointDomain);
  const Vec first = sampler(probe);
  Mat out(n, first.size());
  out.row(0) = first.transpose();
  parallel_chunks(n, threads, [&](int begin, int end) {
    for (int i = std::max(begin, 1); i < end; ++i) {
      RandomStream rs(seed, static_cast<std::uint64_t>(i), kEndpointDomain);
      out.row(i) = sampler(rs).transpose();
    }
  });
  return out;
}

std::vector<ParticleEnsemble> sample_interpolant_path(const EndpointSampler& sampler,
                                                      const ReferenceProcess& ref, double horizon,
                                                      const std::vector<double>& grid, int n,
                                                      std::uint64_t seed, int threads) {
  require_particles(n);
  double prev = 0.0;
  for (double t : grid) {
    if (!(t > prev) || !(t < horizon)) {
      throw Error(Errc::InvalidTimeOrder,
                  fmt::format("grid must increase strictly inside (0, {}); got {} after {}", horizon,
                              t, prev));
    }
    prev = t;
  }
  std::vector<ParticleEnsemble> out;
  if (grid.empty()) return out;

  const int d = ref.dim();
  const Mat ends = sample_endpoints(sampler, n, seed, threads);
  if (ends.cols() != 2 * d) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("endpoint sampler returns {} coordinates, expected {}", ends.cols(), 2 * d));
  }
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const BridgeConditional bc = bridge_conditional(ref, grid[j], horizon);
    const Mat factor = sqrt_factor(bc.cov);
    ParticleEnsemble e{Mat(n, d), grid[j], seed};
    const auto domain = static_cast<std::uint32_t>(kGridDomainBase + j);
    parallel_chunks(n, threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        RandomStream rs(seed, static_cast<std::uint64_t>(i), domain);
        const Vec y0 = ends.row(i).head(d).transpose();
        const Vec yT = ends.row(i).tail(d).transpose();
        e.states.row(i) =
            (bc.from_initial * y0 + bc.from_terminal * yT + factor * standard_normal(rs, d)).transpose();
      }
    });
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

// Shared Euler-Maruyama driver; step_drift(k, t, x, f) writes the drift at (t, x) into f.
template <class StepDrift>
SdeResult run_euler(StepDrift&& step_drift, const PointSampler& init, double horizon, int steps,
                    int n, std::uint64_t seed, const SdeOptions& opts) {
  if (steps < 1) throw Error(Errc::InvalidArgument, fmt::format("steps must be >= 1, got {}", steps));
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  require_particles(n);
  const double h = horizon / steps;

  std::vector<int> snap_steps;
  for (double s : opts.snapshots) {
    const double k = std::round(s / h);
    if (!(s > 0.0) || !(s < horizon) || std::abs(k * h - s) > 1e-9 * horizon) {
      throw Error(Errc::InvalidTimeOrder,
                  fmt::format("snapshot time {} is not a grid time strictly inside (0, {})", s, horizon));
    }
    snap_steps.push_back(static_cast<int>(k));
  }

  RandomStream probe(seed, 0, kInitDomain);
  const int d = static_cast<int>(init(probe).size());
  SdeResult result{ParticleEnsemble{Mat(n, d), horizon, seed}, {}};
  for (double s : opts.snapshots) result.snapshots.push_back(ParticleEnsemble{Mat(n, d), s, seed});

  const double noise_scale = std::sqrt(2.0 * h);
  parallel_chunks(n, opts.threads, [&](int begin, int end) {
    Vec x(d);
    Vec f(d);
    for (int i = begin; i < end; ++i) {
      RandomStream init_rs(seed, static_cast<std::uint64_t>(i), kInitDomain);
      RandomStream noise(seed, static_cast<std::uint64_t>(i), kNoiseDomain);
      x = init(init_rs);
      for (int k = 0; k < steps; ++k) {
        step_drift(k, k * h, x, f);
        for (int c = 0; c < d; ++c) x[c] += h * f[c] + noise_scale * noise.normal();
        if (!x.allFinite()) {
          throw Error(Errc::OdeBlowup,
                      fmt::format("particle {} became non-finite at t={}", i, (k + 1) * h));
        }
        for (std::size_t s = 0; s < snap_steps.size(); ++s) {
          if (snap_steps[s] == k + 1) result.snapshots[s].states.row(i) = x.transpose();
        }
      }
      result.final.states.row(i) = x.transpose();
    }
  });
  return result;
}

}  // namespace

SdeResult simulate_sde(const VectorDrift& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts) {
  return run_euler([&](int, double t, const Vec& x, Vec& f) { f = drift(t, x); }, init, horizon,
                   steps, n, seed, opts);
}

SdeResult simulate_sde(const AffineSchedule& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts) {
  if (steps < 1) throw Error(Errc::InvalidArgument, fmt::format("steps must be >= 1, got {}", steps));
  const double h = horizon / steps;
  std::vector<AffineDrift> table;
  table.reserve(steps);
  for (int k = 0; k < steps; ++k) table.push_back(drift(k * h));
  return run_euler(
      [&](int k, double, const Vec& x, Vec& f) {
        f.noalias() = table[k].lin * x;
        f += table[k].offset;
      },
      init, horizon, steps, n, seed, opts);
}

SdeResult simulate_sde(const FieldSchedule& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts) {
  if (steps < 1) throw Error(Errc::InvalidArgument, fmt::format("steps must be >= 1, got {}", steps));
  const double h = horizon / steps;
  std::vector<StateField> table;
  table.reserve(steps);
  for (int k = 0; k < steps; ++k) table.push_back(drift(k * h));
  return run_euler([&](int k, double, const Vec& x, Vec& f) { f = table[k](x); }, init, horizon, steps, n,
                   seed, opts);
}

McDriftEstimate mc_drift_oracle(const Mat& endpoints, const ReferenceProcess& ref, double horizon,
                                double t, const Vec& y) {
  const int d = ref.dim();
  if (endpoints.cols() != 2 * d || y.size() != d) {
    throw Error(Errc::DimensionMismatch, "endpoint pairs or probe point do not match the reference");
  }
  const int n = static_cast<int>(endpoints.rows());
  if (n < 100) {
    throw Error(Errc::InvalidArgument, fmt::format("drift oracle needs at least 100 pairs, got {}", n));
  }
  const BridgeConditional bc = bridge_conditional(ref, t, horizon);
  const Mat prec = spd_inverse(bc.cov);
  const double log_norm =
      -0.5 * spd_logdet(bc.cov) - 0.5 * d * std::log(2.0 * std::numbers::pi);
  const AffinePair field = score_fields(ref, t, horizon).forward;
  const Vec state_part = field.first * y - ref.grad_potential() * y;

  Vec logw(n);
  for (int i = 0; i < n; ++i) {
    const Vec r = y - bc.from_initial * endpoints.row(i).head(d).transpose() -
                  bc.from_terminal * endpoints.row(i).tail(d).transpose();
    logw[i] = log_norm - 0.5 * r.dot(prec * r);
  }
  const double top = logw.maxCoeff();
  if (!(top > std::log(std::numeric_limits<double>::min()))) {
    throw Error(Errc::DegenerateWeights, "every bridge density underflows at the probe point");
  }
  const Vec w = (logw.array() - top).exp().matrix();
  const Vec wn = w / w.sum();
  const double ess = 1.0 / wn.squaredNorm();
  if (ess < 10.0) {
    throw Error(Errc::DegenerateWeights, fmt::format("effective sample size {} is below 10", ess));
  }
  Mat phi(n, d);
  for (int i = 0; i < n; ++i) {
    phi.row(i) = (state_part + field.second * endpoints.row(i).tail(d).transpose()).transpose();
  }
  const Vec value = phi.transpose() * wn;
  Vec se(d);
  for (int c = 0; c < d; ++c) {
    se[c] = std::sqrt((wn.array().square() * (phi.col(c).array() - value[c]).square()).sum());
  }
  return {value, se, ess};
}

MixtureMarginal mixture_interpolant_marginal(const MixtureCoupling& pi, const ReferenceProcess& ref,
                                             double horizon, double t) {
  MixtureMarginal out;
  out.weights = pi.weights();
  for (const auto& c : pi.components()) out.components.push_back(interpolant_marginal(c, ref, horizon, t));
  return out;
}

Vec MixtureMarginal::mean() const {
  Vec m = Vec::Zero(components.front().dim());
  for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * components[k].mean();
  return m;
}

Mat MixtureMarginal::cov() const {
  const Vec m = mean();
  Mat c = Mat::Zero(m.size(), m.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const Vec dm = components[k].mean() - m;
    c += weights[k] * (components[k].cov() + dm * dm.transpose());
  }
  return c;
}

StateField mixture_drift_field(const MixtureCoupling& pi, const ReferenceProcess& ref, double horizon,
                               double t) {
  if (!(t >= 0.0) || !(t < horizon)) {
    throw Error(Errc::InvalidTimeOrder,
                fmt::format("mixture_drift: need 0 <= t < T, got t={}, T={}", t, horizon));
  }
  if (ref.dim() != pi.dim()) {
    throw Error(Errc::DimensionMismatch, "mixture and reference dimensions differ");
  }
  struct Component {
    double log_scale;  // log weight + density normalization
    Vec mean;
    Mat prec;
    AffineDrift drift;
  };
  std::vector<Component> comps;
  const int d = pi.dim();
  for (int k = 0; k < pi.size(); ++k) {
    const auto& comp = pi.components()[k];
    const GaussianDist marg = interpolant_marginal(comp, ref, horizon, t);
    comps.push_back({std::log(pi.weights()[k]) - 0.5 * spd_logdet(marg.cov()) -
                         0.5 * d * std::log(2.0 * std::numbers::pi),
                     marg.mean(), spd_inverse(marg.cov()), mimicking_drift(comp, ref, horizon, t)});
  }
  return [comps = std::move(comps), d](const Vec& y) {
    if (y.size() != d) throw Error(Errc::DimensionMismatch, "probe point dimension differs from the mixture");
    const int k_count = static_cast<int>(comps.size());
    Vec logw(k_count);
    for (int k = 0; k < k_count; ++k) {
      const Vec r = y - comps[k].mean;
      logw[k] = comps[k].log_scale - 0.5 * r.dot(comps[k].prec * r);
    }
    const double top = logw.maxCoeff();
    Vec out = Vec::Zero(d);
    double total = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const double w = std::exp(logw[k] - top);
      out += w * comps[k].drift(y);
      total += w;
    }
    return Vec(out / total);
  };
}

Vec mixture_drift(const MixtureCoupling& pi, const ReferenceProcess& ref, double horizon, double t,
                  const Vec& y) {
  return mixture_drift_field(pi, ref, horizon, t)(y);
}

EnsembleMoments ensemble_moments(const ParticleEnsemble& e) {
  const int n = e.size();
  if (n < 2) throw Error(Errc::TooFewParticles, fmt::format("need at least 2 particles, got {}", n));
  const Vec mean = e.states.colwise().mean().transpose();
  const Mat centered = e.states.rowwise() - mean.transpose();
  const Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const Vec var = cov.diagonal();
  return {mean, cov, (var / n).cwiseSqrt(), var * std::sqrt(2.0 / (n - 1))};
}

}  // namespace imfb
