#include "imfbridge/projection.hpp"

#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <limits>

#include "imfbridge/errors.hpp"

namespace imfb {

namespace {

constexpr double kBlowup = 1e12;
constexpr double kSingularCondition = 1e12;

// Moments of Y_t together with its covariances against the endpoints.
struct InterpolantBlocks {
  Vec mean_t;
  Mat cov_t;
  Mat cov_0t;  // Cov(Y_0, Y_t)
  Mat cov_Tt;  // Cov(Y_T, Y_t)
};

void require_closed_interval(double t, double horizon, const char* what) {
  if (!(horizon > 0.0) || !(t >= 0.0) || !(t <= horizon)) {
    throw Error(Errc::InvalidTimeOrder,
                fmt::format("{}: need 0 <= t <= T, got t={}, T={}", what, t, horizon));
  }
}

void require_dims(const GaussianCoupling& pi, const ReferenceProcess& ref) {
  if (pi.dim() != ref.dim()) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("coupling dimension {} vs reference dimension {}", pi.dim(), ref.dim()));
  }
}

InterpolantBlocks blocks_at(const GaussianCoupling& pi, const ReferenceProcess& ref,
                            double horizon, double t) {
  // Y_t = P0 Y_0 + PT Y_T + xi with xi ~ N(0, Sb) independent of the endpoints.
  const BridgeConditional bc = bridge_coefficients(ref, t, horizon);
  const Mat& P0 = bc.from_initial;
  const Mat& PT = bc.from_terminal;
  InterpolantBlocks out;
  out.cov_0t = pi.cov00() * P0 + pi.cov0T() * PT;
  out.cov_Tt = pi.covT0() * P0 + pi.covTT() * PT;
  out.cov_t = symmetrized(P0 * out.cov_0t + PT * out.cov_Tt + bc.cov);
  out.mean_t = P0 * pi.mean0() + PT * pi.meanT();
  return out;
}

Mat checked_inverse(const Mat& cov) {
  if (condition_number(cov) > kSingularCondition) {
    throw Error(Errc::SingularBlock, "interpolant marginal covariance is numerically singular");
  }
  return spd_inverse(cov);
}

struct MomentState {
  Vec mean;
  Mat cross;  // Cov(start state, current state)
  Mat cov;
};

MomentState derivative(const AffineDrift& f, const MomentState& s) {
  const int d = static_cast<int>(s.mean.size());
  return MomentState{f.lin * s.mean + f.offset, s.cross * f.lin.transpose(),
                     f.lin * s.cov + s.cov * f.lin.transpose() + 2.0 * Mat::Identity(d, d)};
}

MomentState advance(const MomentState& s, const MomentState& k, double h) {
  return MomentState{s.mean + h * k.mean, s.cross + h * k.cross, s.cov + h * k.cov};
}

MomentState rk4_step(const std::function<AffineDrift(double)>& drift, double t, double h,
                     const MomentState& s) {
  const AffineDrift f_start = drift(t);
  const AffineDrift f_mid = drift(t + 0.5 * h);
  const AffineDrift f_end = drift(t + h);
  const MomentState k1 = derivative(f_start, s);
  const MomentState k2 = derivative(f_mid, advance(s, k1, 0.5 * h));
  const MomentState k3 = derivative(f_mid, advance(s, k2, 0.5 * h));
  const MomentState k4 = derivative(f_end, advance(s, k3, h));
  return MomentState{s.mean + h / 6.0 * (k1.mean + 2.0 * k2.mean + 2.0 * k3.mean + k4.mean),
                     s.cross + h / 6.0 * (k1.cross + 2.0 * k2.cross + 2.0 * k3.cross + k4.cross),
                     symmetrized(s.cov + h / 6.0 * (k1.cov + 2.0 * k2.cov + 2.0 * k3.cov + k4.cov))};
}

void check_blowup(const MomentState& s, double t) {
  const double big = std::max({max_abs(s.mean), max_abs(s.cross), max_abs(s.cov)});
  if (!s.mean.allFinite() || !s.cross.allFinite() || !s.cov.allFinite() || big > kBlowup) {
    throw Error(Errc::OdeBlowup, fmt::format("moment ODE diverged at t={} (max entry {})", t, big));
  }
}

MomentState integrate_moments(const std::function<AffineDrift(double)>& drift, const Vec& mean0,
                              const Mat& cov0, double horizon, const OdeOptions& opts) {
  if (opts.steps < 100) {
    throw Error(Errc::InvalidArgument, fmt::format("ODE needs at least 100 steps, got {}", opts.steps));
  }
  const double eps = opts.eps.value_or(1e-6 * horizon);
  if (!(eps > 0.0) || !(eps < horizon / 2.0)) {
    throw Error(Errc::InvalidArgument, fmt::format("eps must lie in (0, T/2), got {}", eps));
  }
  const double t_layer = horizon - eps;
  const double h = t_layer / opts.steps;
  MomentState s{mean0, cov0, cov0};
  for (int i = 0; i < opts.steps; ++i) {
    const double t = i * h;
    s = rk4_step(drift, t, h, s);
    check_blowup(s, t + h);
  }
  s = rk4_step(drift, t_layer, eps, s);
  check_blowup(s, horizon);
  return s;
}

// Assemble the output coupling, pinning the far marginal to its exact law.
GaussianCoupling close_coupling(const Vec& start_mean, const Mat& start_cov, const Vec& end_mean,
                                const Mat& end_cov, const MomentState& s, double marginal_tol,
                                bool start_is_initial) {
  const double err = std::max(max_abs(s.mean - end_mean), max_abs(s.cov - end_cov));
  if (!(err <= marginal_tol)) {
    throw Error(Errc::MarginalViolation,
                fmt::format("terminal marginal error {} exceeds tolerance {}", err, marginal_tol));
  }
  const int d = static_cast<int>(start_mean.size());
  Vec mean(2 * d);
  Mat cov(2 * d, 2 * d);
  if (start_is_initial) {
    mean << start_mean, end_mean;
    cov << start_cov, s.cross, s.cross.transpose(), end_cov;
  } else {
    mean << end_mean, start_mean;
    cov << end_cov, s.cross.transpose(), s.cross, start_cov;
  }
  cov = symmetrized(cov);
  if (Eigen::LLT<Mat>(cov).info() != Eigen::Success) {
    throw Error(Errc::MarginalViolation, "projected coupling is not positive definite");
  }
  return {mean, cov};
}

}  // namespace

GaussianDist interpolant_marginal(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                  double horizon, double t) {
  require_dims(pi, ref);
  require_closed_interval(t, horizon, "interpolant_marginal");
  const InterpolantBlocks b = blocks_at(pi, ref, horizon, t);
  return {b.mean_t, b.cov_t};
}

InterpolantTriple interpolant_triple(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                     double horizon, double t) {
  require_dims(pi, ref);
  if (!(t > 0.0) || !(t < horizon)) {
    throw Error(Errc::InvalidTimeOrder,
                fmt::format("interpolant_triple: need 0 < t < T, got t={}, T={}", t, horizon));
  }
  const int d = pi.dim();
  const InterpolantBlocks b = blocks_at(pi, ref, horizon, t);
  Vec mean(3 * d);
  mean << pi.mean0(), b.mean_t, pi.meanT();
  Mat cov(3 * d, 3 * d);
  cov << pi.cov00(), b.cov_0t, pi.cov0T(),
         b.cov_0t.transpose(), b.cov_t, b.cov_Tt.transpose(),
         pi.covT0(), b.cov_Tt, pi.covTT();
  return InterpolantTriple{GaussianDist(mean, symmetrized(cov)), t};
}

AffineDrift mimicking_drift(const GaussianCoupling& pi, const ReferenceProcess& ref,
                            double horizon, double t) {
  require_dims(pi, ref);
  require_closed_interval(t, horizon, "mimicking_drift");
  const InterpolantBlocks b = blocks_at(pi, ref, horizon, t);

  // With S = Sigma_{T|t}, G = Sigma_{T|0}^-1 and every reference matrix
  // commuting,  Cov(Y_T - M Y_t, Y_t) = S (G K - G M_T J - M Sigma_{t|0} G)
  // and E[Y_T] - M E[Y_t] = S G (m_T - M_T m_0); the S cancels the S^-1 of
  // the score field.
  const Mat G = ref.spectral([horizon](double l) { return 1.0 / transition_var_scalar(l, horizon); });
  const Mat M = ref.propagator(horizon - t);
  const Mat M_full = ref.propagator(horizon);
  const Mat S_t0 = ref.transition_cov(t);
  const Mat reduced = G * b.cov_Tt - G * M_full * b.cov_0t - M * S_t0 * G;
  const Mat gain = reduced * checked_inverse(b.cov_t);

  AffineDrift out{t, 2.0 * M * gain - ref.grad_potential(),
                  2.0 * M * G * (pi.meanT() - M_full * pi.mean0()) - 2.0 * M * gain * b.mean_t};
  return out;
}

AffineDrift backward_drift(const GaussianCoupling& pi, const ReferenceProcess& ref,
                           double horizon, double t) {
  require_dims(pi, ref);
  require_closed_interval(t, horizon, "backward_drift");
  const double tau = horizon - t;  // forward time of the state
  const InterpolantBlocks b = blocks_at(pi, ref, horizon, tau);

  // With S' = Sigma_{tau|0}: Cov(Y_tau - M_tau Y_0, Y_tau)
  //   = S' (-M_{T-tau}^2 G M_tau J + M_{T-tau} G K + Sigma_{T|tau} G)
  // and E[Y_tau] - M_tau m_0 = S' M_{T-tau} G (m_T - M_T m_0).
  const Mat G = ref.spectral([horizon](double l) { return 1.0 / transition_var_scalar(l, horizon); });
  const Mat M_rest = ref.propagator(horizon - tau);
  const Mat M_tau = ref.propagator(tau);
  const Mat M_full = ref.propagator(horizon);
  const Mat S_rest = ref.transition_cov(horizon - tau);
  const Mat reduced =
      -M_rest * M_rest * G * M_tau * b.cov_0t + M_rest * G * b.cov_Tt + S_rest * G;
  const Mat gain = reduced * checked_inverse(b.cov_t);

  AffineDrift out{t, -2.0 * gain + ref.grad_potential(),
                  2.0 * gain * b.mean_t - 2.0 * M_rest * G * (pi.meanT() - M_full * pi.mean0())};
  return out;
}

AffineDrift interpolant_score(const GaussianCoupling& pi, const ReferenceProcess& ref,
                              double horizon, double t) {
  require_dims(pi, ref);
  require_closed_interval(t, horizon, "interpolant_score");
  const InterpolantBlocks b = blocks_at(pi, ref, horizon, t);
  const Mat prec = checked_inverse(b.cov_t);
  return AffineDrift{t, -prec, prec * b.mean_t};
}

GaussianCoupling markovian_projection(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                      double horizon, const OdeOptions& opts) {
  require_dims(pi, ref);
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  auto drift = [&](double t) { return mimicking_drift(pi, ref, horizon, t); };
  const MomentState s = integrate_moments(drift, pi.mean0(), pi.cov00(), horizon, opts);
  return close_coupling(pi.mean0(), pi.cov00(), pi.meanT(), pi.covTT(), s, opts.marginal_tol, true);
}

GaussianCoupling backward_projection(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                     double horizon, const OdeOptions& opts) {
  require_dims(pi, ref);
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  auto drift = [&](double t) { return backward_drift(pi, ref, horizon, t); };
  const MomentState s = integrate_moments(drift, pi.meanT(), pi.covTT(), horizon, opts);
  return close_coupling(pi.meanT(), pi.covTT(), pi.mean0(), pi.cov00(), s, opts.marginal_tol, false);
}

namespace {

using Projector = std::function<GaussianCoupling(int k, const GaussianCoupling&)>;

IMFTrace run_loop(const GaussianCoupling& pi0, const GaussianDist& mu, const GaussianDist& nu,
                  const ReferenceProcess& ref, double horizon, int n, const OdeOptions& opts,
                  const OracleOptions& oracle, const Projector& project) {
  if (n < 1) throw Error(Errc::InvalidArgument, fmt::format("iteration count must be >= 1, got {}", n));
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  require_dims(pi0, ref);
  const double init_err = coupling_marginal_error(pi0, mu, nu);
  if (!(init_err <= 1e-8)) {
    throw Error(Errc::InvalidInitialCoupling,
                fmt::format("initial coupling marginal error {} exceeds 1e-8", init_err));
  }

  const SinkhornReport star = sinkhorn_bridge(mu, nu, ref, horizon, oracle.tol, oracle.max_iter);
  const StructuralConstants constants = structural_constants(ref, horizon);
  const double alpha_mu = 1.0 / max_eigenvalue(mu.cov());
  const double alpha_nu = 1.0 / max_eigenvalue(nu.cov());
  const RateBound rate =
      strong_rate(alpha_mu, alpha_nu, kInf, kInf, constants.alpha, constants.L_U, horizon);
  // Any coupling with marginals (mu, nu) is at least as far from pi* as its
  // marginals are from pi*'s, which are only accurate to the oracle tolerance.
  const double kl_floor = std::max(
      {kl_gaussian(markovian_projection(star.coupling, ref, horizon, opts), star.coupling),
       kl_gaussian(mu, star.coupling.initial()), kl_gaussian(nu, star.coupling.terminal())});

  IMFTrace trace{{}, star.coupling, constants, rate, kl_floor};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double kl0 = kl_gaussian(pi0, star.coupling);
  trace.iterations.push_back(
      IMFRecord{0, pi0, kl0, nan, rate.valid ? kl0 : nan, init_err});

  // Below this level successive KL values are dominated by the ODE error,
  // so their quotient says nothing about the contraction.
  const double resolution = std::max(1e3 * kl_floor, 1e-28);
  GaussianCoupling pi = pi0;
  for (int k = 1; k <= n; ++k) {
    pi = project(k, pi);
    const double kl = kl_gaussian(pi, star.coupling);
    const double prev = trace.iterations.back().kl_to_star;
    trace.iterations.push_back(IMFRecord{k, pi, kl, prev > resolution ? kl / prev : nan,
                                         rate.valid ? std::pow(rate.rate, k) * kl0 : nan,
                                         coupling_marginal_error(pi, mu, nu)});
  }
  return trace;
}

}  // namespace

IMFTrace imf_run(const GaussianCoupling& pi0, const GaussianDist& mu, const GaussianDist& nu,
                 const ReferenceProcess& ref, double horizon, int n, const OdeOptions& opts,
                 const OracleOptions& oracle) {
  return run_loop(pi0, mu, nu, ref, horizon, n, opts, oracle,
                  [&](int, const GaussianCoupling& pi) {
                    return markovian_projection(pi, ref, horizon, opts);
                  });
}

IMFTrace dsbm_run(const GaussianCoupling& pi0, const GaussianDist& mu, const GaussianDist& nu,
                  const ReferenceProcess& ref, double horizon, int n, const OdeOptions& opts,
                  const OracleOptions& oracle) {
  return run_loop(pi0, mu, nu, ref, horizon, n, opts, oracle,
                  [&](int k, const GaussianCoupling& pi) {
                    return k % 2 == 1 ? markovian_projection(pi, ref, horizon, opts)
                                      : backward_projection(pi, ref, horizon, opts);
                  });
}

}  // namespace imfb
