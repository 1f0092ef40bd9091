#pragma once

#include <optional>
#include <vector>

#include "imfbridge/gaussian.hpp"
#include "imfbridge/rates.hpp"
#include "imfbridge/reference.hpp"

namespace imfb {

/// y -> lin * y + offset at time t.
struct AffineDrift {
  double t;
  Mat lin;
  Vec offset;

  Vec operator()(const Vec& y) const { return lin * y + offset; }
};

/// Joint Gaussian of (Y_0, Y_t, Y_T) for the interpolant built on a coupling.
struct InterpolantTriple {
  GaussianDist joint;
  double t;
};

InterpolantTriple interpolant_triple(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                     double horizon, double t);

/// Marginal law of Y_t (valid on the closed interval [0, T]).
GaussianDist interpolant_marginal(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                  double horizon, double t);

/// Mimicking drift f_t(y) = E[phi_fwd(Y_t, Y_T) | Y_t = y] - grad U(y).
///
/// The conditional expectation is assembled from covariance blocks in which
/// the 1/(T-t) factor of the score field cancels analytically against the
/// matching O(T-t) factor of E[Y_T - M Y_t | Y_t], so the coefficients stay
/// accurate up to and including t = T.
AffineDrift mimicking_drift(const GaussianCoupling& pi, const ReferenceProcess& ref,
                            double horizon, double t);

/// Drift g_t(y) of the time reversal, evaluated at reversed time t, i.e. for
/// the state at forward time T - t:
///   g_t(y) = E[phi_bwd(Y_0, Y_{T-t}) | Y_{T-t} = y] + grad U(y).
AffineDrift backward_drift(const GaussianCoupling& pi, const ReferenceProcess& ref,
                           double horizon, double t);

/// grad log p_t^Y as an affine map.
AffineDrift interpolant_score(const GaussianCoupling& pi, const ReferenceProcess& ref,
                              double horizon, double t);

struct OdeOptions {
  int steps = 2048;
  /// Width of the terminal layer [T - eps, T]; defaults to 1e-6 T.
  std::optional<double> eps;
  double marginal_tol = 1e-6;
};

/// Coupling of (X_0, X_T) for dX = f_t(X) dt + sqrt(2) dB, X_0 ~ pi_0, with
/// the mimicking drift of pi. The joint moments of (X_0, X_t) obey a linear
/// ODE that is integrated with classical RK4 (uniform steps on [0, T - eps],
/// one step across the terminal layer). The terminal marginal is checked
/// against pi's within marginal_tol and then replaced by it exactly.
/// Throws OdeBlowup or MarginalViolation.
GaussianCoupling markovian_projection(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                      double horizon, const OdeOptions& opts = {});

/// Same construction for the time-reversed SDE driven by backward_drift and
/// started at pi's terminal marginal; the result is returned in (X_0, X_T)
/// order.
GaussianCoupling backward_projection(const GaussianCoupling& pi, const ReferenceProcess& ref,
                                     double horizon, const OdeOptions& opts = {});

struct IMFRecord {
  int n;
  GaussianCoupling coupling;
  double kl_to_star;
  /// kl_n / kl_{n-1}; NaN for n = 0 and when kl_{n-1} is at the resolution
  /// floor of the run.
  double ratio;
  /// rate^n kl_0; NaN when the rate bound is not valid.
  double bound;
  double marginal_error;
};

struct IMFTrace {
  std::vector<IMFRecord> iterations;
  GaussianCoupling pi_star;
  StructuralConstants constants;
  RateBound rate;
  /// Resolution floor of kl_to_star: the larger of KL(projection(pi*) | pi*)
  /// and the KL between (mu, nu) and the marginals of the numerical pi*.
  double kl_floor;
};

/// Sinkhorn settings used for the pi* oracle inside the loops.
struct OracleOptions {
  double tol = 1e-12;
  int max_iter = 100000;
};

IMFTrace imf_run(const GaussianCoupling& pi0, const GaussianDist& mu, const GaussianDist& nu,
                 const ReferenceProcess& ref, double horizon, int n, const OdeOptions& opts = {},
                 const OracleOptions& oracle = {});

/// Alternates forward (odd n) and backward (even n) projections.
IMFTrace dsbm_run(const GaussianCoupling& pi0, const GaussianDist& mu, const GaussianDist& nu,
                  const ReferenceProcess& ref, double horizon, int n, const OdeOptions& opts = {},
                  const OracleOptions& oracle = {});

}  // namespace imfb
