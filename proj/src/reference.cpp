#include "imfbridge/reference.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "imfbridge/errors.hpp"

namespace imfb {

namespace {

void require_time_order(double s, double t, const char* what) {
  if (!(s >= 0.0) || !(t > s) || !std::isfinite(t)) {
    throw Error(Errc::InvalidTimeOrder, fmt::format("{}: need 0 <= s < t, got s={}, t={}", what, s, t));
  }
}

}  // namespace

double propagator_scalar(double lambda, double tau) { return std::exp(-2.0 * lambda * tau); }

double transition_var_scalar(double lambda, double tau) {
  if (lambda == 0.0) return 2.0 * tau;
  return -std::expm1(-4.0 * lambda * tau) / (2.0 * lambda);
}

ReferenceProcess::ReferenceProcess(ReferenceKind kind, Mat a, Vec eigvals, Mat eigvecs)
    : kind_(kind), a_(std::move(a)), eigvals_(std::move(eigvals)), eigvecs_(std::move(eigvecs)) {}

ReferenceProcess ReferenceProcess::brownian(int dim) {
  if (dim < 1) throw Error(Errc::DimensionMismatch, fmt::format("dimension must be >= 1, got {}", dim));
  return ReferenceProcess(ReferenceKind::Brownian, Mat::Zero(dim, dim), Vec::Zero(dim),
                          Mat::Identity(dim, dim));
}

ReferenceProcess ReferenceProcess::ornstein_uhlenbeck(const Mat& a) {
  if (a.rows() < 1 || a.rows() != a.cols()) {
    throw Error(Errc::DimensionMismatch, "OU rate matrix must be square and non-empty");
  }
  if (!a.allFinite() || !is_symmetric(a, 1e-12)) {
    throw Error(Errc::NonSPDMatrix, "OU rate matrix must be finite and symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized(a));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
    throw Error(Errc::NonSPDMatrix,
                fmt::format("OU rate matrix must be positive definite (min eigenvalue {})",
                            es.eigenvalues().minCoeff()));
  }
  return ReferenceProcess(ReferenceKind::OU, symmetrized(a), es.eigenvalues(), es.eigenvectors());
}

Mat ReferenceProcess::propagator(double tau) const {
  return spectral([tau](double l) { return propagator_scalar(l, tau); });
}

Mat ReferenceProcess::transition_cov(double tau) const {
  return spectral([tau](double l) { return transition_var_scalar(l, tau); });
}

ReferenceProcess make_reference(ReferenceKind kind, const std::optional<Mat>& a, int dim) {
  if (kind == ReferenceKind::Brownian) return ReferenceProcess::brownian(dim);
  if (!a) throw Error(Errc::InvalidArgument, "OU reference requires a rate matrix A");
  if (a->rows() != dim || a->cols() != dim) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("A is {}x{} but d = {}", a->rows(), a->cols(), dim));
  }
  return ReferenceProcess::ornstein_uhlenbeck(*a);
}

GaussianMap transition(const ReferenceProcess& ref, double s, double t) {
  require_time_order(s, t, "transition");
  const double tau = t - s;
  return GaussianMap{ref.propagator(tau), Vec::Zero(ref.dim()), ref.transition_cov(tau)};
}

ScoreFields score_fields(const ReferenceProcess& ref, double t, double horizon) {
  require_time_order(t, horizon, "score_fields");
  const double tau = horizon - t;
  // Both fields are Gaussian log-density gradients over the same lag T - t:
  //   grad_x log N(z; M x, S) =  M S^-1 (z - M x)
  //   grad_z log N(z; M x, S) = -S^-1 (z - M x)
  const Mat m_s_inv = ref.spectral([tau](double l) {
    return propagator_scalar(l, tau) / transition_var_scalar(l, tau);
  });
  const Mat m2_s_inv = ref.spectral([tau](double l) {
    const double m = propagator_scalar(l, tau);
    return m * m / transition_var_scalar(l, tau);
  });
  const Mat s_inv = ref.spectral([tau](double l) { return 1.0 / transition_var_scalar(l, tau); });
  ScoreFields out;
  out.forward = AffinePair{-2.0 * m2_s_inv, 2.0 * m_s_inv};
  out.backward = AffinePair{2.0 * m_s_inv, -2.0 * s_inv};
  return out;
}

BridgeConditional bridge_coefficients(const ReferenceProcess& ref, double t, double horizon) {
  // Conditioning X_t on (X_0, X_T) with X_t = M_t x_0 + e_1, X_T = M_{T-t} X_t + e_2.
  // Per eigenvalue the Schur complement reduces to ratios of transition variances:
  //   from_terminal = s(t) m(T-t) / s(T),  from_initial = s(T-t) m(t) / s(T),
  //   cov = s(t) s(T-t) / s(T).
  // Written this way every coefficient is exact at both endpoints.
  const double rest = horizon - t;
  BridgeConditional out;
  out.from_terminal = ref.spectral([=](double l) {
    return transition_var_scalar(l, t) * propagator_scalar(l, rest) / transition_var_scalar(l, horizon);
  });
  out.from_initial = ref.spectral([=](double l) {
    return transition_var_scalar(l, rest) * propagator_scalar(l, t) / transition_var_scalar(l, horizon);
  });
  out.cov = ref.spectral([=](double l) {
    return transition_var_scalar(l, t) * transition_var_scalar(l, rest) /
           transition_var_scalar(l, horizon);
  });
  return out;
}

BridgeConditional bridge_conditional(const ReferenceProcess& ref, double t, double horizon) {
  if (!(t > 0.0) || !(t < horizon)) {
    throw Error(Errc::InvalidTimeOrder,
                fmt::format("bridge_conditional: need 0 < t < T, got t={}, T={}", t, horizon));
  }
  return bridge_coefficients(ref, t, horizon);
}

StructuralConstants structural_constants(const ReferenceProcess& ref, double horizon,
                                         const ConstantsGrid& grid) {
  if (ref.kind() == ReferenceKind::Brownian) return {1.0, 0.0};
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  const Vec& lam = ref.eigenvalues();
  const int d = ref.dim();

  // L_U: sup over lags of 2 tau ||exp(-2 A tau)|| ||Sigma_tau^-1||. The bound
  // tends to 1 as tau -> 0, which the grid can only approach from below.
  double lu = 1.0;
  for (int i = 0; i < grid.lag_points; ++i) {
    const double frac = grid.lag_points == 1 ? 1.0 : static_cast<double>(i) / (grid.lag_points - 1);
    const double tau = horizon * grid.lag_min_fraction * std::pow(1.0 / grid.lag_min_fraction, frac);
    double prop_norm = 0.0, inv_norm = 0.0;
    for (int k = 0; k < d; ++k) {
      prop_norm = std::max(prop_norm, propagator_scalar(lam[k], tau));
      inv_norm = std::max(inv_norm, 1.0 / transition_var_scalar(lam[k], tau));
    }
    lu = std::max(lu, 2.0 * tau * prop_norm * inv_norm);
  }

  // alpha: smallest eigenvalue of the (x_0, x_T) principal block of the
  // precision of the stationary triple (X_0, X_t, X_T).
  const Mat stat = ref.spectral([](double l) { return 1.0 / (2.0 * l); });
  double alpha = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= grid.time_points; ++i) {
    const double t = horizon * i / (grid.time_points + 1);
    Mat cov(3 * d, 3 * d);
    const Mat c_t0 = ref.propagator(t) * stat;
    const Mat c_T0 = ref.propagator(horizon) * stat;
    const Mat c_Tt = ref.propagator(horizon - t) * stat;
    cov << stat, c_t0.transpose(), c_T0.transpose(),
           c_t0, stat, c_Tt.transpose(),
           c_T0, c_Tt, stat;
    const Mat prec = spd_inverse(cov);
    Mat block(2 * d, 2 * d);
    block << prec.topLeftCorner(d, d), prec.topRightCorner(d, d),
             prec.bottomLeftCorner(d, d), prec.bottomRightCorner(d, d);
    alpha = std::min(alpha, min_eigenvalue(block));
  }
  return {lu, std::max(0.0, alpha)};
}

}  // namespace imfb
