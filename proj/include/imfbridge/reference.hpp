#pragma once

#include <optional>

#include "imfbridge/linalg.hpp"

namespace imfb {

enum class ReferenceKind { Brownian, OU };

/// Reference Langevin diffusion dX = -grad U(X) dt + sqrt(2) dB with either
/// U = 0 (Brownian motion started from Lebesgue measure) or U(x) = <Ax, x>
/// for symmetric positive-definite A (stationary Ornstein-Uhlenbeck).
///
/// Every matrix the reference produces is a function of A, so all of them
/// share A's eigenbasis and commute with each other. The class keeps the
/// eigendecomposition and evaluates matrix functions per eigenvalue; the
/// Brownian case is the eigenvalue-zero limit.
class ReferenceProcess {
 public:
  static ReferenceProcess brownian(int dim);
  static ReferenceProcess ornstein_uhlenbeck(const Mat& a);

  ReferenceKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return static_cast<int>(eigvals_.size()); }
  /// A for OU, the zero matrix for Brownian.
  const Mat& rate_matrix() const noexcept { return a_; }
  const Vec& eigenvalues() const noexcept { return eigvals_; }

  /// Matrix of the linear map x -> grad U(x) (= 2A, or 0).
  Mat grad_potential() const { return 2.0 * a_; }
  /// Precision of the initial law m (0 for Lebesgue, 2A for stationary OU).
  Mat initial_precision() const { return 2.0 * a_; }

  /// V diag(f(lambda_i)) V^T.
  template <class F>
  Mat spectral(F&& f) const {
    Vec vals(eigvals_.size());
    for (Eigen::Index i = 0; i < eigvals_.size(); ++i) vals[i] = f(eigvals_[i]);
    return eigvecs_ * vals.asDiagonal() * eigvecs_.transpose();
  }

  /// exp(-2 A tau)
  Mat propagator(double tau) const;
  /// 2 int_0^tau exp(-4 A u) du, the transition covariance over a lag tau.
  Mat transition_cov(double tau) const;

 private:
  ReferenceProcess(ReferenceKind kind, Mat a, Vec eigvals, Mat eigvecs);

  ReferenceKind kind_;
  Mat a_;
  Vec eigvals_;
  Mat eigvecs_;
};

/// Scalar building blocks for one eigenvalue lambda >= 0.
double propagator_scalar(double lambda, double tau);
double transition_var_scalar(double lambda, double tau);

/// Validating factory. A is required (and validated) for OU, ignored for
/// Brownian.
ReferenceProcess make_reference(ReferenceKind kind, const std::optional<Mat>& a, int dim);

/// Affine Gaussian map x -> N(M x + b, S).
struct GaussianMap {
  Mat M;
  Vec b;
  Mat S;
};

/// Law of X_t given X_s = x.
GaussianMap transition(const ReferenceProcess& ref, double s, double t);

/// A pair of coefficient matrices representing (u, v) -> first*u + second*v.
struct AffinePair {
  Mat first;
  Mat second;

  Vec apply(const Vec& u, const Vec& v) const { return first * u + second * v; }
};

/// Score fields at time t on [0, T]:
///   forward:  (y_t, y_T)     -> 2 grad_{y_t} log p_{T|t}(y_T | y_t)
///   backward: (y_0, y_{T-t}) -> 2 grad_{y_{T-t}} log p_{T-t|0}(y_{T-t} | y_0)
struct ScoreFields {
  AffinePair forward;
  AffinePair backward;
};

ScoreFields score_fields(const ReferenceProcess& ref, double t, double horizon);

/// X_t | (X_0, X_T) ~ N(from_initial x_0 + from_terminal x_T, cov).
struct BridgeConditional {
  Mat from_initial;
  Mat from_terminal;
  Mat cov;
};

/// Valid for 0 < t < T.
BridgeConditional bridge_conditional(const ReferenceProcess& ref, double t, double horizon);

/// Same closed form without the open-interval check; at t = 0 and t = T it
/// degenerates to the pinned endpoints (zero covariance).
BridgeConditional bridge_coefficients(const ReferenceProcess& ref, double t, double horizon);

struct StructuralConstants {
  double L_U;
  double alpha;
};

struct ConstantsGrid {
  int lag_points = 64;          // log grid of (t - s) in [lag_min_fraction * T, T]
  double lag_min_fraction = 1e-4;
  int time_points = 64;         // uniform grid strictly inside (0, T)
};

/// Brownian: (1, 0). OU: grid estimates of the transition-score Lipschitz
/// constant (upper envelope, never below the short-lag limit 1) and of the
/// smallest eigenvalue of the (x_0, x_T) block of the precision of
/// (X_0, X_t, X_T).
StructuralConstants structural_constants(const ReferenceProcess& ref, double horizon,
                                         const ConstantsGrid& grid = {});

}  // namespace imfb
