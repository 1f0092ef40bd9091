#pragma once

#include <span>

#include "imfbridge/linalg.hpp"
#include "imfbridge/reference.hpp"

namespace imfb {

/// Gaussian law N(mean, cov). The constructor checks shapes, finiteness,
/// symmetry and positive semi-definiteness; operations that need strict
/// definiteness (KL, conditioning) check it themselves.
class GaussianDist {
 public:
  GaussianDist(Vec mean, Mat cov);

  int dim() const noexcept { return static_cast<int>(mean_.size()); }
  const Vec& mean() const noexcept { return mean_; }
  const Mat& cov() const noexcept { return cov_; }

 private:
  Vec mean_;
  Mat cov_;
};

/// Joint Gaussian law of an endpoint pair (X_0, X_T) in R^d x R^d, stored
/// as a 2d-dimensional Gaussian with blocks [S00 S0T; ST0 STT].
class GaussianCoupling {
 public:
  GaussianCoupling(Vec mean, Mat cov);
  explicit GaussianCoupling(const GaussianDist& joint);

  /// Independent coupling mu (x) nu.
  static GaussianCoupling product(const GaussianDist& mu, const GaussianDist& nu);

  int dim() const noexcept { return dim_; }
  const Vec& mean() const noexcept { return mean_; }
  const Mat& cov() const noexcept { return cov_; }

  Vec mean0() const { return mean_.head(dim_); }
  Vec meanT() const { return mean_.tail(dim_); }
  Mat cov00() const { return cov_.topLeftCorner(dim_, dim_); }
  Mat cov0T() const { return cov_.topRightCorner(dim_, dim_); }
  Mat covT0() const { return cov_.bottomLeftCorner(dim_, dim_); }
  Mat covTT() const { return cov_.bottomRightCorner(dim_, dim_); }

  GaussianDist initial() const { return {mean0(), cov00()}; }
  GaussianDist terminal() const { return {meanT(), covTT()}; }
  GaussianDist joint() const { return {mean_, cov_}; }
  /// Law of (X_T, X_0).
  GaussianCoupling swapped() const;

 private:
  int dim_;
  Vec mean_;
  Mat cov_;
};

/// Conditional law of the unobserved coordinates given the observed block
/// equals `value`. Throws SingularBlock when the observed block or the
/// joint covariance has condition number above 1e12.
GaussianDist condition(const GaussianDist& joint, std::span<const int> observed, const Vec& value);

/// Closed-form KL(p | q). Evaluated through the eigenvalues of
/// L^-1 (Sp - Sq) L^-T (L the Cholesky factor of Sq) so that values close to
/// zero keep their relative accuracy instead of drowning in cancellation.
double kl_gaussian(const GaussianDist& p, const GaussianDist& q);
double kl_gaussian(const GaussianCoupling& p, const GaussianCoupling& q);

/// max-abs error of the two marginals (means and covariances) of pi against
/// (mu, nu).
double coupling_marginal_error(const GaussianCoupling& pi, const GaussianDist& mu,
                               const GaussianDist& nu);

struct SinkhornReport {
  GaussianCoupling coupling;
  double marginal_error;
  int iterations;
  bool converged;
};

/// Entropic-transport oracle: the Schroedinger bridge coupling between
/// Gaussian marginals for the reference joint law R_{0,T}. The potentials are
/// quadratic, so each half-step is an exact update of a d x d precision block
/// and a d-vector. The Brownian reference starts from Lebesgue measure, which
/// in precision form is simply a zero initial block.
/// Throws NoConvergence when max_iter sweeps do not bring the marginal error
/// below tol.
SinkhornReport sinkhorn_bridge(const GaussianDist& mu, const GaussianDist& nu,
                               const ReferenceProcess& ref, double horizon, double tol,
                               int max_iter);

}  // namespace imfb
