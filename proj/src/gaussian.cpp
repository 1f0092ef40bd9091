#include "imfbridge/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <vector>

#include "imfbridge/errors.hpp"

namespace imfb {

namespace {

constexpr double kSingularCondition = 1e12;

void check_square(const Vec& mean, const Mat& cov) {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size() || mean.size() == 0) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("mean has size {} but covariance is {}x{}", mean.size(), cov.rows(),
                            cov.cols()));
  }
}

void check_psd(const Mat& cov) {
  if (!cov.allFinite() || !is_symmetric(cov, 1e-9)) {
    throw Error(Errc::NonSPDMatrix, "covariance must be finite and symmetric");
  }
  const Vec ev = sym_eigenvalues(cov);
  if (ev.minCoeff() < -1e-12 * std::max(1.0, ev.maxCoeff())) {
    throw Error(Errc::NonSPDMatrix, fmt::format("covariance has negative eigenvalue {}", ev.minCoeff()));
  }
}

// delta - log(1 + delta), accurate for small |delta|.
double dlog1p_gap(double delta) {
  if (std::abs(delta) < 1e-3) {
    const double d2 = delta * delta;
    return d2 / 2.0 - d2 * delta / 3.0 + d2 * d2 / 4.0 - d2 * d2 * delta / 5.0;
  }
  return delta - std::log1p(delta);
}

}  // namespace

GaussianDist::GaussianDist(Vec mean, Mat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  check_square(mean_, cov_);
  if (!mean_.allFinite()) throw Error(Errc::InvalidArgument, "mean must be finite");
  check_psd(cov_);
  cov_ = symmetrized(cov_);
}

GaussianCoupling::GaussianCoupling(Vec mean, Mat cov)
    : dim_(static_cast<int>(mean.size() / 2)), mean_(std::move(mean)), cov_(std::move(cov)) {
  check_square(mean_, cov_);
  if (mean_.size() % 2 != 0) {
    throw Error(Errc::DimensionMismatch, "coupling mean must have even length 2d");
  }
  if (!mean_.allFinite()) throw Error(Errc::InvalidArgument, "mean must be finite");
  check_psd(cov_);
  cov_ = symmetrized(cov_);
}

GaussianCoupling::GaussianCoupling(const GaussianDist& joint)
    : GaussianCoupling(joint.mean(), joint.cov()) {}

GaussianCoupling GaussianCoupling::product(const GaussianDist& mu, const GaussianDist& nu) {
  if (mu.dim() != nu.dim()) throw Error(Errc::DimensionMismatch, "marginal dimensions differ");
  const int d = mu.dim();
  Vec mean(2 * d);
  mean << mu.mean(), nu.mean();
  Mat cov = Mat::Zero(2 * d, 2 * d);
  cov.topLeftCorner(d, d) = mu.cov();
  cov.bottomRightCorner(d, d) = nu.cov();
  return {mean, cov};
}

GaussianCoupling GaussianCoupling::swapped() const {
  const int d = dim_;
  Vec mean(2 * d);
  mean << meanT(), mean0();
  Mat cov(2 * d, 2 * d);
  cov << covTT(), covT0(), cov0T(), cov00();
  return {mean, cov};
}

GaussianDist condition(const GaussianDist& joint, std::span<const int> observed, const Vec& value) {
  const int n = joint.dim();
  const int k = static_cast<int>(observed.size());
  if (value.size() != k || k == 0 || k >= n) {
    throw Error(Errc::DimensionMismatch,
                fmt::format("observing {} of {} coordinates with a value of size {}", k, n, value.size()));
  }
  std::vector<bool> is_obs(n, false);
  for (int i : observed) {
    if (i < 0 || i >= n || is_obs[i]) throw Error(Errc::DimensionMismatch, "bad observed index set");
    is_obs[i] = true;
  }
  std::vector<int> rest;
  for (int i = 0; i < n; ++i)
    if (!is_obs[i]) rest.push_back(i);
  const int m = static_cast<int>(rest.size());

  const Mat& s = joint.cov();
  Mat s_oo(k, k), s_ro(m, k), s_rr(m, m);
  Vec m_o(k), m_r(m);
  for (int a = 0; a < k; ++a) {
    m_o[a] = joint.mean()[observed[a]];
    for (int b = 0; b < k; ++b) s_oo(a, b) = s(observed[a], observed[b]);
  }
  for (int a = 0; a < m; ++a) {
    m_r[a] = joint.mean()[rest[a]];
    for (int b = 0; b < k; ++b) s_ro(a, b) = s(rest[a], observed[b]);
    for (int b = 0; b < m; ++b) s_rr(a, b) = s(rest[a], rest[b]);
  }
  if (condition_number(s_oo) > kSingularCondition || condition_number(s) > kSingularCondition) {
    throw Error(Errc::SingularBlock, "observed block or joint covariance is numerically singular");
  }
  const Eigen::LDLT<Mat> ldlt(s_oo);
  const Mat gain = ldlt.solve(s_ro.transpose()).transpose();
  return {m_r + gain * (value - m_o), symmetrized(s_rr - gain * s_ro.transpose())};
}

double kl_gaussian(const GaussianDist& p, const GaussianDist& q) {
  if (p.dim() != q.dim()) {
    throw Error(Errc::DimensionMismatch, fmt::format("KL between dimensions {} and {}", p.dim(), q.dim()));
  }
  const Eigen::LLT<Mat> llt(q.cov());
  if (llt.info() != Eigen::Success) throw Error(Errc::NonSPDMatrix, "KL reference covariance not SPD");
  const auto L = llt.matrixL();
  const Mat diff = p.cov() - q.cov();
  const Mat half = L.solve(diff);
  const Mat whitened = L.solve(half.transpose());
  const Vec delta = sym_eigenvalues(symmetrized(whitened));
  double trace_part = 0.0;
  for (double dl : delta) {
    if (!(dl > -1.0)) throw Error(Errc::NonSPDMatrix, "KL argument covariance not SPD");
    trace_part += dlog1p_gap(dl);
  }
  const Vec md = L.solve(q.mean() - p.mean());
  return 0.5 * (trace_part + md.squaredNorm());
}

double kl_gaussian(const GaussianCoupling& p, const GaussianCoupling& q) {
  return kl_gaussian(p.joint(), q.joint());
}

double coupling_marginal_error(const GaussianCoupling& pi, const GaussianDist& mu,
                               const GaussianDist& nu) {
  if (pi.dim() != mu.dim() || pi.dim() != nu.dim()) {
    throw Error(Errc::DimensionMismatch, "coupling and marginals have different dimensions");
  }
  return std::max({max_abs(pi.mean0() - mu.mean()), max_abs(pi.cov00() - mu.cov()),
                   max_abs(pi.meanT() - nu.mean()), max_abs(pi.covTT() - nu.cov())});
}

SinkhornReport sinkhorn_bridge(const GaussianDist& mu, const GaussianDist& nu,
                               const ReferenceProcess& ref, double horizon, double tol,
                               int max_iter) {
  if (!(tol > 0.0)) throw Error(Errc::InvalidArgument, "tol must be positive");
  if (!(horizon > 0.0)) throw Error(Errc::InvalidArgument, "horizon must be positive");
  if (max_iter < 1) throw Error(Errc::InvalidArgument, "max_iter must be >= 1");
  const int d = mu.dim();
  if (nu.dim() != d || ref.dim() != d) throw Error(Errc::DimensionMismatch, "dimension mismatch");

  // Reference joint precision of (X_0, X_T): the initial law contributes
  // initial_precision() (zero for Lebesgue), the transition N(M x, S) the rest.
  const Mat prop = ref.propagator(horizon);
  const Mat s_inv = spd_inverse(ref.transition_cov(horizon));
  const Mat k00 = ref.initial_precision() + prop.transpose() * s_inv * prop;
  const Mat k0T = -prop.transpose() * s_inv;
  const Mat kTT = s_inv;

  const Mat prec_mu = spd_inverse(mu.cov());
  const Mat prec_nu = spd_inverse(nu.cov());
  const Vec info_mu = prec_mu * mu.mean();
  const Vec info_nu = prec_nu * nu.mean();

  // exp(-phi(x) - psi(y)) with phi(x) = x'Px/2 - p'x, psi(y) = y'Qy/2 - q'y.
  Mat P = Mat::Zero(d, d), Q = Mat::Zero(d, d);
  Vec p = Vec::Zero(d), q = Vec::Zero(d);
  double err = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    const Mat inv_yy = spd_inverse(kTT + Q);
    P = symmetrized(prec_mu - k00 + k0T * inv_yy * k0T.transpose());
    p = info_mu + k0T * inv_yy * q;

    const Mat inv_xx = spd_inverse(k00 + P);
    Q = symmetrized(prec_nu - kTT + k0T.transpose() * inv_xx * k0T);
    q = info_nu + k0T.transpose() * inv_xx * p;

    Mat prec(2 * d, 2 * d);
    prec << k00 + P, k0T, k0T.transpose(), kTT + Q;
    Vec info(2 * d);
    info << p, q;
    const Mat cov = spd_inverse(prec);
    GaussianCoupling coupling(cov * info, cov);
    err = coupling_marginal_error(coupling, mu, nu);
    if (err <= tol) return SinkhornReport{std::move(coupling), err, it, true};
  }
  throw Error(Errc::NoConvergence,
              fmt::format("Sinkhorn marginal error {} after {} iterations (tol {}); raise T or max_iter",
                          err, max_iter, tol));
}

}  // namespace imfb
