#include <doctest.h>

#include <cmath>
#include <random>

#include "imfbridge/errors.hpp"
#include "imfbridge/projection.hpp"

using namespace imfb;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }
Vec v1(double v) { return Vec::Constant(1, v); }

Mat random_spd(std::mt19937_64& rng, int d, double floor = 0.3) {
  std::normal_distribution<double> n01;
  Mat b(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) b(i, j) = n01(rng);
  return b * b.transpose() / d + floor * Mat::Identity(d, d);
}

Vec random_vec(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n01;
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = n01(rng);
  return v;
}

// Random SPD coupling with correlated endpoints.
GaussianCoupling random_coupling(std::mt19937_64& rng, int d) {
  return GaussianCoupling(random_vec(rng, 2 * d), random_spd(rng, 2 * d));
}

// Triple (Y_0, Y_t, Y_T) written out directly from the bridge coefficients.
GaussianDist triple_oracle(const GaussianCoupling& pi, const ReferenceProcess& ref, double T, double t) {
  const int d = pi.dim();
  const BridgeConditional b = bridge_conditional(ref, t, T);
  Mat lift = Mat::Zero(3 * d, 2 * d);
  lift.topLeftCorner(d, d).setIdentity();
  lift.block(d, 0, d, d) = b.from_initial;
  lift.block(d, d, d, d) = b.from_terminal;
  lift.bottomRightCorner(d, d).setIdentity();
  Mat cov = lift * pi.cov() * lift.transpose();
  cov.block(d, d, d, d) += b.cov;
  return GaussianDist(lift * pi.mean(), symmetrized(cov));
}

// E[Y_T | Y_t = y] (or E[Y_0 | Y_t = y] when want_initial). At t = 0 or
// t = T the triple is degenerate and the coupling itself is conditioned.
Vec conditional_other_end(const GaussianCoupling& pi, const ReferenceProcess& ref, double T, double t,
                          const Vec& y, bool want_initial) {
  const int d = pi.dim();
  std::vector<int> observed;
  if (t == 0.0 || t == T) {
    for (int i = 0; i < d; ++i) observed.push_back(t == 0.0 ? i : d + i);
    const GaussianDist c = condition(GaussianDist(pi.mean(), pi.cov()), observed, y);
    if ((t == 0.0) != want_initial) return c.mean();
    return y;
  }
  for (int i = 0; i < d; ++i) observed.push_back(d + i);
  const GaussianDist c = condition(triple_oracle(pi, ref, T, t), observed, y);
  return want_initial ? Vec(c.mean().head(d)) : Vec(c.mean().tail(d));
}

// Drift by direct Gaussian conditioning on the triple: the textbook route,
// fine away from t = T.
AffineDrift naive_forward_drift(const GaussianCoupling& pi, const ReferenceProcess& ref, double T,
                                double t) {
  const int d = pi.dim();
  const ScoreFields f = score_fields(ref, t, T);
  auto eval = [&](const Vec& y) {
    return Vec(f.forward.apply(y, conditional_other_end(pi, ref, T, t, y, false)) - ref.grad_potential() * y);
  };
  const Vec offset = eval(Vec::Zero(d));
  Mat lin(d, d);
  for (int i = 0; i < d; ++i) lin.col(i) = eval(Vec::Unit(d, i)) - offset;
  return AffineDrift{t, lin, offset};
}

AffineDrift naive_backward_drift(const GaussianCoupling& pi, const ReferenceProcess& ref, double T,
                                 double t) {
  const int d = pi.dim();
  const ScoreFields f = score_fields(ref, t, T);
  auto eval = [&](const Vec& y) {
    return Vec(f.backward.apply(conditional_other_end(pi, ref, T, T - t, y, true), y) +
               ref.grad_potential() * y);
  };
  const Vec offset = eval(Vec::Zero(d));
  Mat lin(d, d);
  for (int i = 0; i < d; ++i) lin.col(i) = eval(Vec::Unit(d, i)) - offset;
  return AffineDrift{t, lin, offset};
}

double drift_gap(const AffineDrift& a, const AffineDrift& b) {
  return std::max(max_abs(a.lin - b.lin), max_abs(a.offset - b.offset));
}

std::vector<ReferenceProcess> references(std::mt19937_64& rng, int d) {
  return {ReferenceProcess::brownian(d), ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, d))};
}

}  // namespace

TEST_CASE("interpolant_triple examples") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianDist n01(v1(0), m1(1));
  const GaussianCoupling indep = GaussianCoupling::product(n01, n01);
  const InterpolantTriple tri = interpolant_triple(indep, bm, 1.0, 0.5);
  Mat expected(3, 3);
  expected << 1, 0.5, 0, 0.5, 1, 0.5, 0, 0.5, 1;
  CHECK(max_abs(tri.joint.cov() - expected) < 1e-15);
  CHECK(tri.t == 0.5);

  const InterpolantTriple early = interpolant_triple(indep, bm, 1.0, 1e-10);
  CHECK(std::abs(early.joint.cov()(1, 1) - 1.0) < 1e-8);
  CHECK(std::abs(early.joint.cov()(0, 1) - 1.0) < 1e-8);

  // Nearly perfectly correlated endpoints.
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    Mat c(2, 2);
    c << 1.0, 1.0 - eps, 1.0 - eps, 1.0;
    const GaussianCoupling corr(Vec::Zero(2), c);
    const InterpolantTriple t = interpolant_triple(corr, bm, 1.0, 0.3);
    // Var(Y_t) = bridge var + (0.7, 0.3) c (0.7, 0.3)^T.
    const double var = 2.0 * 0.3 * 0.7 + 0.49 + 0.09 + 2.0 * 0.21 * (1.0 - eps);
    CHECK(t.joint.cov()(1, 1) == doctest::Approx(var).epsilon(1e-13));
    CHECK(min_eigenvalue(t.joint.cov()) > 0.0);
  }

  CHECK_THROWS_AS((void)interpolant_triple(indep, bm, 1.0, 0.0), Error);
  CHECK_THROWS_AS((void)interpolant_triple(indep, bm, 1.0, 1.0), Error);
}

TEST_CASE("interpolant_triple keeps the endpoint block and matches the composition oracle") {
  std::mt19937_64 rng(101);
  for (int d : {1, 2, 3}) {
    for (const auto& ref : references(rng, d)) {
      const GaussianCoupling pi = random_coupling(rng, d);
      for (double t : {0.1, 0.7, 1.3}) {
        const InterpolantTriple tri = interpolant_triple(pi, ref, 1.4, t);
        const Mat& c = tri.joint.cov();
        CHECK(c.topLeftCorner(d, d) == pi.cov00());
        CHECK(c.topRightCorner(d, d) == pi.cov0T());
        CHECK(c.bottomRightCorner(d, d) == pi.covTT());
        CHECK(c.bottomLeftCorner(d, d) == pi.covT0());
        CHECK(max_abs(c - triple_oracle(pi, ref, 1.4, t).cov()) < 1e-12);
        CHECK(min_eigenvalue(c) > 0.0);
        const GaussianDist marg = interpolant_marginal(pi, ref, 1.4, t);
        CHECK(max_abs(marg.cov() - c.block(d, d, d, d)) < 1e-14);
      }
      const GaussianDist at0 = interpolant_marginal(pi, ref, 1.4, 0.0);
      const GaussianDist atT = interpolant_marginal(pi, ref, 1.4, 1.4);
      CHECK(max_abs(at0.cov() - pi.cov00()) < 1e-14);
      CHECK(max_abs(atT.cov() - pi.covTT()) < 1e-14);
      CHECK(max_abs(atT.mean() - pi.meanT()) < 1e-14);
    }
  }
}

TEST_CASE("mimicking_drift examples") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianDist n01(v1(0), m1(1));
  const GaussianCoupling indep = GaussianCoupling::product(n01, n01);
  for (double t : {0.0, 0.5}) {
    const AffineDrift f = mimicking_drift(indep, bm, 1.0, t);
    CHECK(f.lin(0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(std::abs(f.offset[0]) < 1e-15);
  }
  const AffineDrift b = backward_drift(indep, bm, 1.0, 0.5);
  CHECK(b.lin(0, 0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(std::abs(b.offset[0]) < 1e-15);
  CHECK_THROWS_AS((void)mimicking_drift(indep, bm, 1.0, -0.1), Error);
  CHECK_THROWS_AS((void)mimicking_drift(indep, bm, 1.0, 1.1), Error);
}

TEST_CASE("stable drifts agree with direct conditioning") {
  std::mt19937_64 rng(202);
  for (int d : {1, 2, 3}) {
    for (const auto& ref : references(rng, d)) {
      const GaussianCoupling pi = random_coupling(rng, d);
      const double T = 1.3;
      for (double t : {0.0, 0.2, 0.65, 1.1}) {
        const double tol = 1e-9 * std::max(1.0, max_abs(naive_forward_drift(pi, ref, T, t).lin));
        CHECK(drift_gap(mimicking_drift(pi, ref, T, t), naive_forward_drift(pi, ref, T, t)) < tol);
        CHECK(drift_gap(backward_drift(pi, ref, T, t), naive_backward_drift(pi, ref, T, t)) < tol);
      }
    }
  }
}

TEST_CASE("drifts are finite and continuous up to the terminal time") {
  std::mt19937_64 rng(303);
  for (const auto& ref : references(rng, 2)) {
    const GaussianCoupling pi = random_coupling(rng, 2);
    const double T = 2.0;
    const AffineDrift end = mimicking_drift(pi, ref, T, T);
    const AffineDrift back_end = backward_drift(pi, ref, T, T);
    CHECK(end.lin.allFinite());
    CHECK(back_end.lin.allFinite());
    for (double gap : {1e-3, 1e-6, 1e-9}) {
      CHECK(drift_gap(mimicking_drift(pi, ref, T, T - gap), end) < 100.0 * gap);
      CHECK(drift_gap(backward_drift(pi, ref, T, T - gap), back_end) < 100.0 * gap);
    }
  }
}

TEST_CASE("time-reversal identity g_{T-t} = -f_t + 2 grad log p_t") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> unit(0.02, 0.98);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 3;
    const auto refs = references(rng, d);
    const ReferenceProcess& ref = refs[trial % 2];
    const GaussianCoupling pi = random_coupling(rng, d);
    const double T = 0.5 + 3.0 * unit(rng);
    const double t = T * unit(rng);
    const AffineDrift g = backward_drift(pi, ref, T, T - t);
    const AffineDrift f = mimicking_drift(pi, ref, T, t);
    const AffineDrift s = interpolant_score(pi, ref, T, t);
    const Mat lin = -f.lin + 2.0 * s.lin;
    const Vec off = -f.offset + 2.0 * s.offset;
    CHECK(max_abs(g.lin - lin) <= 1e-10 * std::max(1.0, max_abs(lin)));
    CHECK(max_abs(g.offset - off) <= 1e-10 * std::max(1.0, max_abs(off)));
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("interpolant_score is the gradient of the marginal log-density") {
  std::mt19937_64 rng(505);
  const auto ref = ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, 2));
  const GaussianCoupling pi = random_coupling(rng, 2);
  const GaussianDist m = interpolant_marginal(pi, ref, 1.0, 0.4);
  const AffineDrift s = interpolant_score(pi, ref, 1.0, 0.4);
  const Vec y = random_vec(rng, 2);
  CHECK((s(y) + spd_inverse(m.cov()) * (y - m.mean())).norm() < 1e-12);
}

TEST_CASE("markovian_projection fixed point and marginal preservation") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianDist mu(v1(0), m1(1)), nu(v1(1), m1(1));
  const SinkhornReport star = sinkhorn_bridge(mu, nu, bm, 4.0, 1e-12, 100000);
  const GaussianCoupling fixed = markovian_projection(star.coupling, bm, 4.0);
  CHECK(kl_gaussian(fixed, star.coupling) <= 1e-8);

  const GaussianCoupling indep = GaussianCoupling::product(mu, nu);
  const GaussianCoupling out = markovian_projection(indep, bm, 4.0);
  CHECK(coupling_marginal_error(out, mu, nu) <= 1e-6);
  CHECK(min_eigenvalue(out.cov()) > 0.0);

  const GaussianCoupling back = backward_projection(indep, bm, 4.0);
  CHECK(coupling_marginal_error(back, mu, nu) <= 1e-6);
  CHECK(kl_gaussian(backward_projection(star.coupling, bm, 4.0), star.coupling) <= 1e-8);
}

TEST_CASE("projection contracts towards the bridge coupling") {
  std::mt19937_64 rng(606);
  for (int d : {1, 2}) {
    for (const auto& ref : references(rng, d)) {
      const GaussianCoupling pi = random_coupling(rng, d);
      const GaussianDist mu = pi.initial(), nu = pi.terminal();
      const double T = 1.5;
      const GaussianCoupling star = sinkhorn_bridge(mu, nu, ref, T, 1e-12, 100000).coupling;
      const GaussianCoupling out = markovian_projection(pi, ref, T);
      CHECK(kl_gaussian(out, star) < kl_gaussian(pi, star));
      CHECK(coupling_marginal_error(out, mu, nu) <= 1e-6);
    }
  }
}

TEST_CASE("projection agrees with an independent moment integration") {
  // Plain RK4 on the cross-covariance with the conditioning drift, stopped
  // short of T where that drift is unusable; C is Lipschitz in t, so the gap
  // is O(stop distance).
  std::mt19937_64 rng(707);
  const auto ref = ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, 2));
  const GaussianCoupling pi = random_coupling(rng, 2);
  const double T = 1.0, stop = 1e-4;
  const int steps = 20000;
  const double h = (T - stop) / steps;
  Mat c = pi.cov00();
  Vec m = pi.mean0();
  auto rhs_c = [&](double t, const Mat& cc) { return Mat(cc * naive_forward_drift(pi, ref, T, t).lin.transpose()); };
  auto rhs_m = [&](double t, const Vec& mm) { return Vec(naive_forward_drift(pi, ref, T, t)(mm)); };
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const Mat k1 = rhs_c(t, c), k2 = rhs_c(t + h / 2, c + h / 2 * k1), k3 = rhs_c(t + h / 2, c + h / 2 * k2),
              k4 = rhs_c(t + h, c + h * k3);
    const Vec l1 = rhs_m(t, m), l2 = rhs_m(t + h / 2, m + h / 2 * l1), l3 = rhs_m(t + h / 2, m + h / 2 * l2),
              l4 = rhs_m(t + h, m + h * l3);
    c += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    m += h / 6 * (l1 + 2 * l2 + 2 * l3 + l4);
  }
  const GaussianCoupling out = markovian_projection(pi, ref, T);
  CHECK(max_abs(out.cov0T() - c) < 10.0 * stop);
  CHECK(max_abs(out.meanT() - m) < 10.0 * stop);
}

TEST_CASE("RK4 order: halving the step shrinks the fixed-point residual at least 8x") {
  std::mt19937_64 rng(808);
  const auto ref = ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, 2));
  const GaussianCoupling pi = random_coupling(rng, 2);
  const double T = 1.0;
  const GaussianCoupling star = sinkhorn_bridge(pi.initial(), pi.terminal(), ref, T, 1e-13, 100000).coupling;
  double prev = 0.0;
  for (int steps : {100, 200, 400}) {
    OdeOptions opts;
    opts.steps = steps;
    const double residual = max_abs(markovian_projection(star, ref, T, opts).cov() - star.cov());
    if (prev > 0.0) CHECK(prev / residual >= 8.0);
    prev = residual;
  }
}

TEST_CASE("ODE option validation and error paths") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianDist mu(v1(0), m1(1)), nu(v1(1), m1(1));
  const GaussianCoupling indep = GaussianCoupling::product(mu, nu);
  OdeOptions few;
  few.steps = 99;
  CHECK_THROWS_AS((void)markovian_projection(indep, bm, 4.0, few), Error);
  OdeOptions wide;
  wide.eps = 2.5;
  CHECK_THROWS_AS((void)markovian_projection(indep, bm, 4.0, wide), Error);
  OdeOptions strict;
  strict.marginal_tol = 1e-300;
  // Either exact to the last bit or flagged; never silently out of tolerance.
  try {
    const GaussianCoupling out = markovian_projection(indep, bm, 4.0, strict);
    CHECK(coupling_marginal_error(out, mu, nu) == 0.0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MarginalViolation);
  }
  OdeOptions coarse;
  coarse.steps = 100;
  coarse.marginal_tol = 1e-14;
  const GaussianDist wide_nu(v1(30.0), m1(0.01));
  try {
    (void)markovian_projection(GaussianCoupling::product(GaussianDist(v1(0), m1(50.0)), wide_nu), bm, 0.05,
                               coarse);
    FAIL("expected MarginalViolation");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MarginalViolation);
  }
}

TEST_CASE("imf_run and dsbm_run traces") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianDist mu(v1(0), m1(1)), nu(v1(1), m1(1));
  const GaussianCoupling pi0 = GaussianCoupling::product(mu, nu);
  const IMFTrace imf = imf_run(pi0, mu, nu, bm, 4.0, 6);
  REQUIRE(imf.iterations.size() == 7);
  CHECK(std::isnan(imf.iterations[0].ratio));
  CHECK(imf.rate.valid);
  CHECK(imf.rate.rate == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  for (int n = 1; n <= 6; ++n) {
    const IMFRecord& r = imf.iterations[n];
    CHECK(r.n == n);
    CHECK(r.kl_to_star >= 0.0);
    CHECK(r.kl_to_star <= imf.iterations[n - 1].kl_to_star);
    CHECK(r.marginal_error <= 1e-6);
    CHECK(r.bound == doctest::Approx(std::pow(1.0 / 6.0, n) * imf.iterations[0].kl_to_star).epsilon(1e-9));
    if (!std::isnan(r.ratio)) {
      CHECK(r.ratio == doctest::Approx(r.kl_to_star / imf.iterations[n - 1].kl_to_star).epsilon(1e-12));
      CHECK(r.ratio <= 1.0 / 6.0 + 1e-9);
    }
  }
  const IMFTrace dsbm = dsbm_run(pi0, mu, nu, bm, 4.0, 6);
  CHECK(std::abs(dsbm.iterations.back().kl_to_star - imf.iterations.back().kl_to_star) <= 1e-6);

  const IMFTrace at_star = imf_run(imf.pi_star, imf.pi_star.initial(), imf.pi_star.terminal(), bm, 4.0, 3);
  for (const auto& r : at_star.iterations) CHECK(r.kl_to_star <= 1e-8);
  const IMFTrace dsbm_star = dsbm_run(imf.pi_star, imf.pi_star.initial(), imf.pi_star.terminal(), bm, 4.0, 3);
  for (const auto& r : dsbm_star.iterations) CHECK(r.kl_to_star <= 1e-8);

  CHECK_THROWS_AS((void)imf_run(pi0, mu, nu, bm, 4.0, 0), Error);
  try {
    (void)imf_run(pi0, mu, GaussianDist(v1(2), m1(1)), bm, 4.0, 2);
    FAIL("expected InvalidInitialCoupling");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidInitialCoupling);
  }

  // Below the validity threshold the bound column is NaN.
  const IMFTrace short_horizon = imf_run(pi0, mu, nu, bm, 0.5, 2);
  CHECK_FALSE(short_horizon.rate.valid);
  CHECK(std::isnan(short_horizon.iterations[1].bound));
}
