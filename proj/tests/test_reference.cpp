#include <doctest.h>

#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "imfbridge/errors.hpp"
#include "imfbridge/gaussian.hpp"
#include "imfbridge/reference.hpp"

using namespace imfb;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }

Mat random_spd(std::mt19937_64& rng, int d, double floor = 0.2) {
  std::normal_distribution<double> n01;
  Mat b(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) b(i, j) = n01(rng);
  return b * b.transpose() / d + floor * Mat::Identity(d, d);
}

// 2 int_0^tau exp(-4 A u) du by composite Simpson on the matrix exponential.
Mat simpson_transition_cov(const Mat& a, double tau, int panels = 2000) {
  const double h = tau / panels;
  Mat acc = Mat::Zero(a.rows(), a.cols());
  for (int i = 0; i <= panels; ++i) {
    const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * Mat((-4.0 * a * (i * h)).exp());
  }
  return 2.0 * acc * h / 3.0;
}

double log_transition_density(const GaussianMap& g, const Vec& x, const Vec& z) {
  const Vec r = z - g.M * x - g.b;
  return -0.5 * r.dot(spd_inverse(g.S) * r) - 0.5 * spd_logdet(g.S);
}

}  // namespace

TEST_CASE("make_reference validates its input") {
  CHECK(make_reference(ReferenceKind::Brownian, std::nullopt, 1).dim() == 1);
  CHECK(make_reference(ReferenceKind::OU, m1(0.5), 1).kind() == ReferenceKind::OU);
  Mat indefinite(2, 2);
  indefinite << 0, 1, 1, 0;
  try {
    (void)make_reference(ReferenceKind::OU, indefinite, 2);
    FAIL("expected NonSPDMatrix");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NonSPDMatrix);
  }
  Mat skew(2, 2);
  skew << 1, 0.5, 0, 1;
  CHECK_THROWS_AS((void)ReferenceProcess::ornstein_uhlenbeck(skew), Error);
  try {
    (void)make_reference(ReferenceKind::OU, m1(0.5), 2);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DimensionMismatch);
  }
}

TEST_CASE("transition closed forms") {
  const auto bm = ReferenceProcess::brownian(1);
  const GaussianMap g = transition(bm, 0.0, 1.0);
  CHECK(g.M(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.S(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

  const auto ou = ReferenceProcess::ornstein_uhlenbeck(m1(0.5));
  const GaussianMap h = transition(ou, 0.0, std::log(2.0));
  CHECK(h.M(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(h.S(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(h.b.norm() == 0.0);

  try {
    (void)transition(bm, 0.0, 0.0);
    FAIL("expected InvalidTimeOrder");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidTimeOrder);
  }
  CHECK_THROWS_AS((void)transition(bm, 1.0, 0.5), Error);
  CHECK_THROWS_AS((void)transition(bm, -0.1, 0.5), Error);
}

TEST_CASE("OU matrix functions agree with the matrix exponential and quadrature") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_spd(rng, 3);
    const auto ou = ReferenceProcess::ornstein_uhlenbeck(a);
    for (double tau : {0.01, 0.3, 1.7}) {
      const Mat expm = (-2.0 * a * tau).exp();
      CHECK(max_abs(ou.propagator(tau) - expm) < 1e-12);
      CHECK(max_abs(ou.transition_cov(tau) - simpson_transition_cov(a, tau)) < 1e-9);
    }
  }
}

TEST_CASE("Chapman-Kolmogorov composition") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  const ReferenceProcess refs[] = {ReferenceProcess::brownian(2),
                                   ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, 2))};
  for (const auto& ref : refs) {
    for (int trial = 0; trial < 10; ++trial) {
      const double s = u(rng), mid = s + u(rng), t = mid + u(rng);
      const GaussianMap a = transition(ref, s, mid);
      const GaussianMap b = transition(ref, mid, t);
      const GaussianMap c = transition(ref, s, t);
      const Mat m = b.M * a.M;
      const Mat cov = b.M * a.S * b.M.transpose() + b.S;
      CHECK(max_abs(m - c.M) <= 1e-10 * std::max(1.0, max_abs(c.M)));
      CHECK(max_abs(cov - c.S) <= 1e-10 * max_abs(c.S));
    }
  }
}

TEST_CASE("OU stationary covariance and Lyapunov identity") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_spd(rng, 3, 0.5);
    const auto ou = ReferenceProcess::ornstein_uhlenbeck(a);
    const Mat sigma = ou.transition_cov(200.0);
    // dX = -2 A X dt + sqrt(2) dB: (-2A) S + S (-2A)^T + 2 I = 0.
    const Mat lyap = 2.0 * a * sigma + sigma * 2.0 * a.transpose();
    CHECK(max_abs(lyap - 2.0 * Mat::Identity(3, 3)) < 1e-8);
    CHECK(max_abs(sigma - spd_inverse(2.0 * a)) < 1e-10);
  }
  const auto half = ReferenceProcess::ornstein_uhlenbeck(m1(0.5));
  CHECK(half.transition_cov(100.0)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("score fields equal finite-difference gradients of the transition density") {
  const auto bm = ReferenceProcess::brownian(1);
  {
    const ScoreFields f = score_fields(bm, 0.5, 1.0);
    CHECK(f.forward.apply(Vec::Constant(1, 0.0), Vec::Constant(1, 2.0))[0] ==
          doctest::Approx(4.0).epsilon(1e-14));
  }
  const auto ou = ReferenceProcess::ornstein_uhlenbeck(m1(0.5));
  {
    const ScoreFields f = score_fields(ou, 0.0, std::log(2.0));
    CHECK(f.forward.apply(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0))[0] ==
          doctest::Approx(4.0 / 3.0).epsilon(1e-13));
  }

  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  const ReferenceProcess refs[] = {ReferenceProcess::brownian(2),
                                   ReferenceProcess::ornstein_uhlenbeck(random_spd(rng, 2))};
  const double T = 1.5;
  for (const auto& ref : refs) {
    for (int trial = 0; trial < 10; ++trial) {
      const double t = 0.1 + 1.2 * trial / 10.0;
      Vec x(2), z(2);
      x << n01(rng), n01(rng);
      z << n01(rng), n01(rng);
      const GaussianMap g = transition(ref, t, T);
      const ScoreFields f = score_fields(ref, t, T);
      const double h = 1e-5;
      Vec fd_x(2), fd_z(2);
      for (int c = 0; c < 2; ++c) {
        Vec e = Vec::Zero(2);
        e[c] = h;
        fd_x[c] = (log_transition_density(g, x + e, z) - log_transition_density(g, x - e, z)) / (2 * h);
        fd_z[c] = (log_transition_density(g, x, z + e) - log_transition_density(g, x, z - e)) / (2 * h);
      }
      CHECK((f.forward.apply(x, z) - 2.0 * fd_x).norm() < 1e-6);
      // Backward field: gradient in the later state of p(z | x), lag T - t.
      CHECK((f.backward.apply(x, z) - 2.0 * fd_z).norm() < 1e-6);
    }
  }
  CHECK_THROWS_AS((void)score_fields(bm, 1.0, 1.0), Error);
}

TEST_CASE("bridge conditional Brownian closed forms") {
  const auto bm = ReferenceProcess::brownian(1);
  const BridgeConditional b = bridge_conditional(bm, 0.5, 1.0);
  CHECK(b.from_initial(0, 0) == doctest::Approx(0.5));
  CHECK(b.from_terminal(0, 0) == doctest::Approx(0.5));
  CHECK(b.cov(0, 0) == doctest::Approx(0.5));

  const double T = 3.0;
  double best_t = 0.0, best_var = -1.0;
  for (int i = 1; i < 300; ++i) {
    const double t = T * i / 300.0;
    const double v = bridge_conditional(bm, t, T).cov(0, 0);
    CHECK(v == doctest::Approx(2.0 * t * (T - t) / T).epsilon(1e-13));
    CHECK(v == doctest::Approx(bridge_conditional(bm, T - t, T).cov(0, 0)).epsilon(1e-12));
    if (v > best_var) best_var = v, best_t = t;
  }
  CHECK(best_t == doctest::Approx(T / 2));

  const BridgeConditional tiny = bridge_conditional(bm, 1e-9, 1.0);
  CHECK(tiny.from_initial(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(tiny.cov(0, 0) < 1e-8);

  CHECK_THROWS_AS((void)bridge_conditional(bm, 0.0, 1.0), Error);
  CHECK_THROWS_AS((void)bridge_conditional(bm, 1.0, 1.0), Error);
}

TEST_CASE("bridge conditional matches Schur-complement conditioning of the reference triple") {
  std::mt19937_64 rng(23);
  const int d = 2;
  const Mat a = random_spd(rng, d);
  const auto refs = {ReferenceProcess::brownian(d), ReferenceProcess::ornstein_uhlenbeck(a)};
  for (const auto& ref : refs) {
    const double T = 1.7;
    for (double t : {0.1, 0.85, 1.6}) {
      // Any non-degenerate law for X_0 gives the same bridge; use N(0, I).
      const GaussianMap first = transition(ref, 0.0, t);
      const GaussianMap second = transition(ref, t, T);
      const Mat s0 = Mat::Identity(d, d);
      const Mat c_t0 = first.M * s0;
      const Mat s_t = first.M * s0 * first.M.transpose() + first.S;
      const Mat c_Tt = second.M * s_t;
      const Mat c_T0 = second.M * c_t0;
      const Mat s_T = second.M * s_t * second.M.transpose() + second.S;
      Mat cov(3 * d, 3 * d);
      cov << s0, c_t0.transpose(), c_T0.transpose(), c_t0, s_t, c_Tt.transpose(), c_T0, c_Tt, s_T;

      Vec x0(d), xT(d);
      x0 << 0.3, -1.1;
      xT << 0.7, 0.4;
      Vec value(2 * d);
      value << x0, xT;
      const int observed[] = {0, 1, 4, 5};
      const GaussianDist cond = condition(GaussianDist(Vec::Zero(3 * d), cov), observed, value);
      const BridgeConditional b = bridge_conditional(ref, t, T);
      CHECK((b.from_initial * x0 + b.from_terminal * xT - cond.mean()).norm() < 1e-10);
      CHECK(max_abs(b.cov - cond.cov()) < 1e-10);
    }
  }
  const auto ou = ReferenceProcess::ornstein_uhlenbeck(m1(0.5));
  const BridgeConditional b = bridge_conditional(ou, std::log(2.0), 2.0 * std::log(2.0));
  CHECK((b.from_initial * Vec::Zero(1) + b.from_terminal * Vec::Zero(1)).norm() == 0.0);
}

TEST_CASE("structural constants") {
  const StructuralConstants bm = structural_constants(ReferenceProcess::brownian(3), 2.0);
  CHECK(bm.L_U == 1.0);
  CHECK(bm.alpha == 0.0);

  const auto ou = ReferenceProcess::ornstein_uhlenbeck(m1(0.5));
  const StructuralConstants c = structural_constants(ou, 1.0);
  CHECK(c.L_U >= 1.0);
  CHECK(c.alpha > 0.0);

  // Stationary unit-variance OU is a Markov chain x_0 -> x_t -> x_T, so the
  // triple precision is tridiagonal and its (x_0, x_T) block is
  // diag(1/(1 - e^{-2t}), 1/(1 - e^{-2(T - t)})) when A = 1/2.
  const double T = 1.0;
  double expected = 1e300;
  for (int i = 1; i <= 64; ++i) {
    const double t = T * i / 65.0;
    expected = std::min({expected, 1.0 / (1.0 - std::exp(-2.0 * t)),
                         1.0 / (1.0 - std::exp(-2.0 * (T - t)))});
  }
  CHECK(c.alpha == doctest::Approx(expected).epsilon(1e-9));

  // L_U oracle in d = 1: 2 tau e^{-tau} / (1 - e^{-2 tau}) peaks at tau -> 0.
  CHECK(c.L_U == doctest::Approx(1.0).epsilon(1e-12));
}
