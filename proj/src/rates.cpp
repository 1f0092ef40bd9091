#include "imfbridge/rates.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <random>

#include "imfbridge/errors.hpp"

namespace imfb {

double theta(double L, double r) {
  if (L <= 0.0) return 0.0;
  const double s = std::sqrt(L);
  return 2.0 * s * std::tanh(r * s / 2.0);
}

const char* to_string(Theorem th) noexcept {
  switch (th) {
    case Theorem::T1: return "t1";
    case Theorem::T2: return "t2";
    case Theorem::T5: return "t5";
    case Theorem::T6: return "t6";
  }
  return "?";
}

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw Error(Errc::InvalidArgument, fmt::format("{} must be positive, got {}", name, v));
}

// alpha_phi for H5(i)': 1/2 (a + sqrt(a^2 + 4a / (T^2 beta))) - 1/T.
double strong_alpha(double alpha_first, double beta_other, double horizon) {
  if (std::isinf(beta_other)) return alpha_first - 1.0 / horizon;
  const double a = alpha_first;
  return 0.5 * (a + std::sqrt(a * a + 4.0 * a / (horizon * horizon * beta_other))) - 1.0 / horizon;
}

// Horizon threshold: max(1/alpha_mu, 1/alpha_nu) and the root of rate(T) = 1.
// `rate_at` must be non-increasing in T.
template <class RateAt>
double horizon_threshold(double alpha_mu, double alpha_nu, RateAt&& rate_at) {
  const double floor_T = std::max(1.0 / alpha_mu, 1.0 / alpha_nu);
  double hi = std::max(1.0, floor_T);
  int guard = 0;
  while (!(rate_at(hi) < 1.0)) {
    hi *= 2.0;
    if (++guard > 200) return kInf;
  }
  double lo = hi / 2.0;
  guard = 0;
  while (rate_at(lo) < 1.0 && lo > 1e-300) {
    lo /= 2.0;
    if (++guard > 2000) break;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (rate_at(mid) < 1.0 ? hi : lo) = mid;
  }
  return std::max(floor_T, hi);
}

double strong_rate_value(double a_mu, double a_nu, double b_mu, double b_nu, double alpha,
                         double L_U, double T) {
  const double sum = strong_alpha(a_mu, b_nu, T) + strong_alpha(a_nu, b_mu, T) + alpha;
  return sum > 0.0 ? L_U / (T * sum) : kInf;
}

double weak_constant(double sum, double l_max) {
  return 4.0 * sum / std::exp(9.0 * l_max / sum);
}

}  // namespace

RateBound strong_rate(double alpha_mu, double alpha_nu, double beta_mu, double beta_nu,
                      double alpha, double L_U, double horizon) {
  require_positive(alpha_mu, "alpha_mu");
  require_positive(alpha_nu, "alpha_nu");
  require_positive(beta_mu, "beta_mu");
  require_positive(beta_nu, "beta_nu");
  require_positive(horizon, "T");
  if (!(alpha >= 0.0) || !(L_U >= 0.0)) throw Error(Errc::InvalidArgument, "alpha and L_U must be >= 0");

  RateBound out{};
  out.theorem = (std::isinf(beta_mu) && std::isinf(beta_nu)) ? Theorem::T1 : Theorem::T5;
  out.alpha_phi = strong_alpha(alpha_mu, beta_nu, horizon);
  out.alpha_psi = strong_alpha(alpha_nu, beta_mu, horizon);
  const double sum = out.alpha_phi + out.alpha_psi + alpha;
  out.rate = sum > 0.0 ? L_U / (horizon * sum) : kInf;
  out.variant_without_LU = sum > 0.0 ? 1.0 / (horizon * sum) : kInf;
  out.threshold_T = horizon_threshold(alpha_mu, alpha_nu, [&](double T) {
    return strong_rate_value(alpha_mu, alpha_nu, beta_mu, beta_nu, alpha, L_U, T);
  });
  out.valid = out.rate < 1.0 && horizon > out.threshold_T;
  return out;
}

double implicit_alpha(double alpha_first, double beta_other, double L_first, double horizon) {
  const double T = horizon;
  const double lo = alpha_first - 1.0 / T;
  if (std::isinf(beta_other)) return lo;  // G = 0 exactly
  // F >= beta s gives G <= 2 / beta, which caps the map from above.
  const double hi = std::max(alpha_first, lo + 1.0 / (beta_other * T * T));

  // F(alpha, s) = beta s + s / (T (1 + T alpha)) + sqrt(s) theta_L(sqrt(s)) / (1 + T alpha)^2
  auto F = [&](double a, double s) {
    const double k = 1.0 + T * a;
    const double rs = std::sqrt(s);
    return beta_other * s + s / (T * k) + rs * theta(L_first, rs) / (k * k);
  };
  // G(alpha, 2) = inf { s >= 0 : F(alpha, s) >= 2 }, F increasing in s.
  auto G = [&](double a) {
    double s_hi = 1.0;
    while (F(a, s_hi) < 2.0) s_hi *= 2.0;
    double s_lo = 0.0;
    if (!(F(a, s_lo) <= F(a, s_hi))) {
      throw Error(Errc::FixedPointNotFound, "F is not monotone in s");
    }
    for (int i = 0; i < 200 && s_hi - s_lo > 1e-17 * s_hi; ++i) {
      const double mid = 0.5 * (s_lo + s_hi);
      (F(a, mid) >= 2.0 ? s_hi : s_lo) = mid;
    }
    return s_hi;
  };
  auto map = [&](double a) { return alpha_first - 1.0 / T + G(a) / (2.0 * T * T); };

  constexpr double kDamping = 0.5;
  constexpr double kTol = 1e-10;
  double a = lo;
  for (int it = 0; it < 200; ++it) {
    const double image = map(a);
    if (std::abs(image - a) <= kTol * std::max(1.0, std::abs(a))) return std::clamp(image, lo, hi);
    a = std::clamp((1.0 - kDamping) * a + kDamping * image, lo, hi);
  }
  auto h = [&](double x) { return map(x) - x; };
  double blo = lo, bhi = hi;
  if (!(h(blo) >= 0.0 && h(bhi) <= 0.0)) {
    throw Error(Errc::FixedPointNotFound,
                fmt::format("no sign change of the fixed-point residual on [{}, {}]", lo, hi));
  }
  for (int i = 0; i < 200 && bhi - blo > kTol; ++i) {
    const double mid = 0.5 * (blo + bhi);
    (h(mid) >= 0.0 ? blo : bhi) = mid;
  }
  return 0.5 * (blo + bhi);
}

RateBound weak_rate(double alpha_mu, double alpha_nu, double beta_mu, double beta_nu,
                    double alpha, double L_mu, double L_nu, double L, double L_U,
                    double horizon) {
  require_positive(alpha_mu, "alpha_mu");
  require_positive(alpha_nu, "alpha_nu");
  require_positive(beta_mu, "beta_mu");
  require_positive(beta_nu, "beta_nu");
  require_positive(horizon, "T");
  if (!(alpha >= 0.0) || !(L_U >= 0.0) || !(L_mu >= 0.0) || !(L_nu >= 0.0) || !(L >= 0.0)) {
    throw Error(Errc::InvalidArgument, "alpha, L_U and the L constants must be >= 0");
  }
  const double l_max = std::max({L_mu, L_nu, L});
  auto evaluate = [&](double T, double& a_phi, double& a_psi) {
    a_phi = implicit_alpha(alpha_mu, beta_nu, L_mu, T);
    a_psi = implicit_alpha(alpha_nu, beta_mu, L_nu, T);
    const double sum = a_phi + a_psi + alpha;
    return sum > 0.0 ? weak_constant(sum, l_max) : 0.0;
  };

  RateBound out{};
  out.theorem = (std::isinf(beta_mu) && std::isinf(beta_nu)) ? Theorem::T2 : Theorem::T6;
  const double c = evaluate(horizon, out.alpha_phi, out.alpha_psi);
  out.rate = c > 0.0 ? L_U / (horizon * c) : kInf;
  out.variant_without_LU = c > 0.0 ? 1.0 / (horizon * c) : kInf;
  out.threshold_T = horizon_threshold(alpha_mu, alpha_nu, [&](double T) {
    double p = 0.0, q = 0.0;
    const double cc = evaluate(T, p, q);
    return cc > 0.0 ? L_U / (T * cc) : kInf;
  });
  out.valid = out.rate < 1.0 && horizon > out.threshold_T;
  return out;
}

double lsi_t2_constant(double alpha_hat, double L_hat) {
  if (!(alpha_hat > -1.0)) {
    throw Error(Errc::InvalidAlpha, fmt::format("alpha_hat must exceed -1, got {}", alpha_hat));
  }
  if (!(L_hat >= 0.0)) throw Error(Errc::InvalidArgument, "L_hat must be >= 0");
  return 2.0 * (alpha_hat + 1.0) / std::exp(L_hat / (1.0 + alpha_hat));
}

ContractionFactor contraction_factor(double xi, double L_U, double horizon) {
  require_positive(xi, "xi");
  require_positive(L_U, "L_U");
  require_positive(horizon, "T");
  return {L_U / (2.0 * xi * horizon), 1.0 / (2.0 * xi * horizon)};
}

namespace {

// Golden-section refinement of a unimodal bracket.
template <class F>
double golden_min(F&& f, double a, double b, int iters = 200) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iters && b - a > 1e-13 * std::max(1.0, std::abs(a) + std::abs(b)); ++i) {
    if (fc < fd) {
      b = d; d = c; fd = fc; c = b - g * (b - a); fc = f(c);
    } else {
      a = c; c = d; fc = fd; d = a + g * (b - a); fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

// Minimal Nelder-Mead for the d >= 2 profile search.
Vec nelder_mead(const std::function<double(const Vec&)>& f, Vec start, double scale, int max_evals) {
  const int n = static_cast<int>(start.size());
  std::vector<Vec> pts(n + 1, start);
  std::vector<double> vals(n + 1);
  for (int i = 0; i < n; ++i) pts[i + 1][i] += scale;
  for (int i = 0; i <= n; ++i) vals[i] = f(pts[i]);
  int evals = n + 1;
  while (evals < max_evals) {
    std::vector<int> order(n + 1);
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = order.front(), worst = order.back(), second = order[n - 1];
    if (std::abs(vals[worst] - vals[best]) < 1e-14 * (1.0 + std::abs(vals[best]))) break;
    Vec centroid = Vec::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= n;
    const Vec refl = centroid + (centroid - pts[worst]);
    const double fr = f(refl);
    ++evals;
    if (fr < vals[best]) {
      const Vec exp = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(exp);
      ++evals;
      if (fe < fr) { pts[worst] = exp; vals[worst] = fe; }
      else { pts[worst] = refl; vals[worst] = fr; }
    } else if (fr < vals[second]) {
      pts[worst] = refl; vals[worst] = fr;
    } else {
      const Vec con = centroid + 0.5 * (pts[worst] - centroid);
      const double fcon = f(con);
      ++evals;
      if (fcon < vals[worst]) {
        pts[worst] = con; vals[worst] = fcon;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          vals[i] = f(pts[i]);
          ++evals;
        }
      }
    }
  }
  return pts[std::min_element(vals.begin(), vals.end()) - vals.begin()];
}

}  // namespace

double fit_envelope_L(const std::vector<double>& rs, const std::vector<double>& kappas,
                      double alpha) {
  auto holds = [&](double L) {
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (kappas[i] < alpha - theta(L, rs[i]) / rs[i] - 1e-12) return false;
    }
    return true;
  };
  if (holds(0.0)) return 0.0;
  double hi = 1.0;
  while (!holds(hi)) {
    hi *= 2.0;
    if (hi > 1e300) throw Error(Errc::InvalidArgument, "no finite L satisfies the envelope");
  }
  double lo = 0.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (holds(mid) ? hi : lo) = mid;
  }
  return hi;
}

ConvexityProfile kappa_profile(const VectorField& grad_potential, const std::vector<double>& rs,
                               const SearchBox& box) {
  const int d = static_cast<int>(box.lower.size());
  if (d < 1 || box.upper.size() != d) throw Error(Errc::DimensionMismatch, "search box bounds");
  if (rs.empty()) throw Error(Errc::InvalidArgument, "radius grid is empty");
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (!(rs[i] > 0.0) || (i > 0 && !(rs[i] > rs[i - 1]))) {
      throw Error(Errc::InvalidArgument, "radius grid must be positive and increasing");
    }
  }
  for (int k = 0; k < d; ++k) {
    if (!(box.upper[k] > box.lower[k])) throw Error(Errc::InvalidArgument, "empty search box");
  }

  ConvexityProfile out{};
  out.rs = rs;
  int boundary_hits = 0;
  std::mt19937_64 rng(box.seed);

  for (double r : rs) {
    double best = kInf;
    bool on_boundary = false;
    if (d == 1) {
      // y = x - r: the only other orientation is the same pair relabelled.
      const double lo = box.lower[0] + r, hi = box.upper[0];
      if (!(hi > lo)) {
        ++boundary_hits;
        out.kappas.push_back(kInf);
        continue;
      }
      auto q = [&](double x) {
        Vec vx(1), vy(1);
        vx[0] = x;
        vy[0] = x - r;
        return (grad_potential(vx)[0] - grad_potential(vy)[0]) / r;
      };
      const int n = std::max(3, box.points_per_dim * 10);
      int arg = 0;
      std::vector<double> xs(n);
      for (int i = 0; i < n; ++i) {
        xs[i] = lo + (hi - lo) * i / (n - 1);
        const double v = q(xs[i]);
        if (v < best) { best = v; arg = i; }
      }
      const double a = xs[std::max(0, arg - 1)], b = xs[std::min(n - 1, arg + 1)];
      const double xm = golden_min(q, a, b);
      best = std::min(best, q(xm));
      const double tol = 1e-9 * (hi - lo);
      on_boundary = (xm - lo < tol && arg == 0) || (hi - xm < tol && arg == n - 1);
    } else {
      // Parametrize the pair by its midpoint c and a direction v: x, y = c +- r v/(2|v|).
      const Vec width = box.upper - box.lower;
      auto unpack = [&](const Vec& z, Vec& x, Vec& y) {
        Vec c = z.head(d);
        Vec v = z.tail(d);
        const double nv = v.norm();
        if (nv < 1e-300) v = Vec::Unit(d, 0); else v /= nv;
        x = c + 0.5 * r * v;
        y = c - 0.5 * r * v;
      };
      auto outside = [&](const Vec& p) {
        double excess = 0.0;
        for (int k = 0; k < d; ++k) {
          excess += std::max(0.0, box.lower[k] - p[k]) + std::max(0.0, p[k] - box.upper[k]);
        }
        return excess;
      };
      auto q = [&](const Vec& z) {
        Vec x, y;
        unpack(z, x, y);
        const double pen = outside(x) + outside(y);
        if (pen > 0.0) return 1e6 * (1.0 + pen);
        return (grad_potential(x) - grad_potential(y)).dot(x - y) / (r * r);
      };
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      Vec best_z;
      for (int s = 0; s < box.restarts; ++s) {
        Vec z(2 * d);
        for (int k = 0; k < d; ++k) z[k] = box.lower[k] + width[k] * (0.25 + 0.5 * unif(rng));
        for (int k = 0; k < d; ++k) z[d + k] = gauss(rng);
        const Vec zm = nelder_mead(q, z, 0.1 * width.minCoeff(), 4000);
        const double v = q(zm);
        if (v < best) { best = v; best_z = zm; }
      }
      if (best >= 1e6) {
        ++boundary_hits;
        out.kappas.push_back(kInf);
        continue;
      }
      Vec x, y;
      unpack(best_z, x, y);
      const double tol = 1e-6 * width.maxCoeff();
      for (int k = 0; k < d; ++k) {
        on_boundary |= std::min({x[k] - box.lower[k], box.upper[k] - x[k], y[k] - box.lower[k],
                                 box.upper[k] - y[k]}) < tol;
      }
    }
    if (on_boundary) ++boundary_hits;
    out.kappas.push_back(best);
  }
  if (boundary_hits * 5 > static_cast<int>(rs.size())) {
    throw Error(Errc::SearchBoxTooSmall,
                fmt::format("{} of {} minimizers on the search-box boundary", boundary_hits, rs.size()));
  }

  const double r_max = rs.back();
  double alpha = kInf;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (rs[i] >= r_max / 10.0 && std::isfinite(out.kappas[i])) alpha = std::min(alpha, out.kappas[i]);
  }
  out.fitted_alpha = alpha;
  std::vector<double> fr, fk;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (std::isfinite(out.kappas[i])) { fr.push_back(rs[i]); fk.push_back(out.kappas[i]); }
  }
  out.fitted_L = fit_envelope_L(fr, fk, alpha);
  return out;
}

HessianBounds hessian_bounds(const ScalarField& f, const SearchBox& box) {
  const int d = static_cast<int>(box.lower.size());
  if (d < 1 || box.upper.size() != d) throw Error(Errc::DimensionMismatch, "search box bounds");
  const int n = std::max(2, box.points_per_dim);
  long total = 1;
  for (int k = 0; k < d; ++k) total *= n;

  HessianBounds out{kInf, -kInf};
  std::vector<int> idx(d, 0);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    Vec x(d);
    for (int k = 0; k < d; ++k) {
      idx[k] = static_cast<int>(rem % n);
      rem /= n;
      x[k] = box.lower[k] + (box.upper[k] - box.lower[k]) * idx[k] / (n - 1);
    }
    Vec h(d);
    for (int k = 0; k < d; ++k) h[k] = 1e-4 * std::max(1.0, std::abs(x[k]));
    const double f0 = f(x);
    Mat H(d, d);
    for (int i = 0; i < d; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h[i];
      xm[i] -= h[i];
      H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i]);
      for (int j = i + 1; j < d; ++j) {
        Vec pp = x, pm = x, mp = x, mm = x;
        pp[i] += h[i]; pp[j] += h[j];
        pm[i] += h[i]; pm[j] -= h[j];
        mp[i] -= h[i]; mp[j] += h[j];
        mm[i] -= h[i]; mm[j] -= h[j];
        H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h[i] * h[j]);
      }
    }
    if (!H.allFinite()) throw Error(Errc::NonFiniteHessian, "non-finite Hessian entry");
    const Vec ev = sym_eigenvalues(H);
    out.alpha = std::min(out.alpha, ev.minCoeff());
    out.beta = std::max(out.beta, ev.maxCoeff());
  }
  return out;
}

}  // namespace imfb
