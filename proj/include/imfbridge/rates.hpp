#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "imfbridge/linalg.hpp"

namespace imfb {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// theta_L(r) = 2 sqrt(L) tanh(r sqrt(L) / 2).
double theta(double L, double r);

enum class Theorem { T1, T2, T5, T6 };
const char* to_string(Theorem th) noexcept;

struct RateBound {
  double rate;
  bool valid;
  /// Smallest horizon above which the bound is a contraction: the larger of
  /// max(1/alpha_mu, 1/alpha_nu) and the root of rate(T) = 1.
  double threshold_T;
  Theorem theorem;
  double alpha_phi;
  double alpha_psi;
  /// Same bound without the L_U factor.
  double variant_without_LU;
};

/// Strongly log-concave regime. beta_mu/beta_nu may be +inf, which selects
/// the exact limit alpha_phi = alpha_mu - 1/T.
RateBound strong_rate(double alpha_mu, double alpha_nu, double beta_mu, double beta_nu,
                      double alpha, double L_U, double horizon);

/// Weakly log-concave regime (deviation constants L_mu, L_nu, L). For finite
/// beta's alpha_phi/alpha_psi are the smallest fixed points of the implicit
/// equation alpha = alpha_mu - 1/T + G(alpha, 2) / (2 T^2).
RateBound weak_rate(double alpha_mu, double alpha_nu, double beta_mu, double beta_nu,
                    double alpha, double L_mu, double L_nu, double L, double L_U, double horizon);

/// Smallest fixed point of the implicit equation above, searched in
/// [alpha_first - 1/T, max(alpha_first, alpha_first - 1/T + 1/(beta_other T^2))].
/// `beta_other` is the upper Hessian bound
/// of the opposite marginal and `L_first` the deviation constant of the
/// first one. Throws FixedPointNotFound.
double implicit_alpha(double alpha_first, double beta_other, double L_first, double horizon);

/// Log-Sobolev constant xi = 2 (a + 1) / exp(l / (1 + a)) for a kernel whose
/// log-density relative to the standard Gaussian has convexity profile
/// bounded below by a - theta_l(r)/r. The LSI(xi) => T2(xi) implication is
/// a cited result and not computed here. Throws InvalidAlpha for a <= -1.
double lsi_t2_constant(double alpha_hat, double L_hat);

struct ContractionFactor {
  double factor;            // L_U / (2 xi T)
  double without_LU;        // 1 / (2 xi T)
};
ContractionFactor contraction_factor(double xi, double L_U, double horizon);

using VectorField = std::function<Vec(const Vec&)>;
using ScalarField = std::function<double(const Vec&)>;

/// Axis-aligned search region.
struct SearchBox {
  Vec lower;
  Vec upper;
  int points_per_dim = 41;     // grid resolution for hessian_bounds / 1-D scans
  int restarts = 16;           // multi-start count in d >= 2
  std::uint64_t seed = 1;
};

struct ConvexityProfile {
  std::vector<double> rs;
  std::vector<double> kappas;
  double fitted_alpha;
  double fitted_L;
  /// Upper-profile constants; carried for reporting, no rate consumes them.
  std::optional<double> fitted_beta;
  std::optional<double> fitted_M;
};

/// kappa(r) = inf { <b(x) - b(y), x - y> / |x - y|^2 : |x - y| = r } over
/// pairs inside `box`, followed by a fit of the envelope alpha - theta_L(r)/r:
/// alpha is the minimum of the profile over the largest decade of the grid,
/// L the smallest value (bisection) making the envelope hold at every grid
/// point. Throws SearchBoxTooSmall when more than 20% of the minimizers sit
/// on the box boundary.
ConvexityProfile kappa_profile(const VectorField& grad_potential, const std::vector<double>& rs,
                               const SearchBox& box);

/// Smallest L >= 0 with kappas[i] >= alpha - theta_L(rs[i]) / rs[i] for all i.
double fit_envelope_L(const std::vector<double>& rs, const std::vector<double>& kappas,
                      double alpha);

struct HessianBounds {
  double alpha;
  double beta;
};

/// Extreme eigenvalues of the central finite-difference Hessian of
/// `neg_log_density` over a uniform grid of the box.
HessianBounds hessian_bounds(const ScalarField& neg_log_density, const SearchBox& box);

}  // namespace imfb
