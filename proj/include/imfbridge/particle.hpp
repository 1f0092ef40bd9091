#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "imfbridge/gaussian.hpp"
#include "imfbridge/philox.hpp"
#include "imfbridge/projection.hpp"
#include "imfbridge/reference.hpp"

namespace imfb {

/// N particles in R^d (one per row) at time t.
struct ParticleEnsemble {
  Mat states;
  double t;
  std::uint64_t seed;

  int size() const noexcept { return static_cast<int>(states.rows()); }
  int dim() const noexcept { return static_cast<int>(states.cols()); }
};

/// Finite mixture of Gaussian couplings.
class MixtureCoupling {
 public:
  MixtureCoupling(std::vector<double> weights, std::vector<GaussianCoupling> components);

  /// Product of two Gaussian mixtures: components mu_i (x) nu_j with weight
  /// w_i v_j.
  static MixtureCoupling product(const std::vector<double>& mu_weights,
                                 const std::vector<GaussianDist>& mu_components,
                                 const std::vector<double>& nu_weights,
                                 const std::vector<GaussianDist>& nu_components);

  int dim() const noexcept { return components_.front().dim(); }
  int size() const noexcept { return static_cast<int>(weights_.size()); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<GaussianCoupling>& components() const noexcept { return components_; }

 private:
  std::vector<double> weights_;
  std::vector<GaussianCoupling> components_;
};

/// Draws one point from a stream. Samplers are called concurrently and must
/// not mutate shared state.
using PointSampler = std::function<Vec(RandomStream&)>;
/// Endpoint samplers return the stacked pair (y_0, y_T).
using EndpointSampler = PointSampler;

PointSampler gaussian_sampler(const GaussianDist& dist);
PointSampler point_sampler(const Vec& point);
EndpointSampler coupling_sampler(const GaussianCoupling& pi);
EndpointSampler mixture_sampler(const MixtureCoupling& pi);
PointSampler mixture_sampler(const std::vector<double>& weights,
                             const std::vector<GaussianDist>& components);

/// N x 2d matrix of endpoint pairs; row i uses the stream of particle i.
Mat sample_endpoints(const EndpointSampler& sampler, int n, std::uint64_t seed, int threads = 0);

/// Interpolant marginals Y_t for each grid time, all built on the same
/// endpoint draws (those of sample_endpoints with the same seed).
std::vector<ParticleEnsemble> sample_interpolant_path(const EndpointSampler& sampler,
                                                      const ReferenceProcess& ref, double horizon,
                                                      const std::vector<double>& grid, int n,
                                                      std::uint64_t seed, int threads = 0);

using VectorDrift = std::function<Vec(double t, const Vec& y)>;
/// Affine drift as a function of time; evaluated once per step.
using AffineSchedule = std::function<AffineDrift(double t)>;
/// Drift field y -> f_t(y) built once per step.
using StateField = std::function<Vec(const Vec& y)>;
using FieldSchedule = std::function<StateField(double t)>;

struct SdeOptions {
  /// Extra times (multiples of T/steps in (0, T)) at which to record the
  /// ensemble.
  std::vector<double> snapshots;
  /// Worker threads; 0 picks the hardware concurrency.
  int threads = 0;
};

struct SdeResult {
  ParticleEnsemble final;
  std::vector<ParticleEnsemble> snapshots;
};

/// Euler-Maruyama for dX = drift(t, X) dt + sqrt(2) dB on [0, T] with
/// uniform step T/steps. Bitwise reproducible for a given seed, whatever the
/// thread count. Throws OdeBlowup on a non-finite state.
SdeResult simulate_sde(const VectorDrift& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts = {});
SdeResult simulate_sde(const AffineSchedule& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts = {});
SdeResult simulate_sde(const FieldSchedule& drift, const PointSampler& init, double horizon,
                       int steps, int n, std::uint64_t seed, const SdeOptions& opts = {});

struct McDriftEstimate {
  Vec value;
  Vec se;
  double ess;
};

/// Self-normalized importance estimate of the mimicking drift at (t, y) from
/// endpoint pairs (rows of an N x 2d matrix), weighting each pair by the
/// bridge density of y. Throws DegenerateWeights if the effective sample
/// size is below 10 or every weight underflows.
McDriftEstimate mc_drift_oracle(const Mat& endpoints, const ReferenceProcess& ref, double horizon,
                                double t, const Vec& y);

/// Exact mimicking drift of a mixture coupling at a fixed time, with the
/// per-component quantities computed once. Requires 0 <= t < T.
StateField mixture_drift_field(const MixtureCoupling& pi, const ReferenceProcess& ref, double horizon,
                               double t);

/// Exact mimicking drift of a mixture coupling, 0 <= t < T.
Vec mixture_drift(const MixtureCoupling& pi, const ReferenceProcess& ref, double horizon, double t,
                  const Vec& y);

/// Law of Y_t under a mixture coupling, as (weights, component marginals).
struct MixtureMarginal {
  std::vector<double> weights;
  std::vector<GaussianDist> components;

  Vec mean() const;
  Mat cov() const;
};
MixtureMarginal mixture_interpolant_marginal(const MixtureCoupling& pi, const ReferenceProcess& ref,
                                             double horizon, double t);

struct EnsembleMoments {
  Vec mean;
  Mat cov;
  Vec se_mean;
  /// Standard error of each diagonal variance, under normality.
  Vec se_var;
};

EnsembleMoments ensemble_moments(const ParticleEnsemble& e);

}  // namespace imfb
