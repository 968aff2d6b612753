#pragma once

#include <span>
#include <vector>

#include "bhfa/rng.hpp"

namespace bhfa {

// Numeric guard rails for latent Gaussians.
inline constexpr double kLogStdMin = -7.0;
inline constexpr double kLogStdMax = 7.0;
// Overlap coefficients are clamped to [kBcEps, 1] before any logarithm.
inline constexpr double kBcEps = 1e-300;
// Aggregated prototype variances are floored here so coincident supports
// cannot produce a degenerate prototype.
inline constexpr double kVarMin = 1e-6;

// Axis-aligned Gaussian over a d-dimensional latent space. The spread is kept
// as log standard deviation, clamped to [kLogStdMin, kLogStdMax] at
// construction so downstream overlap math stays finite.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> mean_in, std::vector<double> log_std_in);

  int dim() const { return static_cast<int>(mean.size()); }
};

// Overlap coefficient of two densities, in (0, 1]; 1 iff p == q. Clamped to
// [kBcEps, 1].
double bhattacharyya_coefficient(const DiagGaussian& p, const DiagGaussian& q);

// -ln of the overlap coefficient; 0 iff p == q.
double bhattacharyya_distance(const DiagGaussian& p, const DiagGaussian& q);

// Squared Hellinger distance via the identity 1 - coefficient; the integral
// is never evaluated directly.
double hellinger_sq(const DiagGaussian& p, const DiagGaussian& q);

// Moment-matched Gaussian of the uniform mixture of the members: the mean is
// the average of member means, the variance is the mixture second moment
// minus the squared mean, floored at kVarMin. Summation is exact, so the
// result is bitwise invariant under member permutations.
DiagGaussian aggregate_prototype(std::span<const DiagGaussian> members);

// z = mu + zeta * sigma with zeta drawn from `noise`; deterministic per seed.
std::vector<double> reparameterize(const DiagGaussian& g, NoiseSource& noise);

}  // namespace bhfa
