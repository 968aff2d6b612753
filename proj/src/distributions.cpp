#include "bhfa/distributions.hpp"

#include <cmath>

#include "bhfa/autodiff.hpp"
#include "bhfa/errors.hpp"
#include "bhfa/numeric.hpp"

namespace bhfa {

static_assert(ad::kBcFloor == kBcEps, "tape and library must clamp overlap identically");

namespace {

void check_dims(const DiagGaussian& p, const DiagGaussian& q) {
  require(p.dim() >= 1, "DiagGaussian: dimension must be >= 1");
  require(p.dim() == q.dim(), "DiagGaussian: dimension mismatch");
}

}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> mean_in, std::vector<double> log_std_in)
    : mean(std::move(mean_in)), log_std(std::move(log_std_in)) {
  require(!mean.empty() && mean.size() == log_std.size(),
          "DiagGaussian: mean and log_std must share a length >= 1");
  require(all_finite(mean) && all_finite(log_std), "DiagGaussian: components must be finite");
  for (double& v : log_std) v = clamp(v, kLogStdMin, kLogStdMax);
}

double bhattacharyya_coefficient(const DiagGaussian& p, const DiagGaussian& q) {
  check_dims(p, q);
  // Per-dimension closed form for axis-aligned Gaussians:
  //   sqrt(2*sp*sq / (sp^2 + sq^2)) * exp(-(mp-mq)^2 / (4*(sp^2 + sq^2)))
  // evaluated in linear space so p == q yields exactly 1.
  double bc = 1.0;
  for (int i = 0; i < p.dim(); ++i) {
    const double sp = std::exp(p.log_std[i]);
    const double sq = std::exp(q.log_std[i]);
    const double s = sp * sp + sq * sq;
    const double diff = p.mean[i] - q.mean[i];
    bc *= std::sqrt(2.0 * sp * sq / s) * std::exp(-diff * diff / (4.0 * s));
  }
  if (!(bc >= kBcEps)) return kBcEps;
  if (bc > 1.0) return 1.0;
  return bc;
}

double bhattacharyya_distance(const DiagGaussian& p, const DiagGaussian& q) {
  return -std::log(bhattacharyya_coefficient(p, q));
}

double hellinger_sq(const DiagGaussian& p, const DiagGaussian& q) {
  return 1.0 - bhattacharyya_coefficient(p, q);
}

DiagGaussian aggregate_prototype(std::span<const DiagGaussian> members) {
  require(!members.empty(), "aggregate_prototype: member list must be nonempty");
  const int d = members.front().dim();
  for (const DiagGaussian& g : members)
    require(g.dim() == d, "aggregate_prototype: members must share a dimension");

  const double m = static_cast<double>(members.size());
  std::vector<double> mean(static_cast<std::size_t>(d));
  std::vector<double> log_std(static_cast<std::size_t>(d));
  std::vector<double> acc(members.size());
  for (int i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < members.size(); ++j) acc[j] = members[j].mean[i];
    const double mu = exact_sum(acc) / m;
    for (std::size_t j = 0; j < members.size(); ++j) {
      const double mj = members[j].mean[i];
      const double sj = std::exp(members[j].log_std[i]);
      acc[j] = sj * sj + mj * mj;
    }
    const double second = exact_sum(acc) / m;
    double var = second - mu * mu;
    if (var < kVarMin) var = kVarMin;
    mean[static_cast<std::size_t>(i)] = mu;
    log_std[static_cast<std::size_t>(i)] = 0.5 * std::log(var);
  }
  return DiagGaussian(std::move(mean), std::move(log_std));
}

std::vector<double> reparameterize(const DiagGaussian& g, NoiseSource& noise) {
  std::vector<double> z(g.mean.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = g.mean[i] + noise.next() * std::exp(g.log_std[i]);
  return z;
}

}  // namespace bhfa
