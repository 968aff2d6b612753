#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace bhfa {

// Correctly rounded sum of doubles (Shewchuk's expansion algorithm, as used
// by fsum). The result is independent of summand order, which makes every
// aggregation built on it bitwise permutation-invariant.
double exact_sum(std::span<const double> values);

inline double exact_mean(std::span<const double> values) {
  return exact_sum(values) / static_cast<double>(values.size());
}

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace bhfa
