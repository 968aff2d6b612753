#include "bhfa/numeric.hpp"

namespace bhfa {

double exact_sum(std::span<const double> values) {
  // Grow an expansion of non-overlapping partials; every partial below the
  // current one is strictly smaller in magnitude. Rounding the partials from
  // smallest to largest yields the correctly rounded total.
  std::vector<double> partials;
  for (double x : values) {
    std::size_t used = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      double hi = x + y;
      double lo = y - (hi - x);
      if (lo != 0.0) partials[used++] = lo;
      x = hi;
    }
    partials.resize(used);
    partials.push_back(x);
  }
  double total = 0.0;
  for (double p : partials) total += p;
  return total;
}

}  // namespace bhfa
