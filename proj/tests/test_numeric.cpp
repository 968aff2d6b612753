#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "bhfa/numeric.hpp"
#include "bhfa/rng.hpp"

using namespace bhfa;

TEST_CASE("exact_sum recovers cancelled small terms") {
  std::vector<double> v{1e100, 1.0, -1e100};
  CHECK(exact_sum(v) == 1.0);

  std::vector<double> w{1.0, 1e100, 1.0, -1e100};
  CHECK(exact_sum(w) == 2.0);

  std::vector<double> tiny{1.0, 1e-20, -1.0};
  CHECK(exact_sum(tiny) == 1e-20);
}

TEST_CASE("exact_sum of an empty span is zero") {
  std::vector<double> v;
  CHECK(exact_sum(v) == 0.0);
}

TEST_CASE("exact_sum matches plain summation on benign data") {
  std::vector<double> v;
  Rng rng(7);
  long double acc = 0.0L;
  for (int i = 0; i < 1000; ++i) {
    double x = rng.uniform(-1.0, 1.0);
    v.push_back(x);
    acc += static_cast<long double>(x);
  }
  CHECK(exact_sum(v) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-15));
}

TEST_CASE("exact_sum is bitwise permutation invariant") {
  Rng rng(42);
  std::vector<double> v;
  for (int i = 0; i < 257; ++i) v.push_back(rng.uniform(-1e8, 1e8) * std::pow(10.0, rng.uniform(-8, 8)));
  const double base = exact_sum(v);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(v);
    CHECK(exact_sum(v) == base);
  }
  std::sort(v.begin(), v.end());
  CHECK(exact_sum(v) == base);
  std::reverse(v.begin(), v.end());
  CHECK(exact_sum(v) == base);
}

TEST_CASE("exact_mean divides the exact sum") {
  std::vector<double> v{0.1, 0.2, 0.3, 0.4};
  CHECK(exact_mean(v) == exact_sum(v) / 4.0);
  std::vector<double> one{5.0};
  CHECK(exact_mean(one) == 5.0);
}

TEST_CASE("all_finite flags NaN and infinity") {
  std::vector<double> ok{0.0, -1e308, 1e-308};
  CHECK(all_finite(ok));
  std::vector<double> with_nan{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_FALSE(all_finite(with_nan));
  std::vector<double> with_inf{1.0, std::numeric_limits<double>::infinity()};
  CHECK_FALSE(all_finite(with_inf));
}

TEST_CASE("clamp pins to the interval") {
  CHECK(clamp(0.5, 0.0, 1.0) == 0.5);
  CHECK(clamp(-2.0, 0.0, 1.0) == 0.0);
  CHECK(clamp(9.0, 0.0, 1.0) == 1.0);
  CHECK(clamp(-7.5, -7.0, 7.0) == -7.0);
}
