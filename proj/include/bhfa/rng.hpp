#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "bhfa/errors.hpp"

namespace bhfa {

// splitmix64 step; used to derive independent seed streams from a base seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic seed for stream `tag` at position `index` under `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t s = base ^ (tag * 0xD1B54A32D192ED03ull);
  std::uint64_t a = splitmix64(s);
  s ^= index * 0x8CB92BA72F3D8DD7ull;
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

// Stream tags; every consumer of randomness derives its seed from one of the
// two configured base seeds (data seed or train seed) plus one of these.
namespace seed_tag {
inline constexpr std::uint64_t kModelInit = 1;  // train seed
inline constexpr std::uint64_t kEpisode = 2;    // data seed, indexed by episode
inline constexpr std::uint64_t kNoise = 3;      // train seed, indexed by episode
inline constexpr std::uint64_t kAugment = 4;    // train seed, indexed by episode
inline constexpr std::uint64_t kEvalRun = 5;    // data seed, indexed by run
inline constexpr std::uint64_t kTemplates = 6;  // data seed, indexed by attempt
inline constexpr std::uint64_t kSamples = 7;    // data seed
}  // namespace seed_tag

// Uniform-draw generator. mt19937_64 gives the same sequence on every
// platform; the distributions are hand-rolled to keep that guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    require(n > 0, "Rng::uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // First k elements of a Fisher-Yates partial shuffle of 0..n-1.
  std::vector<int> choose(int n, int k) {
    require(k >= 0 && k <= n, "Rng::choose: k out of range");
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

 private:
  std::mt19937_64 engine_;
};

// Stream of standard-normal draws. Identical seed, identical sequence.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : rng_(seed), seed_(seed) {}

  std::uint64_t seed_used() const { return seed_; }

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller; u1 in (0,1] so the log is finite.
    double u1 = (static_cast<double>(rng_.next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(rng_.next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::vector<double> draw(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = next();
    return out;
  }

 private:
  Rng rng_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace bhfa
