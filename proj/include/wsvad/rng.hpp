#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace wsvad {

// Deterministic RNG. mt19937_64 has a standard-mandated output sequence and
// the uniform/normal mappings below are explicit, so streams reproduce
// bit-exactly across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(eng_() % span);
  }

  // Box-Muller, one cached value per pair
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Independent stream per (seed, name): adding or removing one named consumer
// never shifts the draws of another.
inline Rng named_rng(std::uint64_t seed, std::string_view name) {
  return Rng(seed ^ fnv1a64(name));
}

}  // namespace wsvad
