#ifndef NLMR_RNG_HPP
#define NLMR_RNG_HPP

// Counter-based random streams. A stream is addressed by (seed, replicate,
// variable); its i-th draw is a pure function of that key and i, so datasets
// do not depend on generation order or thread scheduling.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "nlmr/linmod.hpp"

namespace nlmr {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t replicate, std::uint64_t variable)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ replicate) ^ (variable * 0xD1B54A32D192ED03ULL))) {}

  std::uint64_t bits(std::uint64_t i) const { return splitmix64(key_ ^ splitmix64(i)); }

  // Uniform on the open interval (0, 1).
  double uniform(std::uint64_t i) const { return (static_cast<double>(bits(i) >> 11) + 0.5) * 0x1.0p-53; }

  // Box-Muller: draws 2j and 2j+1 share one pair of uniforms.
  double normal(std::uint64_t i) const {
    const std::uint64_t pair = i / 2;
    const double r = std::sqrt(-2.0 * std::log(uniform(2 * pair)));
    const double a = 2.0 * std::numbers::pi * uniform(2 * pair + 1);
    return (i % 2 == 0) ? r * std::cos(a) : r * std::sin(a);
  }

  Vec normals(Eigen::Index n) const {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(static_cast<std::uint64_t>(i));
    return v;
  }

  Vec uniforms(Eigen::Index n) const {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(static_cast<std::uint64_t>(i));
    return v;
  }

 private:
  std::uint64_t key_;
};

}  // namespace nlmr

#endif  // NLMR_RNG_HPP
