#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace roughcalc {

// Stateless normal variates keyed by (seed, a, b, c); evaluation order never matters.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b * 0xd1342543de82ef95ULL));
  return splitmix64(h ^ (c + 0x2545f4914f6cdd1dULL));
}

// Uniform in (0, 1).
inline double counter_uniform(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = counter_hash(seed, a, b, c);
  const double u1 = counter_uniform(h);
  const double u2 = counter_uniform(splitmix64(h));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace roughcalc
