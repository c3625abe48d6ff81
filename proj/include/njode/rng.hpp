#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

namespace njode {

// Counter-based random numbers. Every draw is a pure function of a 64-bit
// key and a counter, so any subset of streams can be regenerated in any
// order (or in parallel) with bit-identical results.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_keys(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

// Stream tags keep unrelated consumers of the same seed apart.
enum class StreamTag : std::uint64_t {
  kPathNoise = 1,
  kObservationTimes = 2,
  kObservationMasks = 3,
  kSplit = 4,
  kInit = 5,
  kShuffle = 6,
  kDropout = 7,
  kStudy = 8,
};

constexpr std::uint64_t tag(StreamTag t) noexcept { return static_cast<std::uint64_t>(t); }

class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) noexcept : key_(key) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return splitmix64(key_ ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
  }

  // Uniform in [0, 1).
  double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Uniform in the open interval (0, 1).
  double uniform_open(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Two independent standard normals (Box-Muller) for one counter value.
  std::pair<double, double> normal_pair(std::uint64_t counter) const noexcept {
    const double u1 = uniform_open(2 * counter);
    const double u2 = uniform_open(2 * counter + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(phi), r * std::sin(phi)};
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

// Fisher-Yates permutation of 0..n-1 driven by a counter stream.
inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const CounterRng rng(key);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.bits(i) % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace njode
