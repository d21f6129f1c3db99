#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace superlab::rng {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t w : words) h = mix64(h ^ mix64(w));
  return h;
}

// uniform in (0, 1), never 0
inline double to_unit(std::uint64_t x) {
  return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

inline double box_muller(std::uint64_t a, std::uint64_t b) {
  const double u1 = to_unit(a);
  const double u2 = to_unit(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline void box_muller_pair(std::uint64_t a, std::uint64_t b, double& g1, double& g2) {
  const double r = std::sqrt(-2.0 * std::log(to_unit(a)));
  const double th = 2.0 * M_PI * to_unit(b);
  g1 = r * std::cos(th);
  g2 = r * std::sin(th);
}

inline std::uint64_t as_word(long long v) { return static_cast<std::uint64_t>(v); }

// counter-based stream: value k of stream (key)
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}
  std::uint64_t bits(std::uint64_t k) const { return mix64(key_ ^ mix64(k + 0x632be59bd9b4e019ULL)); }
  double uniform(std::uint64_t k) const { return to_unit(bits(k)); }
  double normal(std::uint64_t k) const { return box_muller(bits(2 * k), bits(2 * k + 1)); }
  std::uint64_t below(std::uint64_t k, std::uint64_t n) const {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(k)) * n) >> 64);
  }

 private:
  std::uint64_t key_;
};

}  // namespace superlab::rng
