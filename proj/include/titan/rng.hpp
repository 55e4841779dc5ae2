#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "titan/common.hpp"

namespace titan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream with bit-reproducible distributions.
///
/// The standard library's distribution objects are implementation defined, so
/// every transform here is spelled out explicitly; two runs with the same seed
/// produce identical draws on any platform. State round-trips through
/// serialize()/restore() for exact training resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed), base_(seed) {}

  /// Derives an independent substream of the original seed. Independent of how
  /// much of this stream has already been consumed.
  Rng stream(std::uint64_t tag) const {
    return Rng(splitmix64(splitmix64(base_) ^ splitmix64(tag ^ 0x6a09e667f3bcc909ULL)));
  }

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(eng_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller. No cached spare, so the engine state is
  /// the whole RNG state.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_ << ' ' << base_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> eng_ >> base_;
    if (!is) throw IoError("rng state: parse failure");
  }

 private:
  std::mt19937_64 eng_;
  std::uint64_t base_ = 0;
};

}  // namespace titan
