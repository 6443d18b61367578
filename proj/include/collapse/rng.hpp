#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace collapse {

// Seedable 64-bit generator used for every stochastic decision in the lab.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The conversions to floating point below are written out by hand
// (std::uniform_real_distribution and friends are implementation-defined), so
// a given seed yields bit-identical draws on every conforming toolchain.
//
// Independent streams are derived from one run seed by name:
//
//   Rng sampling = Rng::stream(seed, "sampling");
//   Rng dropout  = Rng::stream(seed, "dropout");
//
// The stream seed is splitmix64(run_seed ^ fnv1a64(name)), so streams never
// share state and adding a new stream does not perturb existing ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  static Rng stream(std::uint64_t run_seed, std::string_view name) {
    return Rng(splitmix64(run_seed ^ fnv1a64(name)));
  }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two draws, returns one value.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) {
      u1 = 0x1.0p-53;
    }
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) {
      x = next_u64();
    }
    return x % n;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  static constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  static constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  // Full engine state as text (std::mt19937_64 stream format), for snapshots.
  std::string save_state() const {
    std::ostringstream out;
    out << seed_ << ' ' << draws_ << ' ' << engine_;
    return out.str();
  }

  static Rng restore_state(const std::string& text) {
    std::istringstream in(text);
    Rng rng;
    in >> rng.seed_ >> rng.draws_ >> rng.engine_;
    return rng;
  }

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.seed_ == b.seed_ && a.draws_ == b.draws_ && a.engine_ == b.engine_;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace collapse
