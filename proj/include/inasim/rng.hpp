#pragma once

#include <cstdint>
#include <random>

namespace inasim {

// splitmix64 finalizer; also the mixer behind agg_index.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

// One independent stream per randomness consumer, all derived from the
// run's root seed by mixing in a per-purpose tag. Adding a consumer never
// perturbs the draws of the others.
enum class RngPurpose : std::uint64_t {
  Loss = 0x6c6f7373,       // "loss"
  Jitter = 0x6a697474,     // "jitt"
  StartTime = 0x73747274,  // "strt"
  CoinFlip = 0x636f696e,   // "coin"
};

class RngStream {
 public:
  RngStream() : eng_(0) {}
  RngStream(std::uint64_t root_seed, RngPurpose purpose)
      : eng_(mix64(root_seed ^ (static_cast<std::uint64_t>(purpose) * 0x9E3779B97F4A7C15ULL))) {}

  // Uniform in [0,1); generated from raw bits so the sequence does not
  // depend on the standard library's distribution implementation.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t next() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace inasim
