#pragma once

#include <cstdint>

namespace inasim {

// Simulated time in integer picoseconds. Picosecond resolution keeps
// sub-nanosecond serialization delays (306B @ 100Gbps = 24.48ns) exact
// while staying in integer arithmetic; exported traces use nanoseconds.
using SimTime = std::int64_t;

constexpr SimTime kPsPerNs = 1'000;
constexpr SimTime kPsPerUs = 1'000'000;
constexpr SimTime kPsPerMs = 1'000'000'000;
constexpr SimTime kPsPerSec = 1'000'000'000'000;

constexpr SimTime from_ns(std::int64_t ns) { return ns * kPsPerNs; }
constexpr SimTime from_us(std::int64_t us) { return us * kPsPerUs; }
constexpr SimTime from_ms(std::int64_t ms) { return ms * kPsPerMs; }

constexpr std::int64_t to_ns(SimTime t) { return t / kPsPerNs; }

constexpr SimTime from_seconds(double s) {
  return static_cast<SimTime>(s * static_cast<double>(kPsPerSec));
}
constexpr double to_seconds(SimTime t) {
  return static_cast<double>(t) / static_cast<double>(kPsPerSec);
}

}  // namespace inasim
