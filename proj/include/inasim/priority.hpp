#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "inasim/core.hpp"

namespace inasim {

// Per-job scheduling inputs. remaining_time_s is an estimate: the
// workload layer supplies remaining communication plus computation time;
// when that is unknown, callers fall back to attained service time.
struct JobProfile {
  JobId job = 0;
  double remaining_time_s = 1.0;  // T_j > 0
  std::uint32_t layer_count = 2;  // L_j >= 1
  double comm_overhead_s = 1.0;   // Comm_j > 0
  double comp_overhead_s = 1.0;   // Comp_j > 0
};

struct RawPriority {
  double value = 0.0;  // > 0
};

// P_j(l) = (1/T_j) * (L_j/l) * (Comm_j/Comp_j)
inline RawPriority compute_priority(const JobProfile& p, std::uint32_t layer) {
  if (layer == 0 || layer > p.layer_count)
    throw std::invalid_argument("layer out of range [1, L_j]");
  if (p.remaining_time_s <= 0 || p.comm_overhead_s <= 0 || p.comp_overhead_s <= 0)
    throw std::invalid_argument("job profile fields must be positive");
  double v = (1.0 / p.remaining_time_s) *
             (static_cast<double>(p.layer_count) / static_cast<double>(layer)) *
             (p.comm_overhead_s / p.comp_overhead_s);
  return RawPriority{v};
}

// Log map onto the 8-bit wire field. Midpoint 128 at p_ref, k steps per
// octave; order-preserving, extremes clamp.
struct QuantScale {
  double k = 16.0;
  double p_ref = 1.0;
};

inline std::uint8_t quantize_priority(RawPriority raw, const QuantScale& scale = {}) {
  long q = std::lround(scale.k * std::log2(raw.value / scale.p_ref)) + 128;
  return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

// Shift one bit to the right after a failed preemption attempt.
inline std::uint8_t downgrade(std::uint8_t stored) { return stored >> 1; }

// Fallback T_j estimate from the service a job has attained so far.
inline double remaining_time_from_attained(double attained_service_s) {
  constexpr double kEpsilonS = 1e-3;  // 1ms floor
  return std::max(attained_service_s, kEpsilonS);
}

}  // namespace inasim
