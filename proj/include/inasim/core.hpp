#pragma once

#include <array>
#include <bit>
#include <cassert>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "inasim/time.hpp"

namespace inasim {

// Identifiers. WorkerId is the worker's index *within its job*, in
// [0, fan-in), so it doubles as the bitmap bit position. Physical
// endpoints are NodeId (topology-level), kept separate on purpose.
using WorkerId = std::uint32_t;
using JobId = std::uint32_t;
using SeqNum = std::uint32_t;
using SwitchId = std::uint32_t;
using PsId = std::uint32_t;
using NodeId = std::uint32_t;

constexpr std::uint32_t kMaxFanIn = 32;  // one 32-bit bitmap per level

constexpr std::uint32_t full_mask(std::uint32_t fan_in) {
  assert(fan_in >= 1 && fan_in <= kMaxFanIn);
  return fan_in == 32 ? 0xFFFFFFFFu : ((1u << fan_in) - 1u);
}

enum class PacketKind : std::uint8_t {
  Gradient = 0,
  Result = 1,
  PartialToPS = 2,
  Reminder = 3,
  Query = 4,
  Retransmit = 5,
};

inline const char* to_string(PacketKind k) {
  switch (k) {
    case PacketKind::Gradient: return "Gradient";
    case PacketKind::Result: return "Result";
    case PacketKind::PartialToPS: return "PartialToPS";
    case PacketKind::Reminder: return "Reminder";
    case PacketKind::Query: return "Query";
    case PacketKind::Retransmit: return "Retransmit";
  }
  return "?";
}

// Symbolic gradient value: a multiset of worker contributions. The fast
// path is a bitmap of multiplicity-1 contributions; multiplicities above
// one (which only arise when something double-aggregates) spill into a
// shared side table keyed by worker bit.
struct Payload {
  std::uint32_t mask = 0;       // workers contributing exactly once (or more, see extra)
  std::uint32_t byte_size = 0;  // serialized size on the wire
  // (worker, count-beyond-one) pairs; null in every healthy run
  std::shared_ptr<const std::vector<std::pair<std::uint8_t, std::uint8_t>>> extra;

  bool has_duplicates() const { return extra != nullptr; }

  std::uint32_t multiplicity(WorkerId w) const {
    std::uint32_t m = (mask >> w) & 1u;
    if (extra) {
      for (const auto& [bit, cnt] : *extra)
        if (bit == w) return m + cnt;
    }
    return m;
  }

  bool empty() const { return mask == 0 && !extra; }

  bool operator==(const Payload& rhs) const {
    if (mask != rhs.mask) return false;
    for (std::uint32_t w = 0; w < kMaxFanIn; ++w)
      if (multiplicity(w) != rhs.multiplicity(w)) return false;
    return true;
  }
};

inline Payload make_contribution(WorkerId w, std::uint32_t byte_size) {
  assert(w < kMaxFanIn);
  Payload p;
  p.mask = 1u << w;
  p.byte_size = byte_size;
  return p;
}

// Multiset union of two payloads; byte_size keeps the larger envelope.
inline Payload payload_add(const Payload& a, const Payload& b) {
  Payload out;
  out.byte_size = std::max(a.byte_size, b.byte_size);
  if (!a.extra && !b.extra && (a.mask & b.mask) == 0) {
    out.mask = a.mask | b.mask;
    return out;
  }
  std::vector<std::pair<std::uint8_t, std::uint8_t>> extra;
  for (std::uint32_t w = 0; w < kMaxFanIn; ++w) {
    std::uint32_t m = a.multiplicity(w) + b.multiplicity(w);
    if (m == 0) continue;
    out.mask |= 1u << w;
    if (m > 1) extra.emplace_back(static_cast<std::uint8_t>(w),
                                  static_cast<std::uint8_t>(m - 1));
  }
  if (!extra.empty())
    out.extra = std::make_shared<const std::vector<std::pair<std::uint8_t, std::uint8_t>>>(
        std::move(extra));
  return out;
}

// True iff the payload is exactly one contribution from every worker in
// the mask: the completed aggregation for that worker set.
inline bool is_complete(const Payload& p, std::uint32_t workers_mask) {
  assert(workers_mask != 0);
  return p.mask == workers_mask && !p.extra;
}

struct PacketHeader {
  PacketKind kind = PacketKind::Gradient;
  JobId job = 0;
  SeqNum seq = 0;
  std::uint8_t priority = 0;
  std::uint8_t level = 0;        // 0: worker->switch traffic, 1: switch->switch
  std::uint32_t agg_index = 0;   // pool slot, precomputed at the sender
  std::uint32_t bitmap0 = 0;     // first-level (worker) contribution bits
  std::uint32_t bitmap1 = 0;     // second-level (rack) contribution bits
};

// Canonical trace serialization: fixed order, little-endian.
// kind(1) job(4) seq(4) priority(1) level(1) agg_index(4) bitmap0(4) bitmap1(4)
constexpr std::size_t kHeaderBytes = 23;

inline std::array<std::uint8_t, kHeaderBytes> encode_header(const PacketHeader& h) {
  std::array<std::uint8_t, kHeaderBytes> out{};
  std::size_t i = 0;
  auto put32 = [&](std::uint32_t v) {
    out[i++] = static_cast<std::uint8_t>(v);
    out[i++] = static_cast<std::uint8_t>(v >> 8);
    out[i++] = static_cast<std::uint8_t>(v >> 16);
    out[i++] = static_cast<std::uint8_t>(v >> 24);
  };
  out[i++] = static_cast<std::uint8_t>(h.kind);
  put32(h.job);
  put32(h.seq);
  out[i++] = h.priority;
  out[i++] = h.level;
  put32(h.agg_index);
  put32(h.bitmap0);
  put32(h.bitmap1);
  return out;
}

inline PacketHeader decode_header(const std::array<std::uint8_t, kHeaderBytes>& in) {
  PacketHeader h;
  std::size_t i = 0;
  auto get32 = [&]() {
    std::uint32_t v = in[i] | (std::uint32_t{in[i + 1]} << 8) |
                      (std::uint32_t{in[i + 2]} << 16) | (std::uint32_t{in[i + 3]} << 24);
    i += 4;
    return v;
  };
  h.kind = static_cast<PacketKind>(in[i++]);
  h.job = get32();
  h.seq = get32();
  h.priority = in[i++];
  h.level = in[i++];
  h.agg_index = get32();
  h.bitmap0 = get32();
  h.bitmap1 = get32();
  return h;
}

struct GradientPacket {
  PacketHeader header;
  Payload payload;
  NodeId src = 0;
  NodeId dst = 0;
  SimTime sent_at = 0;
  bool reliable = false;  // end-host<->end-host control/retransmit channel
};

// Reminder packets carry only job and sequence number; everything else
// stays zero, including the payload.
inline GradientPacket make_reminder(JobId job, SeqNum seq, NodeId src, NodeId dst,
                                    std::uint32_t wire_bytes) {
  GradientPacket p;
  p.header.kind = PacketKind::Reminder;
  p.header.job = job;
  p.header.seq = seq;
  p.payload.byte_size = wire_bytes;
  p.src = src;
  p.dst = dst;
  return p;
}

}  // namespace inasim
