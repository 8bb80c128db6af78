#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/time.hpp"

namespace inasim {

// Event vocabulary for the per-run trace. Switch events first, then the
// end-host ones; names are stable (golden tests and the CSV schema
// depend on them).
enum class TraceEvent : std::uint8_t {
  // switch
  Alloc,
  Aggr,
  CompleteMulticast,
  PreemptSwap,
  FwdPs,
  Downgrade,
  ReminderHit,
  ReminderMiss,
  // end hosts
  PsCreate,
  PsMerge,
  PsMulticast,
  PsReminder,
  PsQuery,
  WkReminder,
  WkDeliver,
  WkQueryReply,
  WkRetransmit,
  // network
  Drop,
};

inline const char* to_string(TraceEvent ev) {
  switch (ev) {
    case TraceEvent::Alloc: return "ALLOC";
    case TraceEvent::Aggr: return "AGGR";
    case TraceEvent::CompleteMulticast: return "COMPLETE_MULTICAST";
    case TraceEvent::PreemptSwap: return "PREEMPT_SWAP";
    case TraceEvent::FwdPs: return "FWD_PS";
    case TraceEvent::Downgrade: return "DOWNGRADE";
    case TraceEvent::ReminderHit: return "REMINDER_HIT";
    case TraceEvent::ReminderMiss: return "REMINDER_MISS";
    case TraceEvent::PsCreate: return "PS_CREATE";
    case TraceEvent::PsMerge: return "PS_MERGE";
    case TraceEvent::PsMulticast: return "PS_MULTICAST";
    case TraceEvent::PsReminder: return "PS_REMINDER";
    case TraceEvent::PsQuery: return "PS_QUERY";
    case TraceEvent::WkReminder: return "WK_REMINDER";
    case TraceEvent::WkDeliver: return "WK_DELIVER";
    case TraceEvent::WkQueryReply: return "WK_QUERY_REPLY";
    case TraceEvent::WkRetransmit: return "WK_RETRANSMIT";
    case TraceEvent::Drop: return "DROP";
  }
  return "?";
}

struct TraceRecord {
  SimTime at = 0;
  NodeId node = 0;
  TraceEvent event = TraceEvent::Alloc;
  JobId job = 0;
  SeqNum seq = 0;
  std::uint64_t a = 0;  // event-specific detail (bitmap, counter, priority, ...)
  std::uint64_t b = 0;
};

// Digest is always on (it is the determinism contract); record retention
// is opt-in since full traces of the big runs would not fit in memory.
class TraceSink {
 public:
  void set_keep_records(bool keep) { keep_records_ = keep; }
  bool keeping_records() const { return keep_records_; }

  void emit(const TraceRecord& r) {
    fold(static_cast<std::uint64_t>(r.at));
    fold((static_cast<std::uint64_t>(r.node) << 8) | static_cast<std::uint64_t>(r.event));
    fold((static_cast<std::uint64_t>(r.job) << 32) | r.seq);
    fold(r.a);
    fold(r.b);
    ++count_;
    if (keep_records_) records_.push_back(r);
  }

  std::uint64_t digest() const { return digest_; }
  std::uint64_t count() const { return count_; }
  const std::vector<TraceRecord>& records() const { return records_; }

 private:
  // FNV-1a over the record fields, byte by byte.
  void fold(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      digest_ ^= (v >> (8 * i)) & 0xFF;
      digest_ *= 0x100000001B3ULL;
    }
  }

  std::uint64_t digest_ = 0xCBF29CE484222325ULL;
  std::uint64_t count_ = 0;
  bool keep_records_ = false;
  std::vector<TraceRecord> records_;
};

}  // namespace inasim
