#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/services.hpp"
#include "inasim/switchd.hpp"

namespace inasim {

constexpr std::uint32_t kControlBytes = static_cast<std::uint32_t>(kHeaderBytes);
constexpr std::uint32_t kDupAckThreshold = 3;  // fixed at both worker and PS
constexpr int kRtoBackoffCapFactor = 100;      // backoff cap = 100 * rto_min

inline std::uint64_t job_seq_key(JobId job, SeqNum seq) {
  return (static_cast<std::uint64_t>(job) << 32) | seq;
}

// Jacobson-style smoothed RTT with a floor; the reminder timers at both
// ends share this shape.
struct RtoEstimator {
  SimTime rto_min = from_ms(1);
  double srtt = 0;
  double rttvar = 0;
  bool primed = false;

  void sample(SimTime m) {
    double v = static_cast<double>(m);
    if (!primed) {
      srtt = v;
      rttvar = v / 2;
      primed = true;
    } else {
      rttvar = 0.75 * rttvar + 0.25 * std::abs(srtt - v);
      srtt = 0.875 * srtt + 0.125 * v;
    }
  }

  SimTime rto() const {
    if (!primed) return rto_min;
    auto raw = static_cast<SimTime>(srtt + 4 * rttvar);
    return std::clamp(raw, rto_min, rto_min * kRtoBackoffCapFactor);
  }
};

struct WorkerConfig {
  WorkerId bit = 0;  // index within the job; the bitmap position
  JobId job = 0;
  NodeId self = 0;
  NodeId ingress_switch = 0;
  NodeId ps = 0;
  std::uint32_t packet_bytes = 306;
  std::uint32_t window_packets = 196;  // already min'd with the partition in static mode
  std::uint32_t worker_mask = 0;       // the job's full worker set
  bool static_mode = false;
  std::uint32_t partition_base = 0;
  std::uint32_t partition_size = 0;
  std::uint64_t pool_size = 1;
  SimTime rto_min = from_ms(1);
};

// Worker side: windowed pushing with priority tags, result pulling with a
// small cache, dupACK/timeout reminders, and query replies.
class Worker {
 public:
  Worker() = default;
  explicit Worker(WorkerConfig cfg) : cfg_(cfg) {
    rto_.rto_min = cfg.rto_min;
    cache_.assign(cfg_.window_packets, CacheSlot{});
    send_times_.assign(2 * cfg_.window_packets, TimeSlot{});
  }

  const WorkerConfig& config() const { return cfg_; }

  void set_planned_total(std::uint64_t n) { delivered_.assign(n, false); }

  // Delivery hook for the workload driver.
  std::function<void(SeqNum, SimTime)> on_deliver;

  // Queue `count` fragments of `layer`, all sharing one priority tag, and
  // start sending whatever the window allows.
  void push(std::uint32_t count, std::uint8_t priority, std::uint8_t layer,
            SimServices& sim) {
    assert(count > 0);
    next_alloc_ += count;
    if (delivered_.size() < next_alloc_) delivered_.resize(next_alloc_, false);
    pending_.push_back({next_alloc_, priority, layer});
    try_send(sim);
  }

  void receive(const GradientPacket& pkt, SimServices& sim) {
    switch (pkt.header.kind) {
      case PacketKind::Result: on_result(pkt, sim); break;
      case PacketKind::Query: on_query(pkt, sim); break;
      default: assert(false && "unexpected packet kind at worker");
    }
  }

  void on_timer(std::uint64_t key, SimServices& sim) {
    if (key != timer_gen_) return;  // superseded
    if (expected_ >= next_to_send_) return;
    emit_worker_reminder(sim);
    ++backoff_exp_;
    arm_timer(sim);
  }

  SeqNum expected() const { return expected_; }
  SeqNum next_to_send() const { return next_to_send_; }
  SeqNum allocated() const { return next_alloc_; }
  std::uint64_t in_flight_packets() const { return next_to_send_ - expected_; }
  std::uint64_t in_flight_bytes() const {
    return in_flight_packets() * cfg_.packet_bytes;
  }
  bool drained() const {
    return expected_ == next_alloc_ && next_to_send_ == next_alloc_;
  }
  bool delivered(SeqNum seq) const { return seq < delivered_.size() && delivered_[seq]; }
  std::uint64_t delivered_count() const { return delivered_count_; }

  struct Counters {
    std::uint64_t reminders = 0;
    std::uint64_t query_replies = 0;
    std::uint64_t retransmits = 0;
    std::uint64_t queries_unanswered = 0;
    std::uint64_t stale_results = 0;
    std::uint64_t content_alarms = 0;
    std::uint64_t unknown_drops = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  struct PendingRange {
    SeqNum end;
    std::uint8_t priority;
    std::uint8_t layer;
  };
  struct CacheSlot {
    SeqNum seq = kNoSeq;
    Payload payload;
  };
  struct TimeSlot {
    SeqNum seq = kNoSeq;
    SimTime at = 0;
  };
  static constexpr SeqNum kNoSeq = 0xFFFFFFFFu;

  void try_send(SimServices& sim) {
    bool was_idle = expected_ == next_to_send_;
    while (next_to_send_ < next_alloc_ &&
           next_to_send_ - expected_ < cfg_.window_packets) {
      send_fragment(next_to_send_, sim);
      ++next_to_send_;
    }
    if (was_idle && expected_ < next_to_send_) arm_timer(sim);
  }

  void send_fragment(SeqNum seq, SimServices& sim) {
    assert(!pending_.empty() && seq < pending_.front().end);
    const PendingRange& range = pending_.front();
    GradientPacket p;
    p.header.kind = PacketKind::Gradient;
    p.header.job = cfg_.job;
    p.header.seq = seq;
    p.header.priority = range.priority;
    p.header.level = 0;
    p.header.bitmap0 = 1u << cfg_.bit;
    p.header.agg_index = cfg_.static_mode
                             ? cfg_.partition_base + seq % cfg_.partition_size
                             : agg_index(cfg_.job, seq, cfg_.pool_size);
    p.payload = make_contribution(cfg_.bit, cfg_.packet_bytes);
    p.src = cfg_.self;
    p.dst = cfg_.ingress_switch;
    p.sent_at = sim.now();
    send_times_[seq % send_times_.size()] = {seq, sim.now()};
    if (seq + 1 == pending_.front().end) pending_.pop_front();
    sim.send(std::move(p));
  }

  void on_result(const GradientPacket& pkt, SimServices& sim) {
    if (pkt.header.job != cfg_.job) {
      ++counters_.unknown_drops;
      return;
    }
    SeqNum seq = pkt.header.seq;
    if (seq >= next_alloc_ || seq < expected_) {
      // Beyond anything pushed is a bug; below expected is a stale copy.
      assert(seq < next_alloc_);
      ++counters_.stale_results;
      return;
    }
    cache_put(seq, pkt.payload);
    if (seq < delivered_.size() && delivered_[seq]) {
      ++counters_.stale_results;
    } else {
      deliver(seq, pkt.payload, sim);
    }
    if (seq == expected_) {
      rtt_sample(seq, sim.now());
      while (expected_ < next_alloc_ && expected_ < delivered_.size() &&
             delivered_[expected_])
        ++expected_;
      dup_counter_ = 0;
      backoff_exp_ = 0;
      arm_timer(sim);
      try_send(sim);
    } else {
      if (++dup_counter_ == kDupAckThreshold) {
        emit_worker_reminder(sim);
        dup_counter_ = 0;
      }
    }
  }

  void deliver(SeqNum seq, const Payload& payload, SimServices& sim) {
    if (seq < delivered_.size()) delivered_[seq] = true;
    ++delivered_count_;
    if (!is_complete(payload, cfg_.worker_mask)) ++counters_.content_alarms;
    sim.trace(cfg_.self, TraceEvent::WkDeliver, cfg_.job, seq, payload.mask, 0);
    if (on_deliver) on_deliver(seq, sim.now());
  }

  void on_query(const GradientPacket& pkt, SimServices& sim) {
    SeqNum seq = pkt.header.seq;
    if (seq >= next_to_send_) {
      // This fragment has not left the worker yet (not produced, or still
      // queued behind the window); there is nothing to recover. The PS
      // keeps retrying until the regular send happens.
      ++counters_.queries_unanswered;
      return;
    }
    GradientPacket reply;
    reply.header.job = cfg_.job;
    reply.header.seq = seq;
    reply.src = cfg_.self;
    reply.dst = cfg_.ps;
    reply.sent_at = sim.now();
    if (const Payload* hit = cache_get(seq)) {
      reply.header.kind = PacketKind::Result;
      reply.payload = *hit;
      reply.payload.byte_size = cfg_.packet_bytes;
      ++counters_.query_replies;
      sim.trace(cfg_.self, TraceEvent::WkQueryReply, cfg_.job, seq, hit->mask, 0);
    } else {
      // Not seen (or evicted): hand back this worker's own contribution so
      // the PS can re-aggregate.
      reply.header.kind = PacketKind::Retransmit;
      reply.payload = make_contribution(cfg_.bit, cfg_.packet_bytes);
      ++counters_.retransmits;
      sim.trace(cfg_.self, TraceEvent::WkRetransmit, cfg_.job, seq, cfg_.bit, 0);
    }
    sim.send(std::move(reply));
  }

  void emit_worker_reminder(SimServices& sim) {
    ++counters_.reminders;
    // Anything currently in flight may now resolve through recovery, so
    // its push->result interval no longer measures the network RTT.
    rtt_sample_floor_ = next_to_send_;
    sim.trace(cfg_.self, TraceEvent::WkReminder, cfg_.job, expected_, 0, 0);
    sim.send(make_reminder(cfg_.job, expected_, cfg_.self, cfg_.ps, kControlBytes));
  }

  void arm_timer(SimServices& sim) {
    if (expected_ >= next_to_send_) return;
    SimTime delay = rto_.rto() << std::min<std::uint32_t>(backoff_exp_, 10);
    delay = std::min(delay, rto_.rto_min * kRtoBackoffCapFactor);
    sim.node_timer(cfg_.self, sim.now() + delay, ++timer_gen_);
  }

  void rtt_sample(SeqNum seq, SimTime at) {
    if (seq < rtt_sample_floor_) return;
    const TimeSlot& ts = send_times_[seq % send_times_.size()];
    if (ts.seq == seq) rto_.sample(at - ts.at);
  }

  void cache_put(SeqNum seq, const Payload& p) {
    CacheSlot& slot = cache_[seq % cache_.size()];
    slot.seq = seq;
    slot.payload = p;
  }
  const Payload* cache_get(SeqNum seq) const {
    const CacheSlot& slot = cache_[seq % cache_.size()];
    return slot.seq == seq ? &slot.payload : nullptr;
  }

  WorkerConfig cfg_;
  std::deque<PendingRange> pending_;
  SeqNum next_alloc_ = 0;
  SeqNum next_to_send_ = 0;
  SeqNum expected_ = 0;
  std::uint32_t dup_counter_ = 0;
  std::uint32_t backoff_exp_ = 0;
  SeqNum rtt_sample_floor_ = 0;
  std::uint64_t timer_gen_ = 0;
  std::vector<CacheSlot> cache_;
  std::vector<TimeSlot> send_times_;
  std::vector<bool> delivered_;
  std::uint64_t delivered_count_ = 0;
  RtoEstimator rto_;
  Counters counters_;
};

struct PsEntry {
  std::uint32_t bitmap = 0;  // worker contributions held in `partial`
  Payload partial;
  SimTime timestamp = 0;  // last data progress
  SimTime created = 0;
  std::uint32_t dupack = 0;
  std::uint32_t round = 0;        // escalation rounds run so far
  std::uint32_t have_mask = 0;    // workers known to already hold the result
  std::uint32_t queried_mask = 0; // workers asked to refill this fragment
  SimTime deadline = 0;
};

struct PsJobInfo {
  std::vector<NodeId> workers;  // indexed by worker bit
  std::uint32_t worker_mask = 0;
  std::vector<NodeId> switches;  // the job's path, for reminders
  std::uint32_t packet_bytes = 306;
};

// PS side: merges partial results, recreates lost state with reminders,
// re-aggregates from retransmits, and multicasts completed fragments.
class ParamServer {
 public:
  ParamServer() = default;
  ParamServer(PsId id, NodeId self, SimTime rto_min) : id_(id), self_(self) {
    rto_.rto_min = rto_min;
  }

  PsId id() const { return id_; }
  NodeId node() const { return self_; }

  void register_job(JobId job, PsJobInfo info) {
    node_to_bit_[job].clear();
    for (std::uint32_t b = 0; b < info.workers.size(); ++b)
      node_to_bit_[job][info.workers[b]] = b;
    info_[job] = std::move(info);
  }

  void receive(const GradientPacket& pkt, SimServices& sim) {
    switch (pkt.header.kind) {
      case PacketKind::PartialToPS:
        merge_contribution(pkt, /*allow_create=*/true, sim);
        break;
      case PacketKind::Retransmit:
        merge_contribution(pkt, /*allow_create=*/false, sim);
        break;
      case PacketKind::Reminder: on_worker_reminder(pkt, sim); break;
      case PacketKind::Result: on_query_reply(pkt, sim); break;
      default: assert(false && "unexpected packet kind at PS");
    }
  }

  void on_timer(std::uint64_t key, SimServices& sim) {
    JobId job = static_cast<JobId>(key >> 32);
    SeqNum seq = static_cast<SeqNum>(key & 0xFFFFFFFFu);
    auto jit = entries_.find(job);
    if (jit == entries_.end()) return;
    auto eit = jit->second.find(seq);
    if (eit == jit->second.end()) return;
    PsEntry& e = eit->second;
    if (sim.now() < e.deadline) return;  // superseded by a later arm
    if (sim.now() - e.timestamp < rto_.rto()) {
      arm(job, seq, e, e.timestamp + rto_.rto() - sim.now(), sim);
      return;
    }
    escalate(job, seq, e, sim);
  }

  bool has_entry(JobId job, SeqNum seq) const {
    auto jit = entries_.find(job);
    return jit != entries_.end() && jit->second.count(seq);
  }
  const PsEntry* entry(JobId job, SeqNum seq) const {
    auto jit = entries_.find(job);
    if (jit == entries_.end()) return nullptr;
    auto eit = jit->second.find(seq);
    return eit == jit->second.end() ? nullptr : &eit->second;
  }
  std::uint64_t live_entries() const {
    std::uint64_t n = 0;
    for (const auto& [job, m] : entries_) n += m.size();
    return n;
  }
  template <typename Fn>
  void for_each_entry(Fn&& fn) const {
    for (const auto& [job, m] : entries_)
      for (const auto& [seq, e] : m) fn(job, seq, e);
  }

  struct Counters {
    std::uint64_t switch_reminders = 0;
    std::uint64_t queries = 0;
    std::uint64_t merges = 0;
    std::uint64_t multicasts = 0;
    std::uint64_t dup_alarms = 0;
    std::uint64_t retransmit_dups = 0;
    std::uint64_t late_packets = 0;
  };
  const Counters& counters() const { return counters_; }

 private:
  void merge_contribution(const GradientPacket& pkt, bool allow_create, SimServices& sim) {
    JobId job = pkt.header.job;
    SeqNum seq = pkt.header.seq;
    auto info_it = info_.find(job);
    if (info_it == info_.end()) {
      ++counters_.late_packets;
      return;
    }
    const PsJobInfo& info = info_it->second;
    auto& jobmap = entries_[job];
    auto eit = jobmap.find(seq);
    if (eit == jobmap.end()) {
      if (!allow_create) {
        ++counters_.late_packets;  // retransmit raced the completion
        return;
      }
      eit = jobmap.emplace(seq, PsEntry{}).first;
      eit->second.created = eit->second.timestamp = sim.now();
      sim.trace(self_, TraceEvent::PsCreate, job, seq, 0, 0);
      arm(job, seq, eit->second, rto_.rto(), sim);
    }
    PsEntry& e = eit->second;

    Payload incoming = pkt.payload;
    std::uint32_t overlap = e.bitmap & incoming.mask;
    if (overlap != 0 || incoming.has_duplicates()) {
      // A contribution would be aggregated twice. A copy racing its own
      // requested retransmission is what the bitmap exists to absorb;
      // anything else is a correctness alarm. Either way the duplicate
      // part is stripped so the result stays exact.
      bool benign = pkt.header.kind == PacketKind::Retransmit ||
                    (!incoming.has_duplicates() && (overlap & ~e.queried_mask) == 0);
      if (benign)
        ++counters_.retransmit_dups;
      else
        ++counters_.dup_alarms;
      Payload filtered;
      filtered.mask = incoming.mask & ~e.bitmap;
      filtered.byte_size = incoming.byte_size;
      incoming = filtered;
      if (incoming.mask == 0) return;
    }
    e.partial = payload_add(e.partial, incoming);
    e.bitmap |= incoming.mask;
    e.timestamp = sim.now();
    ++counters_.merges;
    sim.trace(self_, TraceEvent::PsMerge, job, seq, e.bitmap, incoming.mask);

    // Aggregated gradients for later fragments double as dupACKs for the
    // ones still stuck.
    if (pkt.header.kind == PacketKind::PartialToPS) {
      for (auto it = jobmap.begin(); it != jobmap.end() && it->first < seq;) {
        PsEntry& stuck = it->second;
        JobId j = job;
        SeqNum s = it->first;
        ++it;  // reminder emission cannot invalidate map iterators, but stay safe
        if (++stuck.dupack >= kDupAckThreshold) {
          stuck.dupack = 0;
          send_switch_reminders(j, s, sim);
        }
      }
    }

    if (e.bitmap == info.worker_mask) complete(job, seq, e, sim);
  }

  void on_worker_reminder(const GradientPacket& pkt, SimServices& sim) {
    JobId job = pkt.header.job;
    SeqNum seq = pkt.header.seq;
    if (!info_.count(job)) {
      ++counters_.late_packets;
      return;
    }
    auto& jobmap = entries_[job];
    auto eit = jobmap.find(seq);
    if (eit == jobmap.end()) {
      eit = jobmap.emplace(seq, PsEntry{}).first;
      eit->second.created = eit->second.timestamp = sim.now();
      sim.trace(self_, TraceEvent::PsCreate, job, seq, 0, 1);
      // The PS has no state for this fragment; pull whatever the switches
      // hold right away.
      eit->second.round = 1;
      send_switch_reminders(job, seq, sim);
      arm(job, seq, eit->second, rto_.rto(), sim);
    }
    // With an entry already present the per-entry timer handles it.
  }

  void on_query_reply(const GradientPacket& pkt, SimServices& sim) {
    JobId job = pkt.header.job;
    SeqNum seq = pkt.header.seq;
    auto jit = entries_.find(job);
    if (jit == entries_.end()) {
      ++counters_.late_packets;
      return;
    }
    auto eit = jit->second.find(seq);
    if (eit == jit->second.end()) {
      ++counters_.late_packets;
      return;
    }
    PsEntry& e = eit->second;
    const PsJobInfo& info = info_.at(job);
    auto bit_it = node_to_bit_.at(job).find(pkt.src);
    assert(bit_it != node_to_bit_.at(job).end());
    e.have_mask |= 1u << bit_it->second;
    // The reply carries a finished aggregation; adopt it. Anything the
    // entry holds must be a subset or something got counted twice.
    if (!is_complete(pkt.payload, info.worker_mask) ||
        (e.bitmap & ~pkt.payload.mask) != 0 || e.partial.has_duplicates()) {
      ++counters_.dup_alarms;
    }
    e.partial = pkt.payload;
    e.bitmap = info.worker_mask;
    e.timestamp = sim.now();
    complete(job, seq, e, sim);
  }

  void complete(JobId job, SeqNum seq, PsEntry& e, SimServices& sim) {
    const PsJobInfo& info = info_.at(job);
    assert(is_complete(e.partial, info.worker_mask));
    sim.trace(self_, TraceEvent::PsMulticast, job, seq, e.bitmap, e.have_mask);
    ++counters_.multicasts;
    for (std::uint32_t b = 0; b < info.workers.size(); ++b) {
      if (e.have_mask & (1u << b)) continue;
      GradientPacket out;
      out.header.kind = PacketKind::Result;
      out.header.job = job;
      out.header.seq = seq;
      out.payload = e.partial;
      out.payload.byte_size = info.packet_bytes;
      out.src = self_;
      out.dst = info.workers[b];
      out.sent_at = sim.now();
      sim.send(std::move(out));
    }
    // Entries that needed reminder rounds would poison the estimate with
    // recovery latency; only clean setup->completion intervals count.
    if (e.round == 0) rto_.sample(sim.now() - e.created);
    entries_[job].erase(seq);
  }

  void escalate(JobId job, SeqNum seq, PsEntry& e, SimServices& sim) {
    const PsJobInfo& info = info_.at(job);
    ++e.round;
    send_switch_reminders(job, seq, sim);
    if (e.round >= 2) {
      // The switches had nothing (or their flush was lost): query every
      // worker the entry is still missing; holders return the cached
      // result, the rest re-send their own gradient.
      std::uint32_t missing = info.worker_mask & ~(e.bitmap | e.have_mask);
      e.queried_mask |= missing;
      for (std::uint32_t b = 0; b < info.workers.size(); ++b) {
        if (!(missing & (1u << b))) continue;
        GradientPacket q;
        q.header.kind = PacketKind::Query;
        q.header.job = job;
        q.header.seq = seq;
        q.payload.byte_size = kControlBytes;
        q.src = self_;
        q.dst = info.workers[b];
        q.sent_at = sim.now();
        ++counters_.queries;
        sim.trace(self_, TraceEvent::PsQuery, job, seq, b, 0);
        sim.send(std::move(q));
      }
    }
    SimTime delay = rto_.rto() << std::min<std::uint32_t>(e.round - 1, 10);
    delay = std::min(delay, rto_.rto_min * kRtoBackoffCapFactor);
    arm(job, seq, e, delay, sim);
  }

  void send_switch_reminders(JobId job, SeqNum seq, SimServices& sim) {
    const PsJobInfo& info = info_.at(job);
    for (NodeId sw : info.switches) {
      ++counters_.switch_reminders;
      sim.trace(self_, TraceEvent::PsReminder, job, seq, sw, 0);
      sim.send(make_reminder(job, seq, self_, sw, kControlBytes));
    }
  }

  void arm(JobId job, SeqNum seq, PsEntry& e, SimTime delay, SimServices& sim) {
    e.deadline = sim.now() + delay;
    sim.node_timer(self_, e.deadline, job_seq_key(job, seq));
  }

  PsId id_ = 0;
  NodeId self_ = 0;
  std::map<JobId, std::map<SeqNum, PsEntry>> entries_;
  std::unordered_map<JobId, PsJobInfo> info_;
  std::unordered_map<JobId, std::unordered_map<NodeId, std::uint32_t>> node_to_bit_;
  RtoEstimator rto_;
  Counters counters_;
};

}  // namespace inasim
