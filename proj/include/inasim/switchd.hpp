#pragma once

#include <bit>
#include <cassert>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/priority.hpp"
#include "inasim/rng.hpp"
#include "inasim/services.hpp"

namespace inasim {

struct AllocationPolicy {
  enum Kind : std::uint8_t {
    EsaPreemptive,
    AtpFcfs,
    SwitchMlStatic,
    AlwaysPreempt,
    CoinFlip,
  };
  Kind kind = EsaPreemptive;
  double p = 0.5;  // CoinFlip only

  bool is_static() const { return kind == SwitchMlStatic; }
};

inline const char* to_string(AllocationPolicy::Kind k) {
  switch (k) {
    case AllocationPolicy::EsaPreemptive: return "esa";
    case AllocationPolicy::AtpFcfs: return "atp";
    case AllocationPolicy::SwitchMlStatic: return "switchml";
    case AllocationPolicy::AlwaysPreempt: return "always";
    case AllocationPolicy::CoinFlip: return "coinflip";
  }
  return "?";
}

// hash(job, seq) -> pool slot. Fixed multipliers plus the splitmix64
// finalizer; deterministic across runs and platforms.
constexpr std::uint64_t kHashC1 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kHashC2 = 0xC2B2AE3D27D4EB4FULL;

inline std::uint32_t agg_index(JobId job, SeqNum seq, std::uint64_t pool_size) {
  assert(pool_size > 0);
  std::uint64_t h = mix64(static_cast<std::uint64_t>(job) * kHashC1 ^
                          static_cast<std::uint64_t>(seq) * kHashC2);
  return static_cast<std::uint32_t>(h % pool_size);
}

// One switch memory slot.
struct Aggregator {
  bool occupied = false;
  JobId job = 0;
  SeqNum seq = 0;
  std::uint8_t priority = 0;
  std::uint32_t bitmap = 0;
  std::uint32_t counter = 0;
  std::uint32_t fanin_l1 = 0;
  std::uint32_t fanin_l2 = 0;
  std::uint8_t level = 0;
  Payload value;

  void clear() { *this = Aggregator{}; }

  std::uint32_t active_fanin() const { return level == 0 ? fanin_l1 : fanin_l2; }

  bool cleared() const {
    return !occupied && job == 0 && seq == 0 && priority == 0 && bitmap == 0 &&
           counter == 0 && fanin_l1 == 0 && fanin_l2 == 0 && level == 0 && value.empty();
  }
};

// Per-switch view of one job: fan-in at this switch's level, where
// completed aggregations go, and the slot region in static mode.
struct SwitchJobBinding {
  std::uint32_t fanin = 0;        // contributions expected at this switch
  std::uint8_t level = 0;         // level flag carried by those contributions
  bool final_level = true;        // completion multicasts (else forwards upward)
  NodeId ps = 0;                  // fallback PS for this job
  NodeId upstream = 0;            // next switch when !final_level
  std::uint32_t upstream_bit = 0; // this switch's bit in the upstream bitmap
  std::vector<NodeId> multicast;  // worker nodes, when final_level
  std::uint32_t worker_mask = 0;  // the job's full worker set, for content checks
  std::uint32_t partition_base = 0;  // static mode
  std::uint32_t partition_size = 0;
};

// The switch data plane: aggregator pool plus the policy-dependent
// allocate / merge / collide logic of the pseudocode in the switch-logic
// figure. Single-owner; mutated only by the event loop.
class Switchd {
 public:
  Switchd() = default;
  Switchd(SwitchId id, NodeId node, std::uint64_t pool_size, AllocationPolicy policy,
          std::uint32_t wire_bytes)
      : id_(id), node_(node), pool_size_(pool_size), policy_(policy), wire_bytes_(wire_bytes) {
    // Dense storage for realistic pools, sparse when a test asks for an
    // effectively collision-free pool.
    if (pool_size_ <= kDenseLimit) dense_.assign(pool_size_, Aggregator{});
  }

  SwitchId id() const { return id_; }
  NodeId node() const { return node_; }
  std::uint64_t pool_size() const { return pool_size_; }
  const AllocationPolicy& policy() const { return policy_; }

  void register_job(JobId job, SwitchJobBinding binding) {
    assert(binding.fanin >= 1 && binding.fanin <= kMaxFanIn);
    bindings_[job] = std::move(binding);
  }
  const SwitchJobBinding* binding(JobId job) const {
    auto it = bindings_.find(job);
    return it == bindings_.end() ? nullptr : &it->second;
  }

  std::uint32_t index_for(JobId job, SeqNum seq) const {
    if (policy_.is_static()) {
      const auto& b = bindings_.at(job);
      assert(b.partition_size > 0);
      return b.partition_base + seq % b.partition_size;
    }
    return agg_index(job, seq, pool_size_);
  }

  // Gradient packets and upward partial results share this entry point.
  void process_gradient(const GradientPacket& pkt, SimServices& sim) {
    const PacketHeader& h = pkt.header;
    auto bit = bindings_.find(h.job);
    if (bit == bindings_.end()) {
      ++unregistered_drops_;
      return;
    }
    const SwitchJobBinding& bind = bit->second;
    std::uint32_t idx = index_for(h.job, h.seq);
    assert(h.kind != PacketKind::Gradient || h.agg_index == idx);
    Aggregator& slot = at(idx);

    if (!slot.occupied) {
      allocate(slot, pkt, bind);
      sim.trace(node_, TraceEvent::Alloc, h.job, h.seq, slot.bitmap, slot.priority);
      if (slot.counter == slot.active_fanin()) complete(idx, slot, bind, sim);
      return;
    }

    if (slot.job == h.job && slot.seq == h.seq) {
      assert(slot.level == level_of(pkt));
      std::uint32_t bits = contribution_bits(pkt);
      assert((slot.bitmap & bits) == 0 && "duplicate contribution reached the switch");
      slot.value = payload_add(slot.value, pkt.payload);
      slot.bitmap |= bits;
      slot.counter += std::popcount(bits);
      if (policy_.kind != AllocationPolicy::AtpFcfs)
        slot.priority = std::max(slot.priority, h.priority);  // priority renewal
      assert(std::popcount(slot.bitmap) == static_cast<int>(slot.counter));
      sim.trace(node_, TraceEvent::Aggr, h.job, h.seq, slot.bitmap, slot.counter);
      if (slot.counter == slot.active_fanin()) complete(idx, slot, bind, sim);
      return;
    }

    // Hash collision with a foreign fragment.
    if (policy_.is_static()) {
      // Same-job collisions stall at the sender by the window design and
      // partitions are disjoint across jobs, so this cannot happen.
      assert(false && "static partition collision");
      return;
    }
    if (should_preempt(h.priority, slot.priority, sim)) {
      preempt_swap(idx, slot, pkt, bind, sim);
    } else {
      // Newcomer passes through to its own PS as a partial result.
      GradientPacket fwd = pkt;
      fwd.header.kind = PacketKind::PartialToPS;
      fwd.src = node_;
      fwd.dst = bind.ps;
      fwd.sent_at = sim.now();
      ++fwd_ps_;
      sim.trace(node_, TraceEvent::FwdPs, h.job, h.seq, pkt.payload.mask, slot.priority);
      sim.send(std::move(fwd));
      if (policy_.kind != AllocationPolicy::AtpFcfs) {
        slot.priority = downgrade(slot.priority);
        ++downgrades_;
        sim.trace(node_, TraceEvent::Downgrade, slot.job, slot.seq, slot.priority, 0);
      }
    }
  }

  // Reminder from a PS: flush a matching partial, stay silent otherwise.
  void process_reminder(const GradientPacket& pkt, SimServices& sim) {
    assert(pkt.header.kind == PacketKind::Reminder);
    JobId job = pkt.header.job;
    SeqNum seq = pkt.header.seq;
    if (!bindings_.count(job)) {
      ++unregistered_drops_;
      return;
    }
    std::uint32_t idx = index_for(job, seq);
    Aggregator& slot = at(idx);
    if (!slot.occupied || slot.job != job || slot.seq != seq) {
      sim.trace(node_, TraceEvent::ReminderMiss, job, seq, slot.occupied, 0);
      return;
    }
    const SwitchJobBinding& bind = bindings_.at(job);
    GradientPacket out;
    out.header.kind = PacketKind::PartialToPS;
    out.header.job = job;
    out.header.seq = seq;
    set_level_bits(out, slot.bitmap, slot.level);
    out.payload = slot.value;
    out.payload.byte_size = wire_bytes_;
    out.src = node_;
    out.dst = bind.ps;
    out.sent_at = sim.now();
    sim.trace(node_, TraceEvent::ReminderHit, job, seq, slot.bitmap, slot.counter);
    deallocate(idx);
    ++fwd_ps_;
    sim.send(std::move(out));
  }

  // Clears a slot. Valid only from the three deallocation triggers:
  // preemption, completion, reminder.
  void deallocate(std::uint32_t idx) {
    Aggregator& slot = at(idx);
    assert(slot.occupied && "double deallocate");
    slot.clear();
  }

  const Aggregator& slot(std::uint32_t idx) const {
    return const_cast<Switchd*>(this)->at(idx);
  }
  std::uint64_t occupied_slots() const {
    if (!dense_.empty()) {
      std::uint64_t n = 0;
      for (const auto& a : dense_) n += a.occupied;
      return n;
    }
    return sparse_.size();
  }

  // popcount(bitmap) == counter <= fan-in, everywhere, all the time.
  void check_invariants() const {
    auto check = [](const Aggregator& a) {
      if (!a.occupied) {
        assert(a.cleared());
        return;
      }
      assert(std::popcount(a.bitmap) == static_cast<int>(a.counter));
      assert(a.counter <= a.active_fanin());
    };
    for (const auto& a : dense_) check(a);
    for (const auto& [idx, a] : sparse_) check(a);
  }

  template <typename Fn>
  void for_each_occupied(Fn&& fn) const {
    for (std::uint32_t i = 0; i < dense_.size(); ++i)
      if (dense_[i].occupied) fn(i, dense_[i]);
    for (const auto& [idx, a] : sparse_)
      if (a.occupied) fn(idx, a);
  }

  std::uint64_t preemptions() const { return preemptions_; }
  std::uint64_t fwd_ps() const { return fwd_ps_; }
  std::uint64_t downgrades() const { return downgrades_; }
  std::uint64_t unregistered_drops() const { return unregistered_drops_; }

 private:
  static constexpr std::uint64_t kDenseLimit = 1u << 21;

  Aggregator& at(std::uint32_t idx) {
    assert(idx < pool_size_);
    if (!dense_.empty()) return dense_[idx];
    return sparse_[idx];  // default-constructed == cleared
  }

  static std::uint8_t level_of(const GradientPacket& pkt) { return pkt.header.level; }

  static std::uint32_t contribution_bits(const GradientPacket& pkt) {
    std::uint32_t bits = pkt.header.level == 0 ? pkt.header.bitmap0 : pkt.header.bitmap1;
    assert(bits != 0);
    return bits;
  }

  static void set_level_bits(GradientPacket& pkt, std::uint32_t bits, std::uint8_t level) {
    pkt.header.level = level;
    if (level == 0)
      pkt.header.bitmap0 = bits;
    else
      pkt.header.bitmap1 = bits;
  }

  void allocate(Aggregator& slot, const GradientPacket& pkt, const SwitchJobBinding& bind) {
    std::uint32_t bits = contribution_bits(pkt);
    slot.occupied = true;
    slot.job = pkt.header.job;
    slot.seq = pkt.header.seq;
    slot.priority = policy_.kind == AllocationPolicy::AtpFcfs ? 0 : pkt.header.priority;
    slot.bitmap = bits;
    slot.counter = std::popcount(bits);
    slot.fanin_l1 = bind.level == 0 ? bind.fanin : 0;
    slot.fanin_l2 = bind.level == 1 ? bind.fanin : 0;
    slot.level = bind.level;
    slot.value = pkt.payload;
  }

  bool should_preempt(std::uint8_t incoming, std::uint8_t stored, SimServices& sim) {
    switch (policy_.kind) {
      case AllocationPolicy::EsaPreemptive: return incoming > stored;
      case AllocationPolicy::AtpFcfs: return false;
      case AllocationPolicy::AlwaysPreempt: return true;
      case AllocationPolicy::CoinFlip: return sim.coin_flip() < policy_.p;
      case AllocationPolicy::SwitchMlStatic: return false;
    }
    return false;
  }

  // Packet swapping: the arriving packet's envelope leaves carrying the
  // old partial toward the victim's PS while the slot is re-initialized
  // for the newcomer, one read-modify-write per slot.
  void preempt_swap(std::uint32_t idx, Aggregator& slot, const GradientPacket& pkt,
                    const SwitchJobBinding& bind, SimServices& sim) {
    const SwitchJobBinding& victim_bind = bindings_.at(slot.job);
    GradientPacket evict;
    evict.header.kind = PacketKind::PartialToPS;
    evict.header.job = slot.job;
    evict.header.seq = slot.seq;
    evict.header.priority = slot.priority;
    set_level_bits(evict, slot.bitmap, slot.level);
    evict.payload = slot.value;
    evict.payload.byte_size = wire_bytes_;
    evict.src = node_;
    evict.dst = victim_bind.ps;
    evict.sent_at = sim.now();
    sim.trace(node_, TraceEvent::PreemptSwap, pkt.header.job, pkt.header.seq,
              (static_cast<std::uint64_t>(slot.job) << 32) | slot.seq, slot.bitmap);
    slot.clear();  // fused clear+allocate
    allocate(slot, pkt, bind);
    ++preemptions_;
    ++fwd_ps_;
    sim.send(std::move(evict));
    if (slot.counter == slot.active_fanin()) complete(idx, slot, bind, sim);
  }

  void complete(std::uint32_t idx, Aggregator& slot, const SwitchJobBinding& bind,
                SimServices& sim) {
    assert(slot.counter == slot.active_fanin());
    assert(!bind.final_level || is_complete(slot.value, bind.worker_mask));
    sim.trace(node_, TraceEvent::CompleteMulticast, slot.job, slot.seq, slot.bitmap,
              slot.counter);
    GradientPacket out;
    out.header.job = slot.job;
    out.header.seq = slot.seq;
    out.header.priority = slot.priority;
    out.payload = slot.value;
    out.payload.byte_size = wire_bytes_;
    out.sent_at = sim.now();
    out.src = node_;
    if (bind.final_level) {
      out.header.kind = PacketKind::Result;
      for (NodeId w : bind.multicast) {
        GradientPacket copy = out;
        copy.dst = w;
        sim.send(std::move(copy));
      }
    } else {
      // One aggregated result upward; this switch occupies one bit of the
      // second-level bitmap.
      out.header.kind = PacketKind::Result;
      out.header.level = 1;
      out.header.bitmap0 = 0;
      out.header.bitmap1 = 1u << bind.upstream_bit;
      out.dst = bind.upstream;
      sim.send(std::move(out));
    }
    deallocate(idx);
  }

  SwitchId id_ = 0;
  NodeId node_ = 0;
  std::uint64_t pool_size_ = 1;
  AllocationPolicy policy_;
  std::uint32_t wire_bytes_ = 306;
  std::vector<Aggregator> dense_;
  std::unordered_map<std::uint32_t, Aggregator> sparse_;
  std::unordered_map<JobId, SwitchJobBinding> bindings_;
  std::uint64_t preemptions_ = 0;
  std::uint64_t fwd_ps_ = 0;
  std::uint64_t downgrades_ = 0;
  std::uint64_t unregistered_drops_ = 0;
};

}  // namespace inasim
