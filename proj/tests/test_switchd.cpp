#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <vector>

#include "inasim/switchd.hpp"
#include "test_support.hpp"

using namespace inasim;
using inasim::test::FakeSim;

namespace {

constexpr NodeId kSwitchNode = 0;
constexpr NodeId kPs1 = 100, kPs2 = 101;

GradientPacket gradient(JobId job, SeqNum seq, WorkerId bit, std::uint8_t prio,
                        std::uint64_t pool) {
  GradientPacket p;
  p.header.kind = PacketKind::Gradient;
  p.header.job = job;
  p.header.seq = seq;
  p.header.priority = prio;
  p.header.bitmap0 = 1u << bit;
  p.header.agg_index = agg_index(job, seq, pool);
  p.payload = make_contribution(bit, 306);
  p.src = 10 + bit;
  p.dst = kSwitchNode;
  return p;
}

Switchd make_switch(AllocationPolicy::Kind kind, std::uint64_t pool = 1) {
  AllocationPolicy pol;
  pol.kind = kind;
  Switchd sw(0, kSwitchNode, pool, pol, 306);
  SwitchJobBinding j1;
  j1.fanin = 4;
  j1.level = 0;
  j1.final_level = true;
  j1.ps = kPs1;
  j1.multicast = {11, 12, 13, 14};
  j1.worker_mask = full_mask(4);
  sw.register_job(1, j1);
  SwitchJobBinding j2;
  j2.fanin = 2;
  j2.level = 0;
  j2.final_level = true;
  j2.ps = kPs2;
  j2.multicast = {15, 16};
  j2.worker_mask = full_mask(2);
  sw.register_job(2, j2);
  return sw;
}

}  // namespace

TEST_CASE("agg_index is deterministic and pins the zero case", "[switchd]") {
  CHECK(agg_index(0, 0, 4096) == 0);  // mix64(0) == 0
  CHECK(agg_index(3, 77, 4096) == agg_index(3, 77, 4096));
  CHECK(agg_index(3, 77, 1) == 0);
}

TEST_CASE("agg_index spreads sequential seqs evenly", "[switchd]") {
  // Oracle (histogram over the same mixer, run before the build):
  // 1e6 seqs for job 7 into 4096 buckets -> max 304, mean 244.14,
  // max/mean 1.245.
  constexpr std::uint64_t pool = 4096;
  std::vector<std::uint32_t> counts(pool, 0);
  for (SeqNum s = 0; s < 1'000'000; ++s) ++counts[agg_index(7, s, pool)];
  std::uint32_t max_load = 0;
  for (auto c : counts) max_load = std::max(max_load, c);
  double mean = 1'000'000.0 / pool;
  CHECK(max_load == 304);
  CHECK(static_cast<double>(max_load) <= 1.3 * mean);
}

TEST_CASE("empty slot is allocated to the arriving fragment", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 0, 144, 1), sim);
  sw.process_gradient(gradient(1, 0, 1, 144, 1), sim);
  const Aggregator& a = sw.slot(0);
  CHECK(a.occupied);
  CHECK(a.job == 1);
  CHECK(a.bitmap == 0b11);
  CHECK(a.counter == 2);
  CHECK(sim.sent.empty());  // fan-in 4, no egress yet
  CHECK(sim.traces[0].event == TraceEvent::Alloc);
  CHECK(sim.traces[1].event == TraceEvent::Aggr);
  sw.check_invariants();
}

TEST_CASE("higher priority preempts via packet swapping", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 0, 144, 1), sim);
  sw.process_gradient(gradient(1, 0, 1, 144, 1), sim);
  sim.reset();
  // Fig. 3 step 3-4: job 2's g5 with higher priority evicts g1+g2 to PS1.
  sw.process_gradient(gradient(2, 0, 0, 176, 1), sim);
  REQUIRE(sim.sent.size() == 1);
  const GradientPacket& evicted = sim.sent[0];
  CHECK(evicted.header.kind == PacketKind::PartialToPS);
  CHECK(evicted.header.job == 1);
  CHECK(evicted.dst == kPs1);
  CHECK(evicted.payload.mask == 0b11);
  const Aggregator& a = sw.slot(0);
  CHECK(a.job == 2);
  CHECK(a.counter == 1);
  CHECK(a.priority == 176);
  CHECK(sim.saw(TraceEvent::PreemptSwap));
  CHECK(sw.preemptions() == 1);

  // Fig. 3 step 5-6: g6 completes job 2 (fan-in 2), multicast to W5, W6.
  sim.reset();
  sw.process_gradient(gradient(2, 0, 1, 176, 1), sim);
  REQUIRE(sim.sent.size() == 2);
  CHECK(sim.sent[0].header.kind == PacketKind::Result);
  CHECK(sim.sent[0].dst == 15);
  CHECK(sim.sent[1].dst == 16);
  CHECK(is_complete(sim.sent[0].payload, full_mask(2)));
  CHECK(!sw.slot(0).occupied);
  CHECK(sim.saw(TraceEvent::CompleteMulticast));
  sw.check_invariants();
}

TEST_CASE("equal priority fails preemption and downgrades the slot", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 0, 8, 1), sim);
  sim.reset();
  sw.process_gradient(gradient(2, 0, 0, 8, 1), sim);
  REQUIRE(sim.sent.size() == 1);
  CHECK(sim.sent[0].header.kind == PacketKind::PartialToPS);
  CHECK(sim.sent[0].header.job == 2);   // the newcomer itself is forwarded
  CHECK(sim.sent[0].dst == kPs2);
  CHECK(sw.slot(0).job == 1);
  CHECK(sw.slot(0).priority == 4);      // 8 >> 1
  CHECK(sim.saw(TraceEvent::FwdPs));
  CHECK(sim.saw(TraceEvent::Downgrade));
}

TEST_CASE("downgraded slot is eventually preempted by any positive priority", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 0, 3, 1), sim);
  sw.process_gradient(gradient(2, 0, 0, 2, 1), sim);  // 2 <= 3: fail, stored 3 -> 1
  sw.process_gradient(gradient(2, 1, 0, 2, 1), sim);  // 2 > 1: preempt
  CHECK(sw.slot(0).job == 2);
  CHECK(sw.preemptions() == 1);
}

TEST_CASE("fan-in one completes immediately on allocation", "[switchd]") {
  FakeSim sim;
  AllocationPolicy pol;
  Switchd sw(0, kSwitchNode, 8, pol, 306);
  SwitchJobBinding b;
  b.fanin = 1;
  b.level = 0;
  b.final_level = true;
  b.ps = kPs1;
  b.multicast = {11};
  b.worker_mask = full_mask(1);
  sw.register_job(1, b);
  GradientPacket g = gradient(1, 5, 0, 10, 8);
  sw.process_gradient(g, sim);
  REQUIRE(sim.sent.size() == 1);
  CHECK(sim.sent[0].header.kind == PacketKind::Result);
  CHECK(!sw.slot(agg_index(1, 5, 8)).occupied);
}

TEST_CASE("atp never preempts and never touches priority", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::AtpFcfs);
  sw.process_gradient(gradient(1, 0, 0, 1, 1), sim);
  sim.reset();
  sw.process_gradient(gradient(2, 0, 0, 255, 1), sim);  // max priority still loses
  REQUIRE(sim.sent.size() == 1);
  CHECK(sim.sent[0].header.kind == PacketKind::PartialToPS);
  CHECK(sim.sent[0].header.job == 2);
  CHECK(sw.slot(0).job == 1);
  CHECK(sw.slot(0).priority == 0);  // never written
  CHECK(!sim.saw(TraceEvent::Downgrade));
  CHECK(sw.downgrades() == 0);
}

// Behavioral equivalence with a tiny priority-free FCFS oracle over a
// random arrival trace: same slot decisions, same forwards.
TEST_CASE("atp matches a priority-free fcfs oracle", "[switchd]") {
  constexpr std::uint64_t pool = 32;
  FakeSim sim;
  AllocationPolicy pol;
  pol.kind = AllocationPolicy::AtpFcfs;
  Switchd sw(0, kSwitchNode, pool, pol, 306);
  struct OracleSlot {
    bool occupied = false;
    JobId job = 0;
    SeqNum seq = 0;
    std::uint32_t count = 0;
  };
  std::vector<OracleSlot> oracle(pool);
  constexpr std::uint32_t kFanin = 4;
  for (JobId j = 1; j <= 4; ++j) {
    SwitchJobBinding b;
    b.fanin = kFanin;
    b.level = 0;
    b.final_level = true;
    b.ps = 100 + j;
    b.multicast = {200, 201, 202, 203};
    b.worker_mask = full_mask(kFanin);
    sw.register_job(j, b);
  }
  RngStream rng(7, RngPurpose::CoinFlip);
  std::map<std::pair<JobId, SeqNum>, std::uint32_t> next_bit;
  for (int i = 0; i < 10'000; ++i) {
    JobId job = 1 + static_cast<JobId>(rng.next() % 4);
    SeqNum seq = static_cast<SeqNum>(rng.next() % 64);
    std::uint32_t& bit = next_bit[{job, seq}];
    if (bit >= kFanin) continue;  // that fragment already fully injected
    std::uint8_t prio = static_cast<std::uint8_t>(rng.next() % 256);
    GradientPacket g = gradient(job, seq, bit, prio, pool);
    ++bit;

    std::uint32_t idx = agg_index(job, seq, pool);
    OracleSlot& os = oracle[idx];
    enum { kAccept, kForward, kComplete } expect;
    if (!os.occupied) {
      os = {true, job, seq, 1};
      expect = kAccept;
    } else if (os.job == job && os.seq == seq) {
      if (++os.count == kFanin) {
        os = OracleSlot{};
        expect = kComplete;
      } else {
        expect = kAccept;
      }
    } else {
      expect = kForward;
    }

    sim.reset();
    sw.process_gradient(g, sim);
    const Aggregator& slot = sw.slot(idx);
    if (expect == kForward) {
      REQUIRE(sim.sent.size() == 1);
      REQUIRE(sim.sent[0].header.kind == PacketKind::PartialToPS);
      REQUIRE(slot.job == os.job);
    } else if (expect == kComplete) {
      REQUIRE(sim.count_sent(PacketKind::Result) == kFanin);
      REQUIRE(!slot.occupied);
    } else {
      REQUIRE(sim.sent.empty());
      REQUIRE(slot.occupied);
      REQUIRE(slot.counter == os.count);
    }
  }
  sw.check_invariants();
}

TEST_CASE("always-preempt evicts regardless of priority", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::AlwaysPreempt);
  sw.process_gradient(gradient(1, 0, 0, 255, 1), sim);
  sim.reset();
  sw.process_gradient(gradient(2, 0, 0, 0, 1), sim);
  CHECK(sw.slot(0).job == 2);
  CHECK(sim.saw(TraceEvent::PreemptSwap));
}

TEST_CASE("coinflip preempts per the seeded draw", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::CoinFlip);
  sw.process_gradient(gradient(1, 0, 0, 255, 1), sim);
  sim.next_coin = 0.9;  // >= p: keep
  sw.process_gradient(gradient(2, 0, 0, 0, 1), sim);
  CHECK(sw.slot(0).job == 1);
  sim.next_coin = 0.1;  // < p: evict
  sw.process_gradient(gradient(2, 1, 0, 0, 1), sim);
  CHECK(sw.slot(0).job == 2);
}

TEST_CASE("switchml static mode maps seqs into the job partition", "[switchd]") {
  FakeSim sim;
  AllocationPolicy pol;
  pol.kind = AllocationPolicy::SwitchMlStatic;
  Switchd sw(0, kSwitchNode, 16, pol, 180);
  SwitchJobBinding b;
  b.fanin = 2;
  b.level = 0;
  b.final_level = true;
  b.ps = kPs1;
  b.multicast = {11, 12};
  b.worker_mask = full_mask(2);
  b.partition_base = 8;
  b.partition_size = 4;
  sw.register_job(1, b);
  CHECK(sw.index_for(1, 0) == 8);
  CHECK(sw.index_for(1, 5) == 9);
  GradientPacket g = gradient(1, 5, 0, 0, 16);
  g.header.agg_index = 9;
  g.payload.byte_size = 180;
  sw.process_gradient(g, sim);
  CHECK(sw.slot(9).occupied);
  CHECK(sw.slot(9).job == 1);
}

TEST_CASE("reminder flushes a matching partial and frees the slot", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 1, 144, 1), sim);
  sw.process_gradient(gradient(1, 0, 2, 144, 1), sim);
  sim.reset();
  sw.process_reminder(make_reminder(1, 0, kPs1, kSwitchNode, 23), sim);
  REQUIRE(sim.sent.size() == 1);
  CHECK(sim.sent[0].header.kind == PacketKind::PartialToPS);
  CHECK(sim.sent[0].dst == kPs1);
  CHECK(sim.sent[0].payload.mask == 0b110);
  CHECK(!sw.slot(0).occupied);
  CHECK(sim.saw(TraceEvent::ReminderHit));
}

TEST_CASE("reminder misses silently on foreign or empty slots", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  // Empty slot: nothing to fetch.
  sw.process_reminder(make_reminder(1, 0, kPs1, kSwitchNode, 23), sim);
  CHECK(sim.sent.empty());
  CHECK(sim.saw(TraceEvent::ReminderMiss));
  // Slot held by another fragment: no egress, no mutation.
  sim.reset();
  sw.process_gradient(gradient(2, 9, 0, 10, 1), sim);
  sim.reset();
  sw.process_reminder(make_reminder(1, 0, kPs1, kSwitchNode, 23), sim);
  CHECK(sim.sent.empty());
  CHECK(sw.slot(0).job == 2);
  CHECK(sw.slot(0).seq == 9);
  CHECK(sim.saw(TraceEvent::ReminderMiss));
}

TEST_CASE("unregistered jobs are counted and dropped", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(9, 0, 0, 10, 1), sim);
  CHECK(sim.sent.empty());
  CHECK(sw.unregistered_drops() == 1);
}

TEST_CASE("deallocation leaves a fully cleared slot", "[switchd]") {
  FakeSim sim;
  Switchd sw = make_switch(AllocationPolicy::EsaPreemptive);
  sw.process_gradient(gradient(1, 0, 0, 144, 1), sim);
  CHECK(sw.slot(0).occupied);
  sw.deallocate(0);
  CHECK(sw.slot(0).cleared());
  sw.check_invariants();
}
