#pragma once

#include <cassert>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/endhost.hpp"
#include "inasim/event_queue.hpp"
#include "inasim/rng.hpp"
#include "inasim/services.hpp"
#include "inasim/switchd.hpp"
#include "inasim/topology.hpp"
#include "inasim/trace.hpp"

namespace inasim {

// Targeted drop for the scripted loss scenarios: kills the next `count`
// matching transmissions on their first matching hop.
struct DropRule {
  int kind = -1;           // PacketKind or -1 for any
  std::int64_t job = -1;
  std::int64_t seq = -1;
  std::int64_t hop_from = -1;  // node ids, -1 for any
  std::int64_t hop_to = -1;
  std::uint32_t skip = 0;   // let this many matches through first
  std::uint32_t count = 1;  // then drop this many
};

class ControlSink {
 public:
  virtual ~ControlSink() = default;
  virtual void on_control(std::uint64_t key) = 0;
};

// Deterministic single-threaded discrete-event engine wiring the switch
// and end-host state machines to the topology.
class Simulator : public SimServices {
 public:
  Simulator(Topology topo, std::uint64_t root_seed)
      : topo_(std::move(topo)),
        loss_rng_(root_seed, RngPurpose::Loss),
        jitter_rng_(root_seed, RngPurpose::Jitter),
        start_rng_(root_seed, RngPurpose::StartTime),
        coin_rng_(root_seed, RngPurpose::CoinFlip) {
    topo_.build_routes();
    node_ref_.resize(topo_.nodes.size());
  }

  Topology& topology() { return topo_; }
  const Topology& topology() const { return topo_; }
  TraceSink& tracer() { return tracer_; }
  const TraceSink& tracer() const { return tracer_; }

  Switchd& add_switch(Switchd sw) {
    NodeId n = sw.node();
    switches_.push_back(std::move(sw));
    node_ref_[n] = static_cast<std::uint32_t>(switches_.size() - 1);
    return switches_.back();
  }
  Worker& add_worker(Worker w) {
    NodeId n = w.config().self;
    workers_.push_back(std::move(w));
    node_ref_[n] = static_cast<std::uint32_t>(workers_.size() - 1);
    return workers_.back();
  }
  ParamServer& add_ps(ParamServer ps) {
    NodeId n = ps.node();
    pses_.push_back(std::move(ps));
    node_ref_[n] = static_cast<std::uint32_t>(pses_.size() - 1);
    return pses_.back();
  }

  std::vector<Switchd>& switches() { return switches_; }
  std::vector<Worker>& workers() { return workers_; }
  std::vector<ParamServer>& pses() { return pses_; }

  void set_driver(ControlSink* driver) { driver_ = driver; }
  void add_drop_rule(DropRule r) { drop_rules_.push_back(r); }

  // Test hook, called after every processed event.
  std::function<void()> on_event;

  RngStream& jitter_rng() { return jitter_rng_; }
  RngStream& start_rng() { return start_rng_; }

  // -- SimServices --------------------------------------------------------

  SimTime now() const override { return now_; }

  void send(GradientPacket pkt) override {
    pkt.reliable = is_host(pkt.src) && is_host(pkt.dst);
    NodeId origin = pkt.src;
    transmit(std::move(pkt), origin);
  }

  void node_timer(NodeId node, SimTime at, std::uint64_t key) override {
    Event ev;
    ev.at = std::max(at, now_);
    ev.kind = EventKind::NodeTimer;
    ev.node = node;
    ev.key = key;
    queue_.schedule(std::move(ev));
  }

  void trace(NodeId node, TraceEvent event, JobId job, SeqNum seq, std::uint64_t a = 0,
             std::uint64_t b = 0) override {
    tracer_.emit({now_, node, event, job, seq, a, b});
    if (track_formation_ &&
        (event == TraceEvent::CompleteMulticast || event == TraceEvent::PsMulticast)) {
      auto& n = formed_[job_seq_key(job, seq)];
      ++n;
      max_formations_ = std::max<std::uint32_t>(max_formations_, n);
    }
  }

  double coin_flip() override { return coin_rng_.uniform(); }

  // -- control ------------------------------------------------------------

  void schedule_control(SimTime at, std::uint64_t key) {
    Event ev;
    ev.at = std::max(at, now_);
    ev.kind = EventKind::Control;
    ev.key = key;
    queue_.schedule(std::move(ev));
  }

  // Processes events until the queue drains or the horizon passes.
  // Identical (config, seed) gives an identical event sequence and digest.
  SimTime run_until_quiescent(SimTime horizon) {
    while (!queue_.empty()) {
      if (queue_.pending().front().at > horizon) {
        hit_horizon_ = true;
        break;
      }
      Event ev = queue_.pop();
      assert(ev.at >= now_ && "causality violation");
      now_ = ev.at;
      dispatch(ev);
      if (on_event) on_event();
    }
    return now_;
  }

  bool hit_horizon() const { return hit_horizon_; }
  std::uint64_t events_processed() const { return events_; }
  const EventQueue& queue() const { return queue_; }

  void set_track_formation(bool v) { track_formation_ = v; }
  // Highest completion count seen for any (job, seq); 1 in a healthy run.
  std::uint32_t max_formations() const { return max_formations_; }
  std::uint32_t formation_count(JobId job, SeqNum seq) const {
    auto it = formed_.find(job_seq_key(job, seq));
    return it == formed_.end() ? 0 : it->second;
  }

  std::uint64_t scripted_drops() const { return scripted_drops_; }
  std::uint64_t random_drops() const { return random_drops_; }

  bool is_host(NodeId n) const { return topo_.nodes[n].kind != NodeKind::Switch; }

  Worker& worker_at(NodeId n) {
    assert(topo_.nodes[n].kind == NodeKind::Worker);
    return workers_[node_ref_[n]];
  }
  ParamServer& ps_at(NodeId n) {
    assert(topo_.nodes[n].kind == NodeKind::Ps);
    return pses_[node_ref_[n]];
  }
  Switchd& switch_at(NodeId n) {
    assert(topo_.nodes[n].kind == NodeKind::Switch);
    return switches_[node_ref_[n]];
  }

 private:
  void transmit(GradientPacket pkt, NodeId at) {
    assert(pkt.payload.byte_size > 0);
    std::uint32_t li = topo_.next_link(at, pkt.dst);
    Link& link = topo_.links[li];
    ++link.sent;
    if (!pkt.reliable && should_drop(pkt, link)) {
      ++link.dropped;
      trace(link.from, TraceEvent::Drop, pkt.header.job, pkt.header.seq,
            static_cast<std::uint64_t>(pkt.header.kind), link.to);
      return;
    }
    SimTime depart = std::max(now_, link.busy_until);
    SimTime ser = link.serialization(pkt.payload.byte_size);
    link.busy_until = depart + ser;
    Event ev;
    ev.at = depart + ser + link.latency;
    ev.kind = EventKind::Deliver;
    ev.node = link.to;
    ev.key = li;
    ev.pkt = std::move(pkt);
    queue_.schedule(std::move(ev));
  }

  bool should_drop(const GradientPacket& pkt, const Link& link) {
    for (auto& r : drop_rules_) {
      if (r.count == 0 && r.skip == 0) continue;
      if (r.kind >= 0 && static_cast<int>(pkt.header.kind) != r.kind) continue;
      if (r.job >= 0 && pkt.header.job != static_cast<JobId>(r.job)) continue;
      if (r.seq >= 0 && pkt.header.seq != static_cast<SeqNum>(r.seq)) continue;
      if (r.hop_from >= 0 && link.from != static_cast<NodeId>(r.hop_from)) continue;
      if (r.hop_to >= 0 && link.to != static_cast<NodeId>(r.hop_to)) continue;
      if (r.skip > 0) {
        --r.skip;
        continue;
      }
      --r.count;
      ++scripted_drops_;
      return true;
    }
    if (link.loss_prob > 0 && loss_rng_.uniform() < link.loss_prob) {
      ++random_drops_;
      return true;
    }
    return false;
  }

  void dispatch(const Event& ev) {
    ++events_;
    switch (ev.kind) {
      case EventKind::Deliver: {
        Link& link = topo_.links[ev.key];
        ++link.delivered;
        deliver(ev.pkt, ev.node);
        break;
      }
      case EventKind::NodeTimer: {
        const NodeInfo& ni = topo_.nodes[ev.node];
        if (ni.kind == NodeKind::Worker)
          workers_[node_ref_[ev.node]].on_timer(ev.key, *this);
        else if (ni.kind == NodeKind::Ps)
          pses_[node_ref_[ev.node]].on_timer(ev.key, *this);
        else
          assert(false && "timer on a switch");
        break;
      }
      case EventKind::Control:
        assert(driver_);
        driver_->on_control(ev.key);
        break;
    }
  }

  void deliver(const GradientPacket& pkt, NodeId node) {
    if (node != pkt.dst) {
      // Transit hop: forward without touching the packet.
      assert(topo_.nodes[node].kind == NodeKind::Switch);
      transmit(pkt, node);
      return;
    }
    const NodeInfo& ni = topo_.nodes[node];
    switch (ni.kind) {
      case NodeKind::Switch: {
        Switchd& sw = switches_[node_ref_[node]];
        if (pkt.header.kind == PacketKind::Reminder)
          sw.process_reminder(pkt, *this);
        else if (pkt.header.kind == PacketKind::Gradient ||
                 (pkt.header.kind == PacketKind::Result && pkt.header.level == 1))
          sw.process_gradient(pkt, *this);
        else
          assert(false && "unexpected packet kind addressed to a switch");
        break;
      }
      case NodeKind::Worker:
        workers_[node_ref_[node]].receive(pkt, *this);
        break;
      case NodeKind::Ps:
        pses_[node_ref_[node]].receive(pkt, *this);
        break;
    }
  }

  Topology topo_;
  EventQueue queue_;
  TraceSink tracer_;
  std::vector<Switchd> switches_;
  std::vector<Worker> workers_;
  std::vector<ParamServer> pses_;
  std::vector<std::uint32_t> node_ref_;  // node id -> index within its kind vector
  ControlSink* driver_ = nullptr;
  std::vector<DropRule> drop_rules_;
  std::unordered_map<std::uint64_t, std::uint32_t> formed_;
  std::uint32_t max_formations_ = 0;
  RngStream loss_rng_, jitter_rng_, start_rng_, coin_rng_;
  SimTime now_ = 0;
  bool hit_horizon_ = false;
  bool track_formation_ = false;
  std::uint64_t events_ = 0;
  std::uint64_t scripted_drops_ = 0;
  std::uint64_t random_drops_ = 0;
};

}  // namespace inasim
