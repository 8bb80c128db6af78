#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "inasim/netsim.hpp"

namespace inasim::test {

// Hand-driven scenario: explicit topology, jobs with chosen fan-ins, and
// scripted pushes with fixed priorities. Used by the golden-trace and
// loss-case suites where the exact arrival order matters.
class Script : public ControlSink {
 public:
  struct JobDef {
    JobId job;
    std::vector<NodeId> workers;
    NodeId ps;
  };

  explicit Script(std::uint64_t pool_size, std::uint64_t seed = 1,
                  AllocationPolicy policy = {}, double loss = 0.0)
      : pool_size_(pool_size), policy_(policy) {
    topo_ = std::make_unique<Topology>();
    lp_.loss_prob = loss;
    switch_node_ = topo_->add_node(NodeKind::Switch, 0, "s0");
    seed_ = seed;
  }

  NodeId add_worker_node() {
    NodeId n = topo_->add_node(NodeKind::Worker, n_workers_, "w" + std::to_string(n_workers_));
    ++n_workers_;
    topo_->add_duplex(n, switch_node_, lp_);
    return n;
  }

  NodeId add_ps_node() {
    NodeId n = topo_->add_node(NodeKind::Ps, n_pses_, "p" + std::to_string(n_pses_));
    ++n_pses_;
    topo_->add_duplex(n, switch_node_, lp_);
    return n;
  }

  void add_job(JobDef def) { jobs_.push_back(std::move(def)); }

  // Call after nodes and jobs are defined.
  Simulator& build() {
    sim_ = std::make_unique<Simulator>(std::move(*topo_), seed_);
    sim_->tracer().set_keep_records(true);
    sim_->set_track_formation(true);
    sim_->add_switch(Switchd(0, switch_node_, pool_size_, policy_, 306));
    for (const auto& def : jobs_) {
      SwitchJobBinding b;
      b.fanin = static_cast<std::uint32_t>(def.workers.size());
      b.level = 0;
      b.final_level = true;
      b.ps = def.ps;
      b.multicast = def.workers;
      b.worker_mask = full_mask(b.fanin);
      sim_->switch_at(switch_node_).register_job(def.job, b);
      for (std::uint32_t w = 0; w < def.workers.size(); ++w) {
        WorkerConfig wc;
        wc.bit = w;
        wc.job = def.job;
        wc.self = def.workers[w];
        wc.ingress_switch = switch_node_;
        wc.ps = def.ps;
        wc.packet_bytes = 306;
        wc.window_packets = 196;
        wc.worker_mask = b.worker_mask;
        wc.pool_size = pool_size_;
        sim_->add_worker(Worker(wc));
      }
      PsJobInfo info;
      info.workers = def.workers;
      info.worker_mask = b.worker_mask;
      info.switches = {switch_node_};
      info.packet_bytes = 306;
      if (ps_index_.count(def.ps) == 0) {
        ps_index_[def.ps] = true;
        sim_->add_ps(ParamServer(static_cast<PsId>(sim_->pses().size()), def.ps,
                                 from_ms(1)));
      }
      sim_->ps_at(def.ps).register_job(def.job, info);
    }
    sim_->set_driver(this);
    return *sim_;
  }

  void push_at(SimTime t, NodeId worker, std::uint32_t count, std::uint8_t priority,
               std::uint8_t layer = 1) {
    pushes_.push_back({worker, count, priority, layer});
    sim_->schedule_control(t, pushes_.size() - 1);
  }

  void on_control(std::uint64_t key) override {
    const Push& p = pushes_[key];
    sim_->worker_at(p.worker).push(p.count, p.priority, p.layer, *sim_);
  }

  Simulator& sim() { return *sim_; }
  NodeId switch_node() const { return switch_node_; }

  // Events of the kinds in `filter`, in emission order.
  std::vector<TraceRecord> filtered(std::initializer_list<TraceEvent> filter) const {
    std::vector<TraceRecord> out;
    for (const auto& r : sim_->tracer().records())
      for (TraceEvent ev : filter)
        if (r.event == ev) {
          out.push_back(r);
          break;
        }
    return out;
  }

 private:
  struct Push {
    NodeId worker;
    std::uint32_t count;
    std::uint8_t priority;
    std::uint8_t layer;
  };

  std::unique_ptr<Topology> topo_;
  std::unique_ptr<Simulator> sim_;
  std::vector<JobDef> jobs_;
  std::vector<Push> pushes_;
  std::map<NodeId, bool> ps_index_;
  LinkParams lp_;
  std::uint64_t pool_size_;
  std::uint64_t seed_;
  AllocationPolicy policy_;
  NodeId switch_node_ = 0;
  std::uint32_t n_workers_ = 0;
  std::uint32_t n_pses_ = 0;
};

// True when `expected` appears as an ordered subsequence of `trace`,
// comparing (event, job) and optionally seq (-1 matches any).
struct Milestone {
  TraceEvent event;
  JobId job;
  std::int64_t seq = -1;
};

inline bool contains_sequence(const std::vector<TraceRecord>& trace,
                              const std::vector<Milestone>& expected) {
  std::size_t i = 0;
  for (const auto& r : trace) {
    if (i == expected.size()) break;
    const Milestone& m = expected[i];
    if (r.event == m.event && r.job == m.job &&
        (m.seq < 0 || r.seq == static_cast<SeqNum>(m.seq)))
      ++i;
  }
  return i == expected.size();
}

}  // namespace inasim::test
