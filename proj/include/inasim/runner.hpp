#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "inasim/config.hpp"
#include "inasim/netsim.hpp"
#include "inasim/workload.hpp"

namespace inasim {

struct RunReport {
  std::string policy;
  std::uint64_t seed = 0;
  std::uint32_t jobs = 0;
  std::uint32_t workers = 0;
  double mean_jct_ns = 0;
  std::vector<double> per_job_jct_ns;
  double utilization = 0;
  std::vector<double> per_job_util;
  std::uint64_t reminders = 0;     // worker reminders + PS switch reminders
  std::uint64_t queries = 0;
  std::uint64_t retransmits = 0;
  std::uint64_t query_replies = 0;
  std::uint64_t alarms = 0;        // duplicate contributions + bad result content
  std::uint64_t stale_results = 0;
  std::uint64_t preemptions = 0;
  std::uint64_t ps_fallbacks = 0;  // PartialToPS packets emitted by switches
  std::uint64_t downgrades = 0;
  std::uint64_t random_drops = 0;
  std::uint64_t orphan_partials = 0;  // stale slot residue superseded by recovery
  std::uint64_t digest = 0;
  std::uint64_t events = 0;
  SimTime final_time = 0;
  double wall_ms = 0;
  bool liveness_ok = true;
  std::string liveness_msg;
};

// A fully wired simulation instance.
struct SimInstance {
  std::unique_ptr<Simulator> sim;
  std::unique_ptr<WorkloadDriver> driver;
  std::vector<JobSpec> jobs;
  std::uint64_t pool_size = 0;
  ScenarioConfig config;
};

inline DnnModel model_for(const ScenarioConfig& c, std::uint32_t job_idx) {
  DnnModel m;
  if (c.preset == "dnnA") m = dnn_a();
  else if (c.preset == "dnnB") m = dnn_b();
  else m = (job_idx % 2 == 0) ? dnn_a() : dnn_b();
  if (c.partition_bytes_override) m.partition_bytes = c.partition_bytes_override;
  if (c.comp_time_override_s >= 0) m.comp_time_s = c.comp_time_override_s;
  return m;
}

// Builds topology, nodes, switch bindings and the workload for one
// (config, seed) pair. Jobs get disjoint consecutive worker nodes and one
// PS each.
inline SimInstance build_instance(const ScenarioConfig& cfg, std::uint64_t seed) {
  SimInstance inst;
  inst.config = cfg;
  const std::uint32_t total_workers = cfg.jobs * cfg.workers_per_job;
  LinkParams lp{cfg.bandwidth_bps, cfg.link_latency, cfg.loss_prob};

  Topology topo;
  std::vector<NodeId> switch_nodes;
  std::vector<NodeId> worker_nodes(total_workers);
  std::vector<NodeId> ps_nodes(cfg.jobs);
  std::uint32_t workers_per_rack = 0;

  if (cfg.topology == "single") {
    NodeId sw = topo.add_node(NodeKind::Switch, 0, "s0");
    switch_nodes.push_back(sw);
    for (std::uint32_t w = 0; w < total_workers; ++w) {
      worker_nodes[w] = topo.add_node(NodeKind::Worker, w, "w" + std::to_string(w));
      topo.add_duplex(worker_nodes[w], sw, lp);
    }
    for (std::uint32_t p = 0; p < cfg.jobs; ++p) {
      ps_nodes[p] = topo.add_node(NodeKind::Ps, p, "p" + std::to_string(p));
      topo.add_duplex(ps_nodes[p], sw, lp);
    }
  } else {
    // Core switch with PSes attached; workers spread over rack switches.
    NodeId core = topo.add_node(NodeKind::Switch, 0, "s0");
    switch_nodes.push_back(core);
    workers_per_rack = (total_workers + cfg.racks - 1) / cfg.racks;
    for (std::uint32_t r = 0; r < cfg.racks; ++r) {
      NodeId sw = topo.add_node(NodeKind::Switch, r + 1, "s" + std::to_string(r + 1));
      switch_nodes.push_back(sw);
      topo.add_duplex(sw, core, lp);
    }
    for (std::uint32_t w = 0; w < total_workers; ++w) {
      worker_nodes[w] = topo.add_node(NodeKind::Worker, w, "w" + std::to_string(w));
      topo.add_duplex(worker_nodes[w], switch_nodes[1 + w / workers_per_rack], lp);
    }
    for (std::uint32_t p = 0; p < cfg.jobs; ++p) {
      ps_nodes[p] = topo.add_node(NodeKind::Ps, p, "p" + std::to_string(p));
      topo.add_duplex(ps_nodes[p], core, lp);
    }
  }

  inst.sim = std::make_unique<Simulator>(std::move(topo), seed);
  Simulator& sim = *inst.sim;
  inst.pool_size = cfg.pool_size();
  const std::uint64_t partition_size = inst.pool_size / cfg.jobs;

  for (NodeId sw : switch_nodes)
    sim.add_switch(Switchd(sim.topology().nodes[sw].index, sw, inst.pool_size,
                           cfg.policy, cfg.packet_bytes));

  std::uint32_t window_packets = cfg.send_window_bytes / cfg.packet_bytes;
  if (cfg.policy.is_static())
    window_packets = static_cast<std::uint32_t>(
        std::min<std::uint64_t>(window_packets, partition_size));

  for (std::uint32_t j = 0; j < cfg.jobs; ++j) {
    JobSpec spec;
    spec.job = j;
    spec.model = model_for(cfg, j);
    spec.ps = ps_nodes[j];
    spec.iterations = cfg.iterations;
    spec.jitter_bound = cfg.jitter_bound;
    spec.start_time = static_cast<SimTime>(
        sim.start_rng().uniform(0.0, static_cast<double>(cfg.start_window)));
    for (std::uint32_t w = 0; w < cfg.workers_per_job; ++w)
      spec.workers.push_back(worker_nodes[j * cfg.workers_per_job + w]);
    std::uint32_t wmask = full_mask(cfg.workers_per_job);

    // Switch bindings: the job's final-level switch multicasts, rack
    // switches (two-level) aggregate their local workers and push one
    // result upward.
    std::vector<NodeId> path_switches;
    if (cfg.topology == "single") {
      SwitchJobBinding b;
      b.fanin = cfg.workers_per_job;
      b.level = 0;
      b.final_level = true;
      b.ps = spec.ps;
      b.multicast = spec.workers;
      b.worker_mask = wmask;
      b.partition_base = static_cast<std::uint32_t>(j * partition_size);
      b.partition_size = static_cast<std::uint32_t>(partition_size);
      sim.switch_at(switch_nodes[0]).register_job(j, b);
      path_switches.push_back(switch_nodes[0]);
    } else {
      std::map<NodeId, std::vector<std::uint32_t>> rack_members;  // rack sw -> bits
      for (std::uint32_t w = 0; w < spec.workers.size(); ++w) {
        std::uint32_t g = j * cfg.workers_per_job + w;
        rack_members[switch_nodes[1 + g / workers_per_rack]].push_back(w);
      }
      std::uint32_t rack_bit = 0;
      for (auto& [rack_sw, bits] : rack_members) {
        SwitchJobBinding b;
        b.fanin = static_cast<std::uint32_t>(bits.size());
        b.level = 0;
        b.final_level = false;
        b.ps = spec.ps;
        b.upstream = switch_nodes[0];
        b.upstream_bit = rack_bit++;
        b.worker_mask = wmask;
        b.partition_base = static_cast<std::uint32_t>(j * partition_size);
        b.partition_size = static_cast<std::uint32_t>(partition_size);
        sim.switch_at(rack_sw).register_job(j, b);
        path_switches.push_back(rack_sw);
      }
      SwitchJobBinding core_b;
      core_b.fanin = static_cast<std::uint32_t>(rack_members.size());
      core_b.level = 1;
      core_b.final_level = true;
      core_b.ps = spec.ps;
      core_b.multicast = spec.workers;
      core_b.worker_mask = wmask;
      core_b.partition_base = static_cast<std::uint32_t>(j * partition_size);
      core_b.partition_size = static_cast<std::uint32_t>(partition_size);
      sim.switch_at(switch_nodes[0]).register_job(j, core_b);
      path_switches.push_back(switch_nodes[0]);
    }

    for (std::uint32_t w = 0; w < spec.workers.size(); ++w) {
      WorkerConfig wc;
      wc.bit = w;
      wc.job = j;
      wc.self = spec.workers[w];
      wc.ingress_switch = cfg.topology == "single"
                              ? switch_nodes[0]
                              : switch_nodes[1 + (j * cfg.workers_per_job + w) /
                                                     workers_per_rack];
      wc.ps = spec.ps;
      wc.packet_bytes = cfg.packet_bytes;
      wc.window_packets = window_packets;
      wc.worker_mask = wmask;
      wc.static_mode = cfg.policy.is_static();
      wc.partition_base = static_cast<std::uint32_t>(j * partition_size);
      wc.partition_size = static_cast<std::uint32_t>(partition_size);
      wc.pool_size = inst.pool_size;
      wc.rto_min = cfg.rto_min;
      sim.add_worker(Worker(wc));
    }

    PsJobInfo pi;
    pi.workers = spec.workers;
    pi.worker_mask = wmask;
    pi.switches = path_switches;
    pi.packet_bytes = cfg.packet_bytes;
    sim.add_ps(ParamServer(j, spec.ps, cfg.rto_min));
    sim.ps_at(spec.ps).register_job(j, pi);

    inst.jobs.push_back(std::move(spec));
  }

  inst.driver = std::make_unique<WorkloadDriver>(sim, inst.jobs, cfg.packet_bytes,
                                                 cfg.bandwidth_bps, cfg.quant);
  return inst;
}

// Post-run health checks: queue drained, every fragment delivered, no PS
// state left behind, link accounting closed.
inline void check_liveness(SimInstance& inst, RunReport& rep) {
  Simulator& sim = *inst.sim;
  std::ostringstream msg;
  if (sim.hit_horizon()) msg << "horizon reached with live events; ";
  if (!inst.driver->finished()) msg << "jobs incomplete; ";
  for (auto& ps : sim.pses())
    if (ps.live_entries() != 0) msg << "ps" << ps.id() << " holds entries; ";
  for (auto& w : sim.workers())
    if (!w.drained()) msg << "worker " << w.config().self << " not drained; ";
  for (const Link& l : sim.topology().links)
    if (l.sent != l.delivered + l.dropped) msg << "link accounting mismatch; ";
  rep.liveness_msg = msg.str();
  rep.liveness_ok = rep.liveness_msg.empty();
}

inline RunReport run_instance(SimInstance& inst) {
  auto wall0 = std::chrono::steady_clock::now();
  Simulator& sim = *inst.sim;
  inst.driver->start();
  SimTime end = sim.run_until_quiescent(inst.config.horizon);

  RunReport rep;
  rep.policy = policy_name(inst.config.policy);
  rep.seed = 0;
  rep.jobs = inst.config.jobs;
  rep.workers = inst.config.jobs * inst.config.workers_per_job;
  rep.final_time = end;
  rep.events = sim.events_processed();
  rep.digest = sim.tracer().digest();
  check_liveness(inst, rep);

  if (rep.liveness_ok) {
    auto jct = compute_jct(inst.driver->records(), inst.config.warmup);
    rep.per_job_jct_ns = jct.per_job_ns;
    rep.mean_jct_ns = jct.fleet_mean_ns;
    rep.per_job_util = inst.driver->per_job_utilization(inst.config.warmup);
    double u = 0;
    for (double v : rep.per_job_util) u += v;
    rep.utilization = u / static_cast<double>(rep.per_job_util.size());
  }

  for (auto& w : sim.workers()) {
    const auto& c = w.counters();
    rep.reminders += c.reminders;
    rep.retransmits += c.retransmits;
    rep.query_replies += c.query_replies;
    rep.alarms += c.content_alarms;
    rep.stale_results += c.stale_results;
  }
  for (auto& ps : sim.pses()) {
    const auto& c = ps.counters();
    rep.reminders += c.switch_reminders;
    rep.queries += c.queries;
    rep.alarms += c.dup_alarms;
  }
  for (auto& sw : sim.switches()) {
    rep.preemptions += sw.preemptions();
    rep.ps_fallbacks += sw.fwd_ps();
    rep.downgrades += sw.downgrades();
  }
  rep.random_drops = sim.random_drops();
  for (auto& sw : sim.switches()) rep.orphan_partials += sw.occupied_slots();
  rep.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - wall0)
                    .count();
  return rep;
}

inline RunReport run_one(const ScenarioConfig& cfg, std::uint64_t seed) {
  SimInstance inst = build_instance(cfg, seed);
  RunReport rep = run_instance(inst);
  rep.seed = seed;
  return rep;
}

// One deterministic run per (policy, seed); reports come back sorted by
// (policy order, seed) regardless of execution interleaving.
inline std::vector<RunReport> run_matrix(const ScenarioConfig& base,
                                         const std::vector<AllocationPolicy>& policies,
                                         const std::vector<std::uint64_t>& seeds,
                                         unsigned threads = 0) {
  struct Cell {
    std::size_t pi;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t p = 0; p < policies.size(); ++p)
    for (auto s : seeds) cells.push_back({p, s});
  std::vector<RunReport> reports(cells.size());

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, cells.size());
  std::mutex next_mx;
  std::size_t next = 0;
  auto body = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lk(next_mx);
        if (next >= cells.size()) return;
        i = next++;
      }
      ScenarioConfig cfg = base;
      cfg.policy = policies[cells[i].pi];
      validate(cfg);  // reapply policy-dependent fixups (packet size)
      reports[i] = run_one(cfg, cells[i].seed);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  return reports;
}

constexpr const char* kMatrixCsvHeader =
    "policy,seed,jobs,workers,mean_jct_ns,utilization,reminders,preemptions,ps_fallbacks";

inline std::string matrix_csv_row(const RunReport& r) {
  std::ostringstream os;
  os << r.policy << ',' << r.seed << ',' << r.jobs << ',' << r.workers << ','
     << static_cast<std::uint64_t>(r.mean_jct_ns) << ',' << r.utilization << ','
     << r.reminders << ',' << r.preemptions << ',' << r.ps_fallbacks;
  return os.str();
}

inline void write_matrix_csv(const std::vector<RunReport>& reports,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kMatrixCsvHeader << '\n';
  for (const auto& r : reports) out << matrix_csv_row(r) << '\n';
}

// Mean JCT per policy plus speedup ratios, recomputable from the CSV.
struct ComparisonRow {
  std::string policy;
  double mean_jct_ns = 0;
  double speedup_vs_first = 1.0;  // first policy's jct / this policy's jct
};

inline std::vector<ComparisonRow> comparison_table(const std::vector<RunReport>& reports) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<double, std::uint32_t>> acc;
  for (const auto& r : reports) {
    if (!acc.count(r.policy)) order.push_back(r.policy);
    auto& [sum, n] = acc[r.policy];
    sum += r.mean_jct_ns;
    ++n;
  }
  std::vector<ComparisonRow> rows;
  for (const auto& p : order) {
    auto [sum, n] = acc[p];
    rows.push_back({p, sum / n, 1.0});
  }
  if (!rows.empty() && rows[0].mean_jct_ns > 0)
    for (auto& row : rows) row.speedup_vs_first = row.mean_jct_ns / rows[0].mean_jct_ns;
  return rows;
}

inline void export_trace(const Simulator& sim, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "time_ns,node,event,job,seq,detail\n";
  const auto& nodes = sim.topology().nodes;
  for (const auto& r : sim.tracer().records()) {
    out << to_ns(r.at) << ',' << nodes[r.node].name << ',' << to_string(r.event) << ','
        << r.job << ',' << r.seq << ",a=" << r.a << " b=" << r.b << '\n';
  }
}

}  // namespace inasim
