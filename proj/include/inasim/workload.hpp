#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "inasim/netsim.hpp"
#include "inasim/priority.hpp"

namespace inasim {

struct DnnModel {
  std::string name;
  std::uint32_t layer_count = 2;
  std::uint64_t partition_bytes = 4'000'000;
  double comp_time_s = 0.32e-3;  // per layer
};

inline DnnModel dnn_a() { return {"dnnA", 2, 4'000'000, 0.32e-3}; }
inline DnnModel dnn_b() { return {"dnnB", 2, 2'000'000, 0.64e-3}; }

struct JobSpec {
  JobId job = 0;
  DnnModel model;
  std::vector<NodeId> workers;  // indexed by worker bit
  NodeId ps = 0;
  SimTime start_time = 0;  // drawn from U(0, 1ms) by the runner
  std::uint32_t iterations = 10;
  SimTime jitter_bound = from_us(300);
};

struct IterationRecord {
  JobId job = 0;
  std::uint32_t iteration = 0;
  SimTime comm_start = 0;  // earliest worker send start
  SimTime comp_done = 0;   // latest worker computation completion
};

// Mean JCT per job and across jobs, excluding warm-up iterations.
// JCT(job, i) = comp_done(i) - comm_start(i) of the same pipeline round.
struct JctSummary {
  std::vector<double> per_job_ns;  // indexed by job position
  double fleet_mean_ns = 0;
};

inline JctSummary compute_jct(const std::vector<std::vector<IterationRecord>>& per_job,
                              std::uint32_t warmup) {
  JctSummary out;
  double fleet = 0;
  for (const auto& recs : per_job) {
    if (recs.size() <= warmup)
      throw std::runtime_error("no completed iterations beyond warm-up");
    double sum = 0;
    std::uint32_t n = 0;
    for (const auto& r : recs) {
      if (r.iteration < warmup) continue;
      assert(r.comp_done >= r.comm_start);
      sum += static_cast<double>(to_ns(r.comp_done - r.comm_start));
      ++n;
    }
    out.per_job_ns.push_back(sum / n);
    fleet += out.per_job_ns.back();
  }
  out.fleet_mean_ns = fleet / static_cast<double>(per_job.size());
  return out;
}

// Drives the two-layer training pipeline of every job: four tensor
// partitions per iteration sent in order [L2P1, L1P1, L1P2, L2P2],
// layer-1 computation once all layer-1 results arrived, layer-2 after
// both that computation and the layer-2 results.
class WorkloadDriver : public ControlSink {
 public:
  WorkloadDriver(Simulator& sim, std::vector<JobSpec> jobs, std::uint32_t packet_bytes,
                 std::int64_t bandwidth_bps, const QuantScale& quant)
      : sim_(sim),
        jobs_(std::move(jobs)),
        packet_bytes_(packet_bytes),
        bandwidth_bps_(bandwidth_bps),
        quant_(quant) {
    state_.resize(jobs_.size());
    records_.resize(jobs_.size());
    worker_comm_start_.resize(jobs_.size());
    worker_last_result_.resize(jobs_.size());
    util_samples_.resize(jobs_.size());
    for (std::size_t j = 0; j < jobs_.size(); ++j) {
      state_[j].assign(jobs_[j].workers.size(), WkState{});
      worker_comm_start_[j].assign(jobs_[j].workers.size(), 0);
      worker_last_result_[j].assign(jobs_[j].workers.size(), 0);
    }
    sim_.set_driver(this);
  }

  std::uint32_t fragments_per_partition(const DnnModel& m) const {
    return static_cast<std::uint32_t>((m.partition_bytes + packet_bytes_ - 1) /
                                      packet_bytes_);
  }
  std::uint32_t fragments_per_iteration(const DnnModel& m) const {
    return 4 * fragments_per_partition(m);
  }

  // Kick off every job; workers then self-schedule via completions.
  void start() {
    for (std::size_t j = 0; j < jobs_.size(); ++j) {
      const JobSpec& job = jobs_[j];
      std::uint64_t planned =
          static_cast<std::uint64_t>(fragments_per_iteration(job.model)) * job.iterations;
      for (std::uint32_t w = 0; w < job.workers.size(); ++w) {
        Worker& worker = sim_.worker_at(job.workers[w]);
        worker.set_planned_total(planned);
        worker.on_deliver = [this, j, w](SeqNum seq, SimTime at) {
          on_deliver(static_cast<std::uint32_t>(j), w, seq, at);
        };
        SimTime jitter = draw_jitter(job);
        sim_.schedule_control(job.start_time + jitter, key(kIterStart, j, w));
      }
    }
  }

  void on_control(std::uint64_t k) override {
    std::uint32_t op = static_cast<std::uint32_t>(k >> 60);
    std::uint32_t j = static_cast<std::uint32_t>((k >> 40) & 0xFFFFF);
    std::uint32_t w = static_cast<std::uint32_t>(k & 0xFFFFFFFFFFu);
    switch (op) {
      case kIterStart: emit_iteration(j, w); break;
      case kComp1Done: on_comp1_done(j, w); break;
      case kComp2Done: on_comp2_done(j, w); break;
      default: assert(false);
    }
  }

  bool finished() const {
    for (std::size_t j = 0; j < jobs_.size(); ++j)
      for (const auto& ws : state_[j])
        if (ws.iter < jobs_[j].iterations) return false;
    return true;
  }

  const std::vector<std::vector<IterationRecord>>& records() const { return records_; }

  // Per-job utilization: result bytes delivered to a worker over its
  // active communication time, relative to the line rate; averaged over
  // workers and measured iterations.
  std::vector<double> per_job_utilization(std::uint32_t warmup) const {
    std::vector<double> out;
    for (std::size_t j = 0; j < jobs_.size(); ++j) {
      double sum = 0;
      std::uint64_t n = 0;
      for (const auto& s : util_samples_[j]) {
        if (s.iteration < warmup) continue;
        sum += s.value;
        ++n;
      }
      if (n == 0) throw std::runtime_error("zero active communication time");
      out.push_back(sum / static_cast<double>(n));
    }
    return out;
  }

  // T_j estimate: remaining communication plus computation time.
  double remaining_time_s(const JobSpec& job, std::uint32_t iter,
                          std::uint32_t partition) const {
    double comm = comm_time_s(job.model);
    double comp = 2.0 * job.model.comp_time_s;
    double remaining = static_cast<double>(job.iterations - iter) * (comm + comp) -
                       (static_cast<double>(partition) / 4.0) * comm;
    return std::max(remaining, 1e-6);
  }

  double comm_time_s(const DnnModel& m) const {
    return static_cast<double>(4 * m.partition_bytes * 8) /
           static_cast<double>(bandwidth_bps_);
  }

  JobProfile profile(const JobSpec& job, std::uint32_t iter, std::uint32_t partition) const {
    JobProfile p;
    p.job = job.job;
    p.remaining_time_s = remaining_time_s(job, iter, partition);
    p.layer_count = job.model.layer_count;
    p.comm_overhead_s = comm_time_s(job.model);
    p.comp_overhead_s = 2.0 * job.model.comp_time_s;
    return p;
  }

 private:
  // BP produces the back layer first; the first layer jumps the queue so
  // the next iteration's front-layer computation can start early.
  static constexpr std::uint8_t kPartitionLayer[4] = {2, 1, 1, 2};
  static constexpr std::uint32_t kIterStart = 1;
  static constexpr std::uint32_t kComp1Done = 2;
  static constexpr std::uint32_t kComp2Done = 3;

  struct WkState {
    std::uint32_t iter = 0;
    SeqNum iter_first = 0;
    std::uint32_t l1_remaining = 0;
    std::uint32_t l2_remaining = 0;
    SimTime l2_arrival = -1;
    SimTime comp1_done_at = -1;
    bool comp1_running = false;
  };

  struct UtilSample {
    std::uint32_t iteration;
    double value;
  };

  static std::uint64_t key(std::uint32_t op, std::uint64_t j, std::uint64_t w) {
    return (static_cast<std::uint64_t>(op) << 60) | (j << 40) | w;
  }

  SimTime draw_jitter(const JobSpec& job) {
    if (job.jitter_bound <= 0) return 0;
    return static_cast<SimTime>(
        sim_.jitter_rng().uniform(0.0, static_cast<double>(job.jitter_bound)));
  }

  void emit_iteration(std::uint32_t j, std::uint32_t w) {
    const JobSpec& job = jobs_[j];
    WkState& ws = state_[j][w];
    assert(ws.iter < job.iterations);
    Worker& worker = sim_.worker_at(job.workers[w]);
    std::uint32_t frags = fragments_per_partition(job.model);
    ws.iter_first = worker.allocated();
    ws.l1_remaining = 2 * frags;
    ws.l2_remaining = 2 * frags;
    ws.l2_arrival = -1;
    ws.comp1_done_at = -1;
    ws.comp1_running = false;
    SimTime now = sim_.now();
    worker_comm_start_[j][w] = now;
    if (records_[j].size() <= ws.iter) {
      records_[j].push_back({job.job, ws.iter, now, 0});
    } else {
      records_[j][ws.iter].comm_start = std::min(records_[j][ws.iter].comm_start, now);
    }
    for (std::uint32_t p = 0; p < 4; ++p) {
      std::uint8_t layer = kPartitionLayer[p];
      std::uint8_t prio = quantize_priority(
          compute_priority(profile(job, ws.iter, p), layer), quant_);
      worker.push(frags, prio, layer, sim_);
    }
  }

  void on_deliver(std::uint32_t j, std::uint32_t w, SeqNum seq, SimTime at) {
    const JobSpec& job = jobs_[j];
    WkState& ws = state_[j][w];
    std::uint32_t frags = fragments_per_partition(job.model);
    assert(seq >= ws.iter_first && seq < ws.iter_first + 4 * frags);
    std::uint32_t p = (seq - ws.iter_first) / frags;
    worker_last_result_[j][w] = at;
    if (kPartitionLayer[p] == 1) {
      assert(ws.l1_remaining > 0);
      if (--ws.l1_remaining == 0) {
        ws.comp1_running = true;
        sim_.schedule_control(at + from_seconds(job.model.comp_time_s),
                              key(kComp1Done, j, w));
      }
    } else {
      assert(ws.l2_remaining > 0);
      if (--ws.l2_remaining == 0) {
        ws.l2_arrival = at;
        if (ws.comp1_done_at >= 0)
          sim_.schedule_control(at + from_seconds(job.model.comp_time_s),
                                key(kComp2Done, j, w));
      }
    }
    if (ws.l1_remaining == 0 && ws.l2_remaining == 0) record_util(j, w, ws, at);
  }

  void on_comp1_done(std::uint32_t j, std::uint32_t w) {
    const JobSpec& job = jobs_[j];
    WkState& ws = state_[j][w];
    ws.comp1_done_at = sim_.now();
    ws.comp1_running = false;
    if (ws.l2_arrival >= 0)
      sim_.schedule_control(sim_.now() + from_seconds(job.model.comp_time_s),
                            key(kComp2Done, j, w));
  }

  void on_comp2_done(std::uint32_t j, std::uint32_t w) {
    const JobSpec& job = jobs_[j];
    WkState& ws = state_[j][w];
    IterationRecord& rec = records_[j][ws.iter];
    rec.comp_done = std::max(rec.comp_done, sim_.now());
    ++ws.iter;
    if (ws.iter < job.iterations)
      sim_.schedule_control(sim_.now() + draw_jitter(job), key(kIterStart, j, w));
  }

  void record_util(std::uint32_t j, std::uint32_t w, const WkState& ws, SimTime at) {
    // All four partitions delivered once L2 finishes last; L1 always
    // completes earlier in the fixed push order.
    const JobSpec& job = jobs_[j];
    SimTime active = at - worker_comm_start_[j][w];
    if (active <= 0) return;
    double bytes = static_cast<double>(fragments_per_iteration(job.model)) *
                   static_cast<double>(packet_bytes_);
    double thr = bytes * 8.0 / to_seconds(active);
    util_samples_[j].push_back({ws.iter, thr / static_cast<double>(bandwidth_bps_)});
  }

  Simulator& sim_;
  std::vector<JobSpec> jobs_;
  std::uint32_t packet_bytes_;
  std::int64_t bandwidth_bps_;
  QuantScale quant_;
  std::vector<std::vector<WkState>> state_;
  std::vector<std::vector<IterationRecord>> records_;
  std::vector<std::vector<SimTime>> worker_comm_start_;
  std::vector<std::vector<SimTime>> worker_last_result_;
  std::vector<std::vector<UtilSample>> util_samples_;
};

}  // namespace inasim
