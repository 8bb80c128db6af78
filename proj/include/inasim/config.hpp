#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "inasim/priority.hpp"
#include "inasim/switchd.hpp"
#include "inasim/time.hpp"

namespace inasim {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& key, const std::string& why)
      : std::runtime_error("config key '" + key + "': " + why) {}
};

inline std::optional<AllocationPolicy> parse_policy(const std::string& s) {
  AllocationPolicy p;
  if (s == "esa") p.kind = AllocationPolicy::EsaPreemptive;
  else if (s == "atp") p.kind = AllocationPolicy::AtpFcfs;
  else if (s == "switchml") p.kind = AllocationPolicy::SwitchMlStatic;
  else if (s == "always") p.kind = AllocationPolicy::AlwaysPreempt;
  else if (s.rfind("coinflip", 0) == 0) {
    p.kind = AllocationPolicy::CoinFlip;
    p.p = 0.5;
    auto colon = s.find(':');
    if (colon != std::string::npos) p.p = std::stod(s.substr(colon + 1));
    if (p.p < 0.0 || p.p > 1.0) return std::nullopt;
  } else {
    return std::nullopt;
  }
  return p;
}

inline std::string policy_name(const AllocationPolicy& p) {
  if (p.kind == AllocationPolicy::CoinFlip && p.p != 0.5) {
    std::ostringstream os;
    os << "coinflip:" << p.p;
    return os.str();
  }
  return to_string(p.kind);
}

struct ScenarioConfig {
  std::string topology = "single";  // single | two-level
  std::uint32_t racks = 2;          // two-level only
  std::string preset = "dnnA";      // dnnA | dnnB | mixAB
  std::uint32_t jobs = 1;
  std::uint32_t workers_per_job = 8;
  AllocationPolicy policy;
  std::uint64_t memory_bytes = 5'000'000;
  std::uint32_t packet_bytes = 306;
  std::uint32_t aggregator_footprint = 306;
  std::int64_t bandwidth_bps = 100'000'000'000;
  SimTime link_latency = from_us(5);
  double loss_prob = 0.0;
  std::vector<std::uint64_t> seeds = {1};
  std::uint32_t iterations = 10;
  std::uint32_t warmup = 2;
  std::uint32_t send_window_bytes = 60'000;
  QuantScale quant;
  SimTime jitter_bound = from_us(300);
  SimTime start_window = from_ms(1);
  SimTime rto_min = from_ms(1);
  SimTime horizon = from_seconds(60.0);
  std::uint64_t pool_size_override = 0;
  std::uint64_t partition_bytes_override = 0;  // tiny scenarios
  double comp_time_override_s = -1.0;
  std::string out_dir;
  bool trace = false;
  bool packet_bytes_explicit = false;
  std::vector<std::string> warnings;

  std::uint64_t pool_size() const {
    if (pool_size_override) return pool_size_override;
    return memory_bytes / aggregator_footprint;
  }
};

inline void validate(ScenarioConfig& c) {
  if (c.topology != "single" && c.topology != "two-level")
    throw ConfigError("topology", "must be 'single' or 'two-level'");
  if (c.jobs == 0) throw ConfigError("jobs", "must be positive");
  if (c.workers_per_job == 0 || c.workers_per_job > kMaxFanIn)
    throw ConfigError("workers_per_job",
                      "fan-in 1..32: a 32-bit bitmap indexes one bit per worker");
  if (c.topology == "two-level") {
    if (c.racks == 0 || c.racks > kMaxFanIn)
      throw ConfigError("racks", "fan-in 1..32 at the second level");
  }
  if (c.preset != "dnnA" && c.preset != "dnnB" && c.preset != "mixAB")
    throw ConfigError("preset", "must be dnnA, dnnB or mixAB");
  if (c.memory_bytes == 0) throw ConfigError("memory_bytes", "must be positive");
  if (c.packet_bytes == 0) throw ConfigError("packet_bytes", "must be positive");
  if (c.bandwidth_bps <= 0) throw ConfigError("bandwidth_bps", "must be positive");
  if (c.loss_prob < 0.0 || c.loss_prob > 1.0)
    throw ConfigError("loss_prob", "must be in [0,1]");
  if (c.seeds.empty()) throw ConfigError("seeds", "at least one seed");
  if (c.iterations == 0) throw ConfigError("iterations", "must be positive");
  if (c.warmup >= c.iterations)
    throw ConfigError("warmup", "must leave at least one measured iteration");
  if (c.send_window_bytes < c.packet_bytes)
    throw ConfigError("send_window_bytes", "window smaller than one packet");
  if (c.quant.k <= 0 || c.quant.p_ref <= 0)
    throw ConfigError("quant", "k and p_ref must be positive");
  if (c.policy.kind == AllocationPolicy::SwitchMlStatic) {
    if (c.packet_bytes == 306 && !c.packet_bytes_explicit) {
      c.packet_bytes = 180;
      c.warnings.push_back("switchml mode: packet_bytes auto-corrected 306 -> 180");
    } else if (c.packet_bytes != 180) {
      throw ConfigError("packet_bytes", "switchml mode requires 180-byte packets");
    }
    if (c.pool_size() / c.jobs == 0)
      throw ConfigError("memory_bytes", "static partition smaller than one aggregator");
  }
  if (c.pool_size() == 0) throw ConfigError("memory_bytes", "pool has zero aggregators");
}

inline ScenarioConfig config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("topology", c.topology);
  get("racks", c.racks);
  get("preset", c.preset);
  get("jobs", c.jobs);
  get("workers_per_job", c.workers_per_job);
  if (j.contains("policy")) {
    auto p = parse_policy(j.at("policy").get<std::string>());
    if (!p) throw ConfigError("policy", "unknown policy '" + j.at("policy").get<std::string>() + "'");
    c.policy = *p;
  }
  get("memory_bytes", c.memory_bytes);
  get("packet_bytes", c.packet_bytes);
  c.packet_bytes_explicit = j.contains("packet_bytes");
  get("aggregator_footprint", c.aggregator_footprint);
  get("bandwidth_bps", c.bandwidth_bps);
  if (j.contains("link_latency_us"))
    c.link_latency = from_seconds(j.at("link_latency_us").get<double>() * 1e-6);
  get("loss_prob", c.loss_prob);
  get("seeds", c.seeds);
  get("iterations", c.iterations);
  get("warmup", c.warmup);
  get("send_window_bytes", c.send_window_bytes);
  if (j.contains("quant")) {
    c.quant.k = j.at("quant").value("k", 16.0);
    c.quant.p_ref = j.at("quant").value("p_ref", 1.0);
  }
  if (j.contains("jitter_us"))
    c.jitter_bound = from_seconds(j.at("jitter_us").get<double>() * 1e-6);
  if (j.contains("start_window_ms"))
    c.start_window = from_seconds(j.at("start_window_ms").get<double>() * 1e-3);
  if (j.contains("rto_min_ms"))
    c.rto_min = from_seconds(j.at("rto_min_ms").get<double>() * 1e-3);
  if (j.contains("horizon_s")) c.horizon = from_seconds(j.at("horizon_s").get<double>());
  get("pool_size_override", c.pool_size_override);
  get("partition_bytes", c.partition_bytes_override);
  get("comp_time_override_s", c.comp_time_override_s);
  get("out_dir", c.out_dir);
  get("trace", c.trace);
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

}  // namespace inasim
