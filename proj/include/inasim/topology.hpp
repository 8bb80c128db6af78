#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/time.hpp"

namespace inasim {

enum class NodeKind : std::uint8_t { Worker, Switch, Ps };

struct NodeInfo {
  NodeKind kind = NodeKind::Worker;
  std::uint32_t index = 0;  // index within its kind
  std::string name;         // w<i> / s<i> / p<i>
};

// Unidirectional store-and-forward pipe. busy_until serializes departures
// so packets on one link stay FIFO with spacing >= size/bandwidth.
struct Link {
  NodeId from = 0;
  NodeId to = 0;
  std::int64_t bandwidth_bps = 0;
  SimTime latency = 0;  // one-way propagation
  double loss_prob = 0.0;
  SimTime busy_until = 0;
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;

  SimTime serialization(std::uint32_t bytes) const {
    assert(bandwidth_bps > 0);
    // ceil(bits * ps_per_s / bw) so spacing never undershoots
    unsigned __int128 num =
        static_cast<unsigned __int128>(bytes) * 8u * static_cast<std::uint64_t>(kPsPerSec);
    return static_cast<SimTime>((num + static_cast<std::uint64_t>(bandwidth_bps) - 1) /
                                static_cast<std::uint64_t>(bandwidth_bps));
  }
};

struct LinkParams {
  std::int64_t bandwidth_bps = 100'000'000'000;  // 100 Gbps
  SimTime latency = from_us(5);                  // one way; 10us base RTT round trip
  double loss_prob = 0.0;
};

class Topology {
 public:
  std::vector<NodeInfo> nodes;
  std::vector<Link> links;

  NodeId add_node(NodeKind kind, std::uint32_t index, std::string name) {
    nodes.push_back({kind, index, std::move(name)});
    return static_cast<NodeId>(nodes.size() - 1);
  }

  void add_duplex(NodeId a, NodeId b, const LinkParams& p) {
    links.push_back({a, b, p.bandwidth_bps, p.latency, p.loss_prob});
    links.push_back({b, a, p.bandwidth_bps, p.latency, p.loss_prob});
  }

  // Dense next-hop table; fine at the scales simulated here.
  void build_routes() {
    const std::size_t n = nodes.size();
    next_link_.assign(n, std::vector<std::int32_t>(n, -1));
    // BFS from every node over the link graph
    std::vector<std::vector<std::uint32_t>> out(n);
    for (std::uint32_t li = 0; li < links.size(); ++li) out[links[li].from].push_back(li);
    for (NodeId src = 0; src < n; ++src) {
      std::vector<std::int32_t> via(n, -1);  // first link out of src toward node
      std::vector<bool> seen(n, false);
      std::vector<NodeId> fifo{src};
      seen[src] = true;
      for (std::size_t head = 0; head < fifo.size(); ++head) {
        NodeId u = fifo[head];
        for (std::uint32_t li : out[u]) {
          NodeId v = links[li].to;
          if (seen[v]) continue;
          seen[v] = true;
          via[v] = (u == src) ? static_cast<std::int32_t>(li) : via[u];
          fifo.push_back(v);
        }
      }
      next_link_[src] = std::move(via);
    }
  }

  // First hop from `at` toward `dst`; asserts a route exists.
  std::uint32_t next_link(NodeId at, NodeId dst) const {
    assert(at < next_link_.size() && dst < next_link_.size());
    std::int32_t li = next_link_[at][dst];
    assert(li >= 0 && "no route between nodes");
    return static_cast<std::uint32_t>(li);
  }

  bool has_route(NodeId at, NodeId dst) const {
    return at < next_link_.size() && next_link_[at][dst] >= 0;
  }

 private:
  std::vector<std::vector<std::int32_t>> next_link_;
};

}  // namespace inasim
