#pragma once

#include <cstdint>

#include "inasim/core.hpp"
#include "inasim/time.hpp"
#include "inasim/trace.hpp"

namespace inasim {

// What a node may do while handling an event. The simulator implements
// this; unit tests substitute a recording fake.
class SimServices {
 public:
  virtual ~SimServices() = default;
  virtual SimTime now() const = 0;
  // Route pkt from pkt.src toward pkt.dst, starting at pkt.src.
  virtual void send(GradientPacket pkt) = 0;
  virtual void node_timer(NodeId node, SimTime at, std::uint64_t key) = 0;
  virtual void trace(NodeId node, TraceEvent ev, JobId job, SeqNum seq,
                     std::uint64_t a = 0, std::uint64_t b = 0) = 0;
  virtual double coin_flip() = 0;  // uniform [0,1) from the coinflip stream
};

}  // namespace inasim
