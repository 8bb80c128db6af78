#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "inasim/core.hpp"
#include "inasim/time.hpp"

namespace inasim {

enum class EventKind : std::uint8_t {
  Deliver = 0,    // packet arrives at `node`
  NodeTimer = 1,  // worker/PS timer keyed by `key`
  Control = 2,    // workload-driver callback keyed by `key`
};

// Plain-value event; ties broken by insertion order so the pop sequence
// is a total order and identical across runs.
struct Event {
  SimTime at = 0;
  std::uint64_t order = 0;
  EventKind kind = EventKind::Deliver;
  NodeId node = 0;
  std::uint64_t key = 0;
  GradientPacket pkt;
};

class EventQueue {
 public:
  void schedule(Event ev) {
    ev.order = next_order_++;
    heap_.push_back(std::move(ev));
    std::push_heap(heap_.begin(), heap_.end(), Later{});
  }

  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

  Event pop() {
    std::pop_heap(heap_.begin(), heap_.end(), Later{});
    Event ev = std::move(heap_.back());
    heap_.pop_back();
    return ev;
  }

  // In-flight inspection for the conservation checker; heap order.
  const std::vector<Event>& pending() const { return heap_; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.order > b.order;
    }
  };
  std::vector<Event> heap_;
  std::uint64_t next_order_ = 0;
};

}  // namespace inasim
