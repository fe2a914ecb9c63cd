#pragma once

// Central collector of node status broadcasts.

#include <map>

#include "eids/announce.hpp"

namespace eids {

enum class Liveness : std::uint8_t { Up, Down };
enum class IntrusionView : std::uint8_t { No, Yes, Unknown };

inline std::string_view to_string(Liveness l) { return l == Liveness::Up ? "up" : "down"; }
inline std::string_view to_string(IntrusionView v) {
  switch (v) {
    case IntrusionView::No: return "no";
    case IntrusionView::Yes: return "yes";
    case IntrusionView::Unknown: return "???";
  }
  return "???";
}

struct NodeRecord {
  std::uint16_t node_id = 0;
  std::optional<TimePoint> last_msg;  // receive time of the last valid message
  std::uint8_t last_flags = 0;
  Liveness liveness = Liveness::Down;
  IntrusionView intrusion_view = IntrusionView::Unknown;
  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

struct NodeTransition {
  TimePoint at{};
  NodeRecord before;
  NodeRecord after;
};

inline std::string format_transition(const NodeTransition& t) {
  return iso8601(t.at) + "\tID: " + std::to_string(t.after.node_id) + '\t' + std::string(to_string(t.before.liveness)) +
         "->" + std::string(to_string(t.after.liveness)) + "\tIntrusion: " + std::string(to_string(t.after.intrusion_view));
}

struct LoggerConfig {
  Bytes psk;
  Duration timeout = std::chrono::seconds(20);
  std::uint64_t max_future_skew_ms = 120'000;
};

struct LoggerCounters {
  std::uint64_t accepted = 0;
  std::map<AnnounceErrorKind, std::uint64_t> rejected;
  std::uint64_t rejected_total() const {
    std::uint64_t n = 0;
    for (const auto& [k, v] : rejected) n += v;
    return n;
  }
};

class CentralLogger {
 public:
  explicit CentralLogger(LoggerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.psk.empty()) throw std::invalid_argument("empty PSK");
  }

  /// Nodes expected to report; never-seen ones show as down.
  void expect(std::uint16_t node_id) { nodes_.try_emplace(node_id, fresh(node_id)); }

  /// Invalid datagrams only bump counters. Returns the record when a valid
  /// message changed liveness or intrusion view.
  std::optional<NodeTransition> on_datagram(ByteView bytes, TimePoint now) {
    StatusMessage m;
    try {
      m = decode_verify(bytes, cfg_.psk, replay_, to_epoch_ms(now), cfg_.max_future_skew_ms);
    } catch (const AnnounceError& e) {
      ++counters_.rejected[e.kind()];
      return std::nullopt;
    }
    ++counters_.accepted;
    NodeRecord& r = nodes_.try_emplace(m.node_id, fresh(m.node_id)).first->second;
    const NodeRecord before = r;
    if (!r.last_msg || now > *r.last_msg) r.last_msg = now;
    r.last_flags = m.flags();
    r.liveness = Liveness::Up;
    r.intrusion_view = m.intrusion ? IntrusionView::Yes : IntrusionView::No;
    if (before.liveness == r.liveness && before.intrusion_view == r.intrusion_view) return std::nullopt;
    return NodeTransition{now, before, r};
  }

  /// Marks nodes silent for at least the timeout as down.
  std::vector<NodeTransition> sweep(TimePoint now) {
    std::vector<NodeTransition> out;
    for (auto& [id, r] : nodes_) {
      if (r.liveness != Liveness::Up || !r.last_msg) continue;
      if (now < *r.last_msg || now - *r.last_msg < cfg_.timeout) continue;
      const NodeRecord before = r;
      r.liveness = Liveness::Down;
      r.intrusion_view = IntrusionView::Unknown;
      out.push_back({now, before, r});
    }
    return out;
  }

  /// `ID: <n> is <up|down> Intrusion: <no|yes|???>`, one line per node.
  std::string render_status() const {
    std::string out;
    for (const auto& [id, r] : nodes_) {
      std::string live(to_string(r.liveness));
      live.resize(4, ' ');  // align the Intrusion column
      out += "ID: " + std::to_string(id) + " is " + live + " Intrusion: " + std::string(to_string(r.intrusion_view)) +
             '\n';
    }
    return out;
  }

  const std::map<std::uint16_t, NodeRecord>& nodes() const { return nodes_; }
  const NodeRecord* node(std::uint16_t id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }
  const LoggerCounters& counters() const { return counters_; }
  const LoggerConfig& config() const { return cfg_; }

 private:
  static NodeRecord fresh(std::uint16_t id) {
    NodeRecord r;
    r.node_id = id;
    return r;
  }

  LoggerConfig cfg_;
  ReplayState replay_;
  std::map<std::uint16_t, NodeRecord> nodes_;
  LoggerCounters counters_;
};

}  // namespace eids
