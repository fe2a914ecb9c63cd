#pragma once

// Edge-node detection engine. Every RX and TX frame passes through ingest();
// tick() drives the learning-to-active transition and silence detection.

#include <atomic>
#include <sstream>

#include "eids/timing.hpp"

namespace eids {

enum class EventCause : std::uint8_t { NewFlow, BindingConflict, L2L3Mismatch, TooFast, TooSlow, MeanDrift, HostSilent };

inline std::string_view to_string(EventCause c) {
  switch (c) {
    case EventCause::NewFlow: return "NewFlow";
    case EventCause::BindingConflict: return "BindingConflict";
    case EventCause::L2L3Mismatch: return "L2L3Mismatch";
    case EventCause::TooFast: return "TooFast";
    case EventCause::TooSlow: return "TooSlow";
    case EventCause::MeanDrift: return "MeanDrift";
    case EventCause::HostSilent: return "HostSilent";
  }
  return "?";
}

struct IntrusionEvent {
  TimePoint at{};
  FlowKey flow;
  EventCause cause = EventCause::NewFlow;
  std::string detail;
  std::optional<Leg> leg;  // timing causes only
  friend bool operator==(const IntrusionEvent&, const IntrusionEvent&) = default;
};

enum class Verdict : std::uint8_t { Pass, Alert, Drop };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "Pass";
    case Verdict::Alert: return "Alert";
    case Verdict::Drop: return "Drop";
  }
  return "?";
}

struct EngineConfig {
  Duration learning_duration = std::chrono::seconds(600);
  double delta_default = 0.3;
  double delta_arp = 1.0;
  std::size_t window_w = 16;
  double alpha = 1.0 / 256.0;
  bool ips_mode = false;
  Ipv4Addr local_ip;  // unspecified: analyze all traffic as a network sensor
  std::uint16_t node_id = 0;
  std::optional<TimePoint> start;  // defaults to the first ingest or tick

  void validate() const {
    if (learning_duration <= Duration::zero()) throw std::invalid_argument("learning_duration must be positive");
    if (!(delta_default >= 0.0 && delta_default < 2.0)) throw std::invalid_argument("delta must be in [0, 2)");
    if (!(delta_arp >= 0.0 && delta_arp < 2.0)) throw std::invalid_argument("delta_arp must be in [0, 2)");
    if (window_w == 0) throw std::invalid_argument("window must hold at least one sample");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0, 1]");
  }

  TimingConfig timing() const { return {delta_default, delta_arp, window_w, alpha}; }
};

struct IngestResult {
  Verdict verdict = Verdict::Pass;
  std::vector<IntrusionEvent> events;
};

struct NodeStatus {
  Mode mode = Mode::Learning;
  bool intrusion = false;  // latched since the previous status() call
  std::uint16_t event_count = 0;
  std::size_t flow_count = 0;
};

/// `ISO8601 <tab> node_id <tab> cause <tab> flow <tab> detail`
inline std::string format_event_line(const IntrusionEvent& e, std::uint16_t node_id) {
  return iso8601(e.at) + '\t' + std::to_string(node_id) + '\t' + std::string(to_string(e.cause)) + '\t' +
         e.flow.render() + '\t' + e.detail;
}

// TCP handshake and teardown segments are irregular by nature.
inline bool timing_excluded(const PacketMeta& m) {
  const TransportMeta* t = m.l4();
  return t && t->has_flag(tcpflag::syn | tcpflag::fin | tcpflag::rst);
}

class Engine {
 public:
  explicit Engine(EngineConfig cfg) : cfg_(std::move(cfg)), table_(cfg_.local_ip), timing_(cfg_.timing()) {
    cfg_.validate();
    start_ = cfg_.start;
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const EngineConfig& config() const { return cfg_; }
  Mode mode() const { return mode_.load(std::memory_order_relaxed); }
  const FlowTable& flows() const { return table_; }
  const TimingDetector& timing() const { return timing_; }

  IngestResult ingest(Direction dir, ByteView frame, TimePoint now) {
    begin(now);
    IngestResult r;
    PacketMeta meta;
    try {
      meta = parse_frame(frame, now, dir);
    } catch (const ParseError& e) {
      if (mode() == Mode::Learning) return r;
      active_traffic_seen_ = true;
      FlowKey k;
      if (frame.size() >= 12) std::copy_n(frame.begin() + 6, 6, k.peer_mac.octets.begin());
      r.events.push_back({now, k, EventCause::NewFlow, std::string("unparseable: ") + e.what(), {}});
      finish(r);
      return r;
    }

    const ClassifiedPacket c = table_.classify(meta);
    const LegKey leg{c.key, c.leg};
    if (mode() == Mode::Learning) {
      table_.observe(meta, c, Mode::Learning);
      if (!timing_excluded(meta)) timing_.learn(leg, now);
      flow_count_.store(table_.flow_count(), std::memory_order_relaxed);
      return r;
    }

    active_traffic_seen_ = true;
    const FlowVerdicts fv = table_.observe(meta, c, Mode::Active);
    for (FlowVerdict v : fv.list()) r.events.push_back({now, c.key, flow_cause(v), flow_detail(v, meta), {}});
    if (!fv.contains(FlowVerdict::NewFlow) && !timing_excluded(meta)) {
      const LegState* before = timing_.find(leg);
      const double too_fast = before ? before->baseline.too_fast_bound_us() : 0.0;
      const double too_slow = before ? before->baseline.too_slow_bound_us() : 0.0;
      const auto last = before ? before->baseline.last_arrival : std::nullopt;
      if (auto tv = timing_.check(leg, now); tv && *tv != TimingVerdict::Ok) {
        const std::int64_t t = last ? std::max<std::int64_t>((now - *last).count(), 1) : 0;
        std::ostringstream d;
        d << to_string(c.leg) << " interarrival " << t << "us";
        if (*tv == TimingVerdict::TooFast) d << " <= " << too_fast << "us";
        if (*tv == TimingVerdict::TooSlow) d << " >= " << too_slow << "us";
        if (*tv == TimingVerdict::MeanDrift) {
          const LegState* s = timing_.find(leg);
          d << " window mean " << s->window.mean_us() << "us vs " << s->baseline.learned_mean_us << "us";
        }
        r.events.push_back({now, c.key, timing_cause(*tv), d.str(), c.leg});
      }
    }
    finish(r);
    return r;
  }

  std::vector<IntrusionEvent> tick(TimePoint now) {
    begin(now);
    std::vector<IntrusionEvent> out;
    if (mode() == Mode::Learning) {
      if (now - *start_ < cfg_.learning_duration) return out;
      mode_.store(Mode::Active, std::memory_order_relaxed);
      timing_.arm(now);
      return out;
    }
    for (const SilentLeg& s : timing_.absence(now)) {
      std::ostringstream d;
      d << to_string(s.key.leg) << " silent " << s.silence.count() << "us >= " << s.bound.count() << "us";
      out.push_back({now, s.key.flow, EventCause::HostSilent, d.str(), s.key.leg});
    }
    if (!out.empty()) {
      intrusion_latch_.store(true, std::memory_order_relaxed);
      events_since_status_.fetch_add(static_cast<unsigned>(out.size()), std::memory_order_relaxed);
    }
    return out;
  }

  /// Read-and-clear: the intrusion latch and event counter reset on read.
  NodeStatus status() {
    NodeStatus s;
    s.mode = mode();
    s.intrusion = intrusion_latch_.exchange(false, std::memory_order_relaxed);
    s.event_count = static_cast<std::uint16_t>(
        std::min<unsigned>(events_since_status_.exchange(0, std::memory_order_relaxed), 0xffff));
    s.flow_count = flow_count_.load(std::memory_order_relaxed);
    return s;
  }

  std::string export_model() const {
    std::string out(kModelHeader);
    out += '\n';
    table_.append_model_lines(out);
    timing_.append_model_lines(out);
    return out;
  }

  /// Replaces the learned state and switches to Active. Legs are armed at
  /// the next ingest or tick.
  void import_model(std::string_view text) {
    if (active_traffic_seen_) throw std::logic_error("model import after active traffic");
    std::size_t pos = 0;
    bool header = false;
    FlowTable table(cfg_.local_ip);
    TimingDetector timing(cfg_.timing());
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() : nl + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      if (!header) {
        if (line.substr(0, kModelMagic.size()) != kModelMagic)
          throw ModelError(ModelErrorKind::MalformedModelLine, "missing EIDS-MODEL header");
        if (line != kModelHeader) throw ModelError(ModelErrorKind::BadModelVersion, std::string(line));
        header = true;
        continue;
      }
      const auto fields = split_tabs(line);
      if (table.import_model_line(line, fields)) continue;
      if (timing.import_model_line(line, fields)) continue;
      malformed(line, "unknown record");
    }
    if (!header) throw ModelError(ModelErrorKind::MalformedModelLine, "empty model");
    table_ = std::move(table);
    timing_ = std::move(timing);
    flow_count_.store(table_.flow_count(), std::memory_order_relaxed);
    mode_.store(Mode::Active, std::memory_order_relaxed);
    armed_ = false;
  }

 private:
  void begin(TimePoint now) {
    if (!start_) start_ = now;
    if (!armed_ && mode() == Mode::Active) {
      timing_.arm(now);
      armed_ = true;
    }
  }

  void finish(IngestResult& r) {
    if (r.events.empty()) return;
    r.verdict = cfg_.ips_mode ? Verdict::Drop : Verdict::Alert;
    intrusion_latch_.store(true, std::memory_order_relaxed);
    events_since_status_.fetch_add(static_cast<unsigned>(r.events.size()), std::memory_order_relaxed);
  }

  static EventCause flow_cause(FlowVerdict v) {
    switch (v) {
      case FlowVerdict::BindingConflict: return EventCause::BindingConflict;
      case FlowVerdict::L2L3Mismatch: return EventCause::L2L3Mismatch;
      default: return EventCause::NewFlow;
    }
  }

  static EventCause timing_cause(TimingVerdict v) {
    switch (v) {
      case TimingVerdict::TooFast: return EventCause::TooFast;
      case TimingVerdict::TooSlow: return EventCause::TooSlow;
      default: return EventCause::MeanDrift;
    }
  }

  std::string flow_detail(FlowVerdict v, const PacketMeta& m) const {
    switch (v) {
      case FlowVerdict::NewFlow: return "connection not seen during learning";
      case FlowVerdict::BindingConflict: {
        const ArpMeta& a = *m.arp;
        const auto bound = table_.binding_for(a.sender_ip);
        return a.sender_ip.to_string() + " announced at " + a.sender_mac.to_string() + ", bound to " +
               (bound ? bound->to_string() : "?");
      }
      case FlowVerdict::L2L3Mismatch:
        if (m.arp) return "ethernet source " + m.src_mac.to_string() + " != arp sender " + m.arp->sender_mac.to_string();
        return "source " + m.src_mac.to_string() + " for " + m.l3->src_ip.to_string() + " or destination " +
               m.dst_mac.to_string() + " for " + m.l3->dst_ip.to_string() + " contradicts bindings";
      case FlowVerdict::Known: break;
    }
    return {};
  }

  EngineConfig cfg_;
  FlowTable table_;
  TimingDetector timing_;
  std::optional<TimePoint> start_;
  std::atomic<Mode> mode_{Mode::Learning};
  std::atomic<bool> intrusion_latch_{false};
  std::atomic<unsigned> events_since_status_{0};
  std::atomic<std::size_t> flow_count_{0};
  bool active_traffic_seen_ = false;
  bool armed_ = true;
};

}  // namespace eids
