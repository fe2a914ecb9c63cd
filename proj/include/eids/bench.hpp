#pragma once

// Co-simulation of the testbed with one engine per edge node and a central
// logger listening to the broadcast domain, plus the attack matrix built on
// top of it.

#include <memory>

#include "eids/engine.hpp"
#include "eids/logger.hpp"
#include "eids/sim.hpp"

namespace eids {

struct NodeEvent {
  std::size_t device = 0;
  IntrusionEvent event;
};

struct CoSimResult {
  std::vector<NodeEvent> events;
  std::vector<NodeTransition> transitions;
  std::uint64_t frames = 0;
  std::uint64_t drops = 0;
};

/// Engines on every edge node of the topology. Frames reach an engine as
/// TX when its node sent them and as RX when its node receives them.
class CoSim {
 public:
  struct Options {
    EngineConfig engine;                          // local_ip, node_id, start are filled per node
    Duration tick = std::chrono::milliseconds(1);  // engine tick and logger sweep granularity
    Duration logger_timeout = std::chrono::seconds(20);
  };

  CoSim(sim::Topology topo, sim::TrafficProfile profile, std::vector<sim::AttackScenario> scenarios, Duration duration,
        std::uint64_t seed, Options opt)
      : sim_(std::move(topo), std::move(profile), std::move(scenarios), duration, seed), opt_(std::move(opt)),
        logger_(LoggerConfig{sim_.profile().psk, opt_.logger_timeout}) {
    if (opt_.tick <= Duration::zero()) throw std::invalid_argument("tick must be positive");
    const auto& devs = sim_.topology().devices;
    engines_.resize(devs.size());
    for (std::size_t i : sim_.topology().edge_nodes()) {
      EngineConfig c = opt_.engine;
      c.local_ip = devs[i].ip;
      c.node_id = devs[i].node_id;
      c.start = sim_.profile().epoch;
      engines_[i] = std::make_unique<Engine>(c);
      logger_.expect(devs[i].node_id);
    }
  }

  CoSimResult run() {
    CoSimResult r;
    next_tick_ = sim_.profile().epoch;
    auto status = [this](std::size_t d, TimePoint) {
      StatusMessage m;
      if (auto* e = engines_[d].get()) {
        const NodeStatus s = e->status();
        m.intrusion = s.intrusion;
        m.active = s.mode == Mode::Active;
      }
      return m;
    };
    sim_.run(
        [&](const sim::SimFrame& f) {
          advance(f.at, r);
          deliver(f, r);
        },
        status);
    advance(sim_.horizon(), r);
    return r;
  }

  const sim::Simulator& simulator() const { return sim_; }
  const Engine* engine(std::size_t device) const { return engines_[device].get(); }
  const CentralLogger& logger() const { return logger_; }

 private:
  void advance(TimePoint to, CoSimResult& r) {
    while (next_tick_ <= to) {
      const TimePoint t = next_tick_;
      for (std::size_t i = 0; i < engines_.size(); ++i) {
        if (!engines_[i] || sim_removed(i, t)) continue;
        for (auto& e : engines_[i]->tick(t)) r.events.push_back({i, std::move(e)});
      }
      for (auto& tr : logger_.sweep(t)) r.transitions.push_back(tr);
      next_tick_ += opt_.tick;
    }
  }

  void deliver(const sim::SimFrame& f, CoSimResult& r) {
    ++r.frames;
    if (f.sender != sim::kAttacker && engines_[f.sender]) feed(f.sender, Direction::Tx, f, r);
    for (std::size_t i = 0; i < engines_.size(); ++i)
      if (engines_[i] && f.received_by(i)) feed(i, Direction::Rx, f, r);
    if (auto p = udp_payload(f.bytes); p && announce_dst(f.bytes)) {
      if (auto tr = logger_.on_datagram(*p, f.at)) r.transitions.push_back(*tr);
    }
  }

  void feed(std::size_t i, Direction dir, const sim::SimFrame& f, CoSimResult& r) {
    IngestResult res = engines_[i]->ingest(dir, f.bytes, f.at);
    if (res.verdict == Verdict::Drop) ++r.drops;
    for (auto& e : res.events) r.events.push_back({i, std::move(e)});
  }

  bool announce_dst(ByteView frame) const {
    const PacketMeta m = parse_frame(frame, {}, Direction::Rx);
    return m.l4()->dst_port == sim_.profile().announce_port;
  }

  // A removed node's engine went down with it.
  bool sim_removed(std::size_t d, TimePoint t) const { return sim_.removed(d, t); }

  sim::Simulator sim_;
  Options opt_;
  CentralLogger logger_;
  std::vector<std::unique_ptr<Engine>> engines_;
  TimePoint next_tick_{};
};

struct BenchCase {
  std::string label;
  sim::AttackScenario scenario;
  bool expected = true;
  std::vector<std::string> untrusted;  // nodes whose own engine does not count
};

struct BenchSettings {
  EngineConfig engine;  // learning_duration also positions the attacks
  Duration active = std::chrono::seconds(300);
  Duration attack_offset = std::chrono::seconds(60);  // after learning ends
  std::uint64_t seed = 1;
  sim::Topology topology = sim::default_topology();
  sim::TrafficProfile profile;
  Duration tick = std::chrono::milliseconds(1);

  Duration duration() const { return engine.learning_duration + active; }
  Duration attack_start() const { return engine.learning_duration + attack_offset; }
};

/// The evaluated scenarios: 1-5 detected, 6 not, 7 only when the
/// attacker stops after learning, 8 by the captured node's peers.
inline std::vector<BenchCase> default_bench_cases(const BenchSettings& s) {
  using sim::AttackKind;
  const Duration at = s.attack_start();
  auto mk = [&](AttackKind k, std::string target) {
    sim::AttackScenario a;
    a.kind = k;
    a.start = at;
    a.target = std::move(target);
    return a;
  };
  std::vector<BenchCase> out;
  out.push_back({"1 node removed", mk(AttackKind::NodeRemoved, "S3"), true, {}});
  out.push_back({"2 active sniffing", mk(AttackKind::ActiveSniff, "PLC"), true, {}});
  out.push_back({"3 spoofing", mk(AttackKind::Spoof, "S2"), true, {}});
  out.push_back({"4 packet injection", mk(AttackKind::Inject, "S1"), true, {}});
  auto dos = mk(AttackKind::DosFlood, "S1");
  dos.stop = at + std::chrono::seconds(30);
  out.push_back({"5 denial of service", dos, true, {}});
  out.push_back({"6 passive sniffing", mk(AttackKind::PassiveSniff, "S1"), false, {}});
  auto learn_cont = mk(AttackKind::LearningAttack, "S6");
  learn_cont.start = Duration::zero();
  out.push_back({"7 learning attack (continues)", learn_cont, false, {}});
  auto learn_stop = learn_cont;
  learn_stop.stop = s.engine.learning_duration;
  out.push_back({"7 learning attack (stops)", learn_stop, true, {}});
  auto cap = mk(AttackKind::CaptureNode, "S4");
  cap.peer = "S5";
  out.push_back({"8 node captured", cap, true, {"S4"}});
  return out;
}

struct BenchRow {
  BenchCase bench_case;
  bool detected = false;
  std::optional<Duration> first_detection;  // relative to attack start
  std::set<std::string> detectors;          // node names, "logger" for collector transitions
  std::set<EventCause> causes;
  bool logger_down = false;
  CoSimResult result;

  bool matches() const { return detected == bench_case.expected; }
};

inline BenchRow run_bench_case(const BenchCase& c, const BenchSettings& s) {
  CoSim::Options opt;
  opt.engine = s.engine;
  opt.tick = s.tick;
  CoSim cs(s.topology, s.profile, {c.scenario}, s.duration(), s.seed, opt);
  BenchRow row{c, false, {}, {}, {}, false, cs.run()};
  const TimePoint start = s.profile.epoch + c.scenario.start;
  const auto& devs = s.topology.devices;
  auto note = [&](TimePoint at, const std::string& who) {
    row.detected = true;
    row.detectors.insert(who);
    if (!row.first_detection || at - start < *row.first_detection) row.first_detection = at - start;
  };
  for (const auto& ne : row.result.events) {
    if (ne.event.at < start) continue;
    const std::string& name = devs[ne.device].name;
    if (std::find(c.untrusted.begin(), c.untrusted.end(), name) != c.untrusted.end()) continue;
    row.causes.insert(ne.event.cause);
    note(ne.event.at, name);
  }
  for (const auto& tr : row.result.transitions) {
    if (tr.at < start) continue;
    // Reports from untrusted nodes are as worthless as their engines.
    bool untrusted = false;
    for (const auto& u : c.untrusted)
      if (auto i = s.topology.index_of(u); i && devs[*i].node_id == tr.after.node_id) untrusted = true;
    if (untrusted) continue;
    if (tr.after.liveness == Liveness::Down) {
      row.logger_down = true;
      note(tr.at, "logger");
    } else if (tr.after.intrusion_view == IntrusionView::Yes) {
      note(tr.at, "logger");
    }
  }
  return row;
}

inline std::vector<BenchRow> run_bench(const BenchSettings& s, const std::vector<BenchCase>& cases) {
  std::vector<BenchRow> rows;
  for (const auto& c : cases) rows.push_back(run_bench_case(c, s));
  return rows;
}

inline std::string render_bench(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "scenario                          expected      observed      first(ms)  causes\n";
  for (const auto& r : rows) {
    auto pad = [](std::string s, std::size_t w) {
      s.resize(std::max(s.size(), w), ' ');
      return s;
    };
    std::string causes;
    for (auto c : r.causes) causes += (causes.empty() ? "" : ",") + std::string(to_string(c));
    if (r.logger_down) causes += causes.empty() ? "logger-down" : ",logger-down";
    out << pad(r.bench_case.label, 34) << pad(r.bench_case.expected ? "detected" : "not detected", 14)
        << pad(r.detected ? "detected" : "not detected", 14)
        << pad(r.first_detection ? std::to_string(r.first_detection->count() / 1000) : "-", 11) << causes
        << (r.matches() ? "" : "  MISMATCH") << '\n';
  }
  return out.str();
}

}  // namespace eids
