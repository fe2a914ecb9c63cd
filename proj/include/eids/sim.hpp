#pragma once

// Deterministic discrete-event model of a polling ICS testbed: a PLC polls
// eight sensors and one actuator over Modbus/TCP, an HMI and a SCADA host
// poll the PLC, ARP caches expire and re-resolve, and every edge node
// broadcasts a signed keep-alive. Attack scenarios inject or suppress
// frames on top of the benign schedule.
//
// Each benign process draws from its own random stream, so injecting an
// attack never perturbs unrelated traffic.

#include <functional>
#include <memory>
#include <queue>
#include <random>

#include "eids/announce.hpp"
#include "eids/frame_builder.hpp"
#include "eids/pcap.hpp"

namespace eids::sim {

enum class Role : std::uint8_t { Sensor, Actor, Plc, Hmi, Cloud };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::Sensor: return "sensor";
    case Role::Actor: return "actor";
    case Role::Plc: return "plc";
    case Role::Hmi: return "hmi";
    case Role::Cloud: return "cloud";
  }
  return "?";
}

inline std::optional<Role> parse_role(std::string_view s) {
  if (s == "sensor") return Role::Sensor;
  if (s == "actor") return Role::Actor;
  if (s == "plc") return Role::Plc;
  if (s == "hmi") return Role::Hmi;
  if (s == "cloud" || s == "scada") return Role::Cloud;
  return std::nullopt;
}

struct Device {
  std::string name;
  Role role = Role::Sensor;
  Ipv4Addr ip;
  MacAddr mac;
  std::uint16_t node_id = 0;  // edge nodes only, 0 otherwise

  bool is_edge() const { return role == Role::Sensor || role == Role::Actor; }
};

inline MacAddr testbed_mac(std::uint8_t last_octet) { return {{0x02, 0x00, 0x5e, 0x10, 0x01, last_octet}}; }

struct Topology {
  std::vector<Device> devices;
  Ipv4Addr broadcast_ip = Ipv4Addr::of(192, 168, 1, 255);
  Device attacker{"ATT", Role::Hmi, Ipv4Addr::of(192, 168, 1, 66), {{0xde, 0xad, 0xbe, 0xef, 0x00, 0x66}}, 0};

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < devices.size(); ++i)
      if (devices[i].name == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> plc() const {
    for (std::size_t i = 0; i < devices.size(); ++i)
      if (devices[i].role == Role::Plc) return i;
    return std::nullopt;
  }
  std::vector<std::size_t> edge_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < devices.size(); ++i)
      if (devices[i].is_edge()) out.push_back(i);
    return out;
  }
};

/// Sensors S1-S8 (.101-.108), actuator A1 (.109), PLC (.50), HMI (.40),
/// SCADA/cloud (.1). Edge nodes carry node ids 1-9.
inline Topology default_topology() {
  Topology t;
  for (std::uint8_t i = 1; i <= 8; ++i) {
    const auto last = static_cast<std::uint8_t>(100 + i);
    t.devices.push_back({"S" + std::to_string(i), Role::Sensor, Ipv4Addr::of(192, 168, 1, last), testbed_mac(last), i});
  }
  t.devices.push_back({"A1", Role::Actor, Ipv4Addr::of(192, 168, 1, 109), testbed_mac(109), 9});
  t.devices.push_back({"PLC", Role::Plc, Ipv4Addr::of(192, 168, 1, 50), testbed_mac(50), 0});
  t.devices.push_back({"HMI", Role::Hmi, Ipv4Addr::of(192, 168, 1, 40), testbed_mac(40), 0});
  t.devices.push_back({"CLOUD", Role::Cloud, Ipv4Addr::of(192, 168, 1, 1), testbed_mac(1), 0});
  return t;
}

struct TrafficProfile {
  Duration poll_period = std::chrono::milliseconds(100);
  Duration response_delay_min = std::chrono::milliseconds(1);
  Duration response_delay_max = std::chrono::milliseconds(5);
  double jitter = 0.02;  // +- fraction of poll_period
  Duration plc_timeout = std::chrono::milliseconds(1000);
  Duration hmi_poll_period = std::chrono::milliseconds(100);
  Duration scada_poll_period = std::chrono::milliseconds(100);
  Duration arp_expiry_min = std::chrono::seconds(180);
  Duration arp_expiry_max = std::chrono::seconds(360);
  Duration keepalive_period = std::chrono::seconds(10);
  Duration keepalive_jitter = std::chrono::milliseconds(20);
  std::uint16_t announce_port = kDefaultAnnouncePort;
  Bytes psk = Bytes{'t', 'e', 's', 't', 'b', 'e', 'd', '-', 'p', 's', 'k'};
  TimePoint epoch = from_micros(1'600'000'000'000'000);

  Duration arp_expiry_mean() const { return (arp_expiry_min + arp_expiry_max) / 2; }
};

enum class AttackKind : std::uint8_t {
  NodeRemoved = 1,
  ActiveSniff = 2,
  Spoof = 3,
  Inject = 4,
  DosFlood = 5,
  PassiveSniff = 6,
  LearningAttack = 7,
  CaptureNode = 8,
};

inline std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::NodeRemoved: return "node_removed";
    case AttackKind::ActiveSniff: return "active_sniff";
    case AttackKind::Spoof: return "spoof";
    case AttackKind::Inject: return "inject";
    case AttackKind::DosFlood: return "dos_flood";
    case AttackKind::PassiveSniff: return "passive_sniff";
    case AttackKind::LearningAttack: return "learning_attack";
    case AttackKind::CaptureNode: return "capture_node";
  }
  return "?";
}

inline std::optional<AttackKind> parse_attack_kind(std::string_view s) {
  for (int i = 1; i <= 8; ++i) {
    const auto k = static_cast<AttackKind>(i);
    if (s == to_string(k) || s == std::to_string(i)) return k;
  }
  return std::nullopt;
}

/// Offsets are relative to the simulation epoch.
struct AttackScenario {
  AttackKind kind = AttackKind::PassiveSniff;
  Duration start{};
  std::string target = "S1";
  std::optional<Duration> stop;       // end of attacker activity; horizon when unset
  double rate = 1000.0;               // DosFlood packets per second
  Duration period = std::chrono::seconds(1);  // LearningAttack poll / CaptureNode reconnect period
  std::string peer;                   // CaptureNode victim; next edge node when empty
  bool starve_keepalive = true;       // DosFlood suppresses the target's keep-alives
};

enum class SimErrorKind { ConfigInvalid, ScenarioConflict, IoError };

class SimError : public std::runtime_error {
 public:
  SimError(SimErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  SimErrorKind kind() const noexcept { return kind_; }

 private:
  SimErrorKind kind_;
};

inline constexpr std::size_t kAttacker = static_cast<std::size_t>(-1);

struct SimFrame {
  TimePoint at{};
  Bytes bytes;
  std::size_t sender = kAttacker;   // device index, kAttacker for the intruder
  std::uint64_t receivers = 0;      // bit i set: device i receives the frame

  bool received_by(std::size_t d) const { return d < 64 && (receivers >> d & 1u) != 0; }
  bool involves(std::size_t d) const { return sender == d || received_by(d); }
};

struct FrameTrace {
  Topology topology;
  std::vector<SimFrame> frames;

  void write_pcap(std::ostream& out) const {
    PcapWriter w(out);
    for (const auto& f : frames) w.write(f.at, f.bytes);
  }
};

using FrameSink = std::function<void(const SimFrame&)>;
/// Supplies intrusion/mode bits for an edge node's keep-alive at send time.
using StatusProvider = std::function<StatusMessage(std::size_t device, TimePoint now)>;

/// Portable stream: mt19937_64 is fully specified; the float mapping is ours.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_a), static_cast<std::uint32_t>(stream_a >> 32),
                      static_cast<std::uint32_t>(stream_b), static_cast<std::uint32_t>(stream_b >> 32)};
    gen_.seed(seq);
  }
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  Duration uniform(Duration lo, Duration hi) {
    const double span = static_cast<double>((hi - lo).count());
    return lo + Duration{static_cast<std::int64_t>(uniform01() * span)};
  }

 private:
  std::mt19937_64 gen_;
};

class Simulator {
 public:
  Simulator(Topology topo, TrafficProfile profile, std::vector<AttackScenario> scenarios, Duration duration,
            std::uint64_t seed)
      : topo_(std::move(topo)), prof_(std::move(profile)), scen_(std::move(scenarios)), duration_(duration),
        seed_(seed) {
    validate();
  }

  const Topology& topology() const { return topo_; }
  const TrafficProfile& profile() const { return prof_; }
  TimePoint horizon() const { return prof_.epoch + duration_; }

  /// Streams frames in timestamp order (ties in scheduling order).
  void run(const FrameSink& sink, const StatusProvider& status = {}) {
    sink_ = &sink;
    status_ = status ? &status : nullptr;
    reset();
    schedule_benign();
    for (std::size_t i = 0; i < scen_.size(); ++i) schedule_attack(i);
    while (!queue_.empty()) {
      Event e = queue_.top();
      queue_.pop();
      if (e.at > horizon()) break;
      e.fn();
    }
    while (!queue_.empty()) queue_.pop();
    sink_ = nullptr;
    status_ = nullptr;
  }

  /// True once a NodeRemoved scenario has taken device `d` off the network.
  bool removed(std::size_t d, TimePoint t) const {
    if (d == kAttacker) return false;
    for (const auto& s : scen_)
      if (s.kind == AttackKind::NodeRemoved && topo_.devices[d].name == s.target && t >= at(s.start)) return true;
    return false;
  }

  const std::vector<AttackScenario>& scenarios() const { return scen_; }

  FrameTrace run_trace(const StatusProvider& status = {}) {
    FrameTrace t{topo_, {}};
    run([&](const SimFrame& f) { t.frames.push_back(f); }, status);
    return t;
  }

 private:
  struct Event {
    TimePoint at;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  struct TcpConn {
    std::size_t client = 0;  // kAttacker allowed
    std::size_t server = 0;
    std::uint16_t client_port = 0;
    std::uint32_t client_seq = 0;
    std::uint32_t server_seq = 0;
    std::uint16_t tid = 0;
    bool write = false;
  };

  // ----- plumbing ---------------------------------------------------------

  void validate() const {
    if (duration_ <= Duration::zero()) throw SimError(SimErrorKind::ConfigInvalid, "duration must be positive");
    if (topo_.devices.size() > 63) throw SimError(SimErrorKind::ConfigInvalid, "at most 63 devices");
    if (!topo_.plc()) throw SimError(SimErrorKind::ConfigInvalid, "topology needs a PLC");
    const auto& p = prof_;
    for (Duration d : {p.poll_period, p.response_delay_min, p.response_delay_max, p.plc_timeout, p.hmi_poll_period,
                       p.scada_poll_period, p.arp_expiry_min, p.arp_expiry_max, p.keepalive_period})
      if (d <= Duration::zero()) throw SimError(SimErrorKind::ConfigInvalid, "durations must be positive");
    if (p.response_delay_min > p.response_delay_max || p.arp_expiry_min > p.arp_expiry_max)
      throw SimError(SimErrorKind::ConfigInvalid, "inverted range");
    if (p.jitter < 0.0 || p.jitter >= 0.5) throw SimError(SimErrorKind::ConfigInvalid, "jitter must be in [0, 0.5)");
    if (p.psk.empty()) throw SimError(SimErrorKind::ConfigInvalid, "empty PSK");
    for (std::size_t i = 0; i < scen_.size(); ++i) {
      const auto& s = scen_[i];
      if (s.start < Duration::zero() || s.start > duration_)
        throw SimError(SimErrorKind::ConfigInvalid, "scenario start outside horizon");
      if (!topo_.index_of(s.target)) throw SimError(SimErrorKind::ConfigInvalid, "unknown target " + s.target);
      if (s.stop && *s.stop <= s.start) throw SimError(SimErrorKind::ConfigInvalid, "scenario stops before start");
      if (s.kind == AttackKind::DosFlood && !(s.rate > 0.0 && s.rate <= 1e6))
        throw SimError(SimErrorKind::ConfigInvalid, "flood rate out of range");
      if (s.period <= Duration::zero()) throw SimError(SimErrorKind::ConfigInvalid, "period must be positive");
      if (s.kind == AttackKind::CaptureNode && !s.peer.empty() && !topo_.index_of(s.peer))
        throw SimError(SimErrorKind::ConfigInvalid, "unknown peer " + s.peer);
      if (s.kind == AttackKind::PassiveSniff) continue;
      for (std::size_t j = 0; j < i; ++j) {
        const auto& o = scen_[j];
        if (o.kind == AttackKind::PassiveSniff || o.target != s.target) continue;
        const Duration s_end = s.stop.value_or(duration_), o_end = o.stop.value_or(duration_);
        if (s.start < o_end && o.start < s_end)
          throw SimError(SimErrorKind::ScenarioConflict, "overlapping scenarios on " + s.target);
      }
    }
  }

  void reset() {
    queue_ = {};
    seq_ = 0;
    ident_.assign(topo_.devices.size() + 1, 0);
    last_ka_time_.assign(topo_.devices.size(), 0);
    conns_.clear();
  }

  TimePoint at(Duration offset) const { return prof_.epoch + offset; }

  void schedule(TimePoint t, std::function<void()> fn) { queue_.push({t, seq_++, std::move(fn)}); }

  const Device& dev(std::size_t i) const { return i == kAttacker ? topo_.attacker : topo_.devices[i]; }

  std::uint16_t next_ident(std::size_t d) {
    auto& c = ident_[d == kAttacker ? ident_.size() - 1 : d];
    return ++c;
  }

  std::uint64_t receivers_for(const MacAddr& dst, std::size_t sender, TimePoint t) const {
    std::uint64_t mask = 0;
    for (std::size_t i = 0; i < topo_.devices.size(); ++i) {
      if (i == sender || removed(i, t)) continue;
      if (dst.is_group() || dst == topo_.devices[i].mac) mask |= std::uint64_t{1} << i;
    }
    return mask;
  }

  // Emits immediately; callers schedule emission events at the frame time.
  void emit(TimePoint t, std::size_t sender, Bytes bytes) {
    if (sender != kAttacker && removed(sender, t)) return;
    const MacAddr dst = MacAddr{{bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5]}};
    SimFrame f{t, std::move(bytes), sender, receivers_for(dst, sender, t)};
    (*sink_)(f);
  }

  void send_at(TimePoint t, std::size_t sender, Bytes bytes) {
    schedule(t, [this, t, sender, b = std::move(bytes)]() mutable { emit(t, sender, std::move(b)); });
  }

  // ----- scenario predicates ---------------------------------------------

  bool active(const AttackScenario& s, TimePoint t) const {
    return t >= at(s.start) && (!s.stop || t < at(*s.stop));
  }


  bool keepalive_starved(std::size_t d, TimePoint t) const {
    for (const auto& s : scen_)
      if (s.kind == AttackKind::DosFlood && s.starve_keepalive && topo_.devices[d].name == s.target && active(s, t))
        return true;
    return false;
  }

  // ----- protocol helpers --------------------------------------------------

  void arp_request(TimePoint t, std::size_t from, Ipv4Addr target_ip) {
    const Device& f = dev(from);
    send_at(t, from, build_arp_frame(f.mac, MacAddr::broadcast(), ArpOp::Request, f.mac, f.ip, {}, target_ip));
  }

  void arp_reply(TimePoint t, std::size_t from, std::size_t to) {
    const Device& f = dev(from);
    const Device& r = dev(to);
    send_at(t, from, build_arp_frame(f.mac, r.mac, ArpOp::Reply, f.mac, f.ip, r.mac, r.ip));
  }

  Bytes tcp_frame(std::size_t from, std::size_t to, const TcpConn& c, bool from_client, std::uint8_t flags,
                  ByteView payload) {
    const Device& f = dev(from);
    const Device& r = dev(to);
    TcpSegment seg;
    seg.src_ip = f.ip;
    seg.dst_ip = r.ip;
    seg.src_port = from_client ? c.client_port : 502;
    seg.dst_port = from_client ? 502 : c.client_port;
    seg.seq = from_client ? c.client_seq : c.server_seq;
    seg.ack = from_client ? c.server_seq : c.client_seq;
    seg.flags = flags;
    seg.payload = payload;
    return build_tcp_frame(f.mac, r.mac, seg, next_ident(from));
  }

  // MBAP header + PDU. Function codes: 0x02 read discrete inputs,
  // 0x03 read holding registers, 0x05 write single coil.
  static Bytes modbus_request(std::uint16_t tid, std::uint8_t fc, std::uint16_t addr, std::uint16_t value) {
    Bytes b;
    put_be16(b, tid);
    put_be16(b, 0);
    put_be16(b, 6);
    b.push_back(1);
    b.push_back(fc);
    put_be16(b, addr);
    put_be16(b, value);
    return b;
  }

  static Bytes modbus_response(std::uint16_t tid, std::uint8_t fc, std::size_t data_len) {
    Bytes b;
    put_be16(b, tid);
    put_be16(b, 0);
    if (fc == 0x05) {
      put_be16(b, 6);
      b.push_back(1);
      b.push_back(fc);
      put_be16(b, 0);
      put_be16(b, 0xff00);
      return b;
    }
    put_be16(b, static_cast<std::uint16_t>(3 + data_len));
    b.push_back(1);
    b.push_back(fc);
    b.push_back(static_cast<std::uint8_t>(data_len));
    b.insert(b.end(), data_len, 0);
    return b;
  }

  std::uint16_t ephemeral_port(std::size_t client, std::size_t server) {
    const std::size_t c = client == kAttacker ? 60 : client;
    return static_cast<std::uint16_t>(49152 + (c * 64 + server) % 16000 + 1000 * reconnects_[{client, server}]++);
  }

  /// Three-way handshake starting at t; returns the time the client's ACK is sent.
  TimePoint handshake(TimePoint t, TcpConn& c) {
    send_at(t, c.client, tcp_frame(c.client, c.server, c, true, tcpflag::syn, {}));
    ++c.client_seq;
    const TimePoint t2 = t + Duration{200};
    send_at(t2, c.server, tcp_frame(c.server, c.client, c, false, tcpflag::syn | tcpflag::ack, {}));
    ++c.server_seq;
    const TimePoint t3 = t2 + Duration{100};
    send_at(t3, c.client, tcp_frame(c.client, c.server, c, true, tcpflag::ack, {}));
    return t3;
  }

  void teardown(TimePoint t, TcpConn& c) {
    send_at(t, c.client, tcp_frame(c.client, c.server, c, true, tcpflag::fin | tcpflag::ack, {}));
    ++c.client_seq;
    send_at(t + Duration{200}, c.server, tcp_frame(c.server, c.client, c, false, tcpflag::fin | tcpflag::ack, {}));
    ++c.server_seq;
    send_at(t + Duration{300}, c.client, tcp_frame(c.client, c.server, c, true, tcpflag::ack, {}));
  }

  /// One request/response exchange; the response is omitted when the
  /// server is gone. Returns the response time.
  TimePoint exchange(TimePoint t, TcpConn& c, Duration response_delay) {
    const std::uint8_t fc = c.write ? 0x05 : (dev(c.server).role == Role::Plc ? 0x03 : 0x02);
    const Bytes req = modbus_request(++c.tid, fc, 0, c.write ? 0xff00 : 8);
    send_at(t, c.client, tcp_frame(c.client, c.server, c, true, tcpflag::psh | tcpflag::ack, req));
    c.client_seq += static_cast<std::uint32_t>(req.size());
    const TimePoint tr = t + response_delay;
    if (c.server != kAttacker && removed(c.server, tr)) return tr;
    const Bytes rsp = modbus_response(c.tid, fc, fc == 0x03 ? 16 : 1);
    send_at(tr, c.server, tcp_frame(c.server, c.client, c, false, tcpflag::psh | tcpflag::ack, rsp));
    c.server_seq += static_cast<std::uint32_t>(rsp.size());
    return tr;
  }

  // ----- benign processes ---------------------------------------------------

  void schedule_benign() {
    const std::size_t plc = *topo_.plc();
    std::size_t order = 0;
    for (std::size_t i = 0; i < topo_.devices.size(); ++i) {
      const Device& d = topo_.devices[i];
      if (d.is_edge()) {
        start_polling(plc, i, prof_.poll_period, d.role == Role::Actor, Duration{std::chrono::milliseconds(7) * order});
        start_keepalive(i);
        ++order;
      } else if (d.role == Role::Hmi) {
        start_polling(i, plc, prof_.hmi_poll_period, false, std::chrono::milliseconds(3));
      } else if (d.role == Role::Cloud) {
        start_polling(i, plc, prof_.scada_poll_period, false, std::chrono::milliseconds(5));
      }
    }
  }

  // Client resolves the server, connects once, then polls on a fixed
  // schedule with uniform jitter. A silent server gets retransmissions
  // every plc_timeout.
  void start_polling(std::size_t client, std::size_t server, Duration period, bool write, Duration offset) {
    auto conn = std::make_shared<TcpConn>();
    conn->client = client;
    conn->server = server;
    conn->write = write;
    conn->client_port = ephemeral_port(client, server);
    conn->client_seq = static_cast<std::uint32_t>(0x10000000u + client * 0x01000000u);
    conn->server_seq = static_cast<std::uint32_t>(0x80000000u + server * 0x01000000u);
    conns_[{client, server}] = conn;
    auto rng = std::make_shared<Rng>(seed_, 1 + client, server);
    auto arp_rng = std::make_shared<Rng>(seed_, 100 + client, server);

    const TimePoint t0 = at(offset);
    const TimePoint resolved = resolve(t0, client, server, arp_rng);
    const TimePoint ready = handshake(resolved + Duration{100}, *conn);
    const TimePoint first = ready + period;
    schedule(first, [this, conn, rng, period, first] { poll(conn, rng, period, first, 0); });
  }

  void poll(const std::shared_ptr<TcpConn>& c, const std::shared_ptr<Rng>& rng, Duration period, TimePoint base,
            std::uint64_t k) {
    const Duration jit = Duration{static_cast<std::int64_t>(static_cast<double>(period.count()) * prof_.jitter)};
    const TimePoint nominal = base + period * static_cast<std::int64_t>(k);
    const TimePoint t = nominal + (jit.count() > 0 ? rng->uniform(-jit, jit) : Duration{});
    const Duration delay = rng->uniform(prof_.response_delay_min, prof_.response_delay_max);
    if (removed(c->server, t)) {
      // Unanswered poll: retransmit until the horizon.
      schedule(t, [this, c, t] { retransmit(c, t); });
      return;
    }
    schedule(t, [this, c, t, delay] { exchange(t, *c, delay); });
    // Evaluate the next poll no later than its earliest jittered send time.
    schedule(nominal + period - jit, [this, c, rng, period, base, k] { poll(c, rng, period, base, k + 1); });
  }

  void retransmit(const std::shared_ptr<TcpConn>& c, TimePoint t) {
    const Bytes req = modbus_request(c->tid, 0x02, 0, 8);
    emit(t, c->client, tcp_frame(c->client, c->server, *c, true, tcpflag::psh | tcpflag::ack, req));
    const TimePoint next = t + prof_.plc_timeout;
    schedule(next, [this, c, next] { retransmit(c, next); });
  }

  // Initial resolution at t plus periodic cache expiry. Returns the time
  // the first reply arrives.
  TimePoint resolve(TimePoint t, std::size_t requester, std::size_t target, const std::shared_ptr<Rng>& rng) {
    const Duration reply_delay = rng->uniform(Duration{200}, Duration{1000});
    arp_request(t, requester, dev(target).ip);
    arp_reply(t + reply_delay, target, requester);
    const TimePoint next = t + reply_delay + rng->uniform(prof_.arp_expiry_min, prof_.arp_expiry_max);
    schedule(next, [this, requester, target, rng, next] { arp_expire(requester, target, rng, next); });
    return t + reply_delay;
  }

  void arp_expire(std::size_t requester, std::size_t target, const std::shared_ptr<Rng>& rng, TimePoint t) {
    if (removed(requester, t)) return;
    if (removed(target, t)) {
      // Unresolved: re-request once per second.
      arp_request(t, requester, dev(target).ip);
      const TimePoint next = t + std::chrono::seconds(1);
      schedule(next, [this, requester, target, rng, next] { arp_expire(requester, target, rng, next); });
      return;
    }
    resolve(t, requester, target, rng);
  }

  void start_keepalive(std::size_t node) {
    auto rng = std::make_shared<Rng>(seed_, 200 + node, 0);
    const TimePoint first = at(rng->uniform(Duration{0}, prof_.keepalive_period));
    schedule(first, [this, node, rng, first] { keepalive(node, rng, first, 0); });
  }

  void keepalive(std::size_t node, const std::shared_ptr<Rng>& rng, TimePoint base, std::uint64_t k) {
    const Duration kj = prof_.keepalive_jitter;
    const TimePoint nominal = base + prof_.keepalive_period * static_cast<std::int64_t>(k);
    const TimePoint t = nominal + (kj.count() > 0 ? rng->uniform(Duration{0}, kj) : Duration{});
    if (removed(node, t)) return;
    schedule(nominal + prof_.keepalive_period, [this, node, rng, base, k] { keepalive(node, rng, base, k + 1); });
    schedule(t, [this, node, t] {
      if (keepalive_starved(node, t)) return;
      StatusMessage m = status_ ? (*status_)(node, t) : StatusMessage{};
      m.node_id = topo_.devices[node].node_id;
      m.msg_time_ms = std::max(to_epoch_ms(t), last_ka_time_[node] + 1);
      last_ka_time_[node] = m.msg_time_ms;
      const StatusWire w = encode(m, prof_.psk);
      emit(t, node, status_frame(node, dev(node).ip, dev(node).mac, w));
    });
  }

  Bytes status_frame(std::size_t from, Ipv4Addr src_ip, const MacAddr& src_mac, ByteView payload) {
    return build_udp_frame(src_mac, MacAddr::broadcast(),
                           {src_ip, topo_.broadcast_ip, prof_.announce_port, prof_.announce_port, payload},
                           next_ident(from));
  }

  // ----- attacks -------------------------------------------------------------

  void schedule_attack(std::size_t idx) {
    const AttackScenario& s = scen_[idx];
    const std::size_t target = *topo_.index_of(s.target);
    const TimePoint start = at(s.start);
    switch (s.kind) {
      case AttackKind::NodeRemoved:
      case AttackKind::PassiveSniff:
        break;  // removal is a predicate on emission; passive sniffing emits nothing
      case AttackKind::ActiveSniff:
        schedule(start, [this, idx, target, start] { poison(idx, target, start); });
        break;
      case AttackKind::Spoof:
        schedule(start, [this, idx, target, start] { spoof(idx, target, start); });
        break;
      case AttackKind::Inject:
        schedule(start, [this, target, start] { inject(kAttacker, target, start); });
        break;
      case AttackKind::DosFlood:
        schedule(start, [this, idx, target, start] { flood(idx, target, start, 0); });
        break;
      case AttackKind::LearningAttack:
        schedule(start, [this, idx, target, start] { rogue_poller(idx, target, start); });
        break;
      case AttackKind::CaptureNode: {
        std::size_t peer = 0;
        if (!s.peer.empty()) {
          peer = *topo_.index_of(s.peer);
        } else {
          const auto edges = topo_.edge_nodes();
          auto it = std::find(edges.begin(), edges.end(), target);
          peer = (it == edges.end() || std::next(it) == edges.end()) ? edges.front() : *std::next(it);
        }
        schedule(start, [this, idx, target, peer, start] { captured(idx, target, peer, start); });
        break;
      }
    }
  }

  // Gratuitous ARP replies binding the target's IP to the attacker, 1 Hz.
  void poison(std::size_t idx, std::size_t target, TimePoint t) {
    if (!active(scen_[idx], t)) return;
    const Device& a = topo_.attacker;
    const Ipv4Addr ip = dev(target).ip;
    emit(t, kAttacker, build_arp_frame(a.mac, MacAddr::broadcast(), ArpOp::Reply, a.mac, ip, MacAddr::broadcast(), ip));
    const TimePoint next = t + std::chrono::seconds(1);
    schedule(next, [this, idx, target, next] { poison(idx, target, next); });
  }

  // Forged keep-alives claiming the target's IP from the attacker's MAC.
  // Without the PSK the tag is garbage.
  void spoof(std::size_t idx, std::size_t target, TimePoint t) {
    if (!active(scen_[idx], t)) return;
    StatusWire w{};
    std::copy(kStatusMagic.begin(), kStatusMagic.end(), w.begin());
    w[4] = kStatusVersion;
    w[5] = static_cast<std::uint8_t>(dev(target).node_id >> 8);
    w[6] = static_cast<std::uint8_t>(dev(target).node_id);
    const std::uint64_t ms = to_epoch_ms(t);
    for (int i = 0; i < 8; ++i) w[7 + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(ms >> (56 - 8 * i));
    w[15] = statusflag::active;
    emit(t, kAttacker, status_frame(kAttacker, dev(target).ip, topo_.attacker.mac, w));
    const TimePoint next = t + prof_.keepalive_period;
    schedule(next, [this, idx, target, next] { spoof(idx, target, next); });
  }

  // New connection issuing a write command: resolve, connect, write, close.
  void inject(std::size_t client, std::size_t server, TimePoint t) {
    TcpConn c;
    c.client = client;
    c.server = server;
    c.write = true;
    c.client_port = ephemeral_port(client, server);
    c.client_seq = 0x0badc0de;
    c.server_seq = 0x5eed0000;
    arp_request(t, client, dev(server).ip);
    arp_reply(t + Duration{400}, server, client);
    const TimePoint ready = handshake(t + Duration{600}, c);
    const TimePoint done = exchange(ready + std::chrono::milliseconds(2), c, std::chrono::milliseconds(2));
    teardown(done + std::chrono::milliseconds(5), c);
  }

  // Modbus polls impersonating the PLC's live connection to the target.
  void flood(std::size_t idx, std::size_t target, TimePoint start, std::uint64_t k) {
    const AttackScenario& s = scen_[idx];
    const Duration gap{static_cast<std::int64_t>(1e6 / s.rate)};
    const TimePoint t = start + gap * static_cast<std::int64_t>(k);
    if (!active(s, t) || t > horizon()) return;
    const std::size_t plc = *topo_.plc();
    auto it = conns_.find({plc, target});
    if (it == conns_.end()) return;
    const TcpConn& c = *it->second;
    const Device& a = topo_.attacker;
    TcpSegment seg;
    seg.src_ip = dev(plc).ip;
    seg.dst_ip = dev(target).ip;
    seg.src_port = c.client_port;
    seg.dst_port = 502;
    seg.seq = c.client_seq;
    seg.ack = c.server_seq;
    seg.flags = tcpflag::psh | tcpflag::ack;
    const Bytes req = modbus_request(static_cast<std::uint16_t>(k), 0x02, 0, 8);
    seg.payload = req;
    emit(t, kAttacker, build_tcp_frame(a.mac, dev(target).mac, seg, next_ident(kAttacker)));
    const TimePoint next = start + gap * static_cast<std::int64_t>(k + 1);
    schedule(next, [this, idx, target, start, k] { flood(idx, target, start, k + 1); });
  }

  // Attacker host polling the target at a steady period from `start`.
  void rogue_poller(std::size_t idx, std::size_t target, TimePoint start) {
    auto c = std::make_shared<TcpConn>();
    c->client = kAttacker;
    c->server = target;
    c->client_port = ephemeral_port(kAttacker, target);
    c->client_seq = 0x0badf00d;
    c->server_seq = 0x5eed1000;
    arp_request(start, kAttacker, dev(target).ip);
    arp_reply(start + Duration{400}, target, kAttacker);
    const TimePoint ready = handshake(start + Duration{600}, *c);
    const TimePoint first = ready + scen_[idx].period;
    schedule(first, [this, idx, c, first] { rogue_poll(idx, c, first); });
  }

  void rogue_poll(std::size_t idx, const std::shared_ptr<TcpConn>& c, TimePoint t) {
    if (!active(scen_[idx], t)) return;
    exchange(t, *c, std::chrono::milliseconds(2));
    const TimePoint next = t + scen_[idx].period;
    schedule(next, [this, idx, c, next] { rogue_poll(idx, c, next); });
  }

  // A captured node opening write connections to a peer it never talked to.
  void captured(std::size_t idx, std::size_t node, std::size_t peer, TimePoint t) {
    if (!active(scen_[idx], t) || removed(node, t)) return;
    inject(node, peer, t);
    const TimePoint next = t + scen_[idx].period;
    schedule(next, [this, idx, node, peer, next] { captured(idx, node, peer, next); });
  }

  Topology topo_;
  TrafficProfile prof_;
  std::vector<AttackScenario> scen_;
  Duration duration_;
  std::uint64_t seed_;

  const FrameSink* sink_ = nullptr;
  const StatusProvider* status_ = nullptr;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  std::vector<std::uint16_t> ident_;
  std::vector<std::uint64_t> last_ka_time_;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<TcpConn>> conns_;
  std::map<std::pair<std::size_t, std::size_t>, std::uint16_t> reconnects_;
};

inline FrameTrace run(const Topology& topo, const TrafficProfile& profile, const std::vector<AttackScenario>& scenarios,
                      Duration duration, std::uint64_t seed) {
  return Simulator(topo, profile, scenarios, duration, seed).run_trace();
}

}  // namespace eids::sim
