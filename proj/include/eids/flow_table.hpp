#pragma once

// Connection categorization and metadata consistency rules.
//
// A flow is identified with the client's ephemeral port erased: TCP
// reconnects from a fresh source port map to the same FlowKey. ARP traffic
// is keyed by the announcing peer. IP/MAC bindings learned from ARP and
// from IPv4 source addresses are frozen once learning ends.

#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "eids/model_format.hpp"
#include "eids/packet.hpp"

namespace eids {

enum class Mode : std::uint8_t { Learning, Active };

enum class FlowKind : std::uint8_t { Tcp, Udp, Arp, OtherEth };

inline std::string_view to_string(FlowKind k) {
  switch (k) {
    case FlowKind::Tcp: return "tcp";
    case FlowKind::Udp: return "udp";
    case FlowKind::Arp: return "arp";
    case FlowKind::OtherEth: return "eth";
  }
  return "?";
}

inline std::optional<FlowKind> parse_flow_kind(std::string_view s) {
  if (s == "tcp") return FlowKind::Tcp;
  if (s == "udp") return FlowKind::Udp;
  if (s == "arp") return FlowKind::Arp;
  if (s == "eth") return FlowKind::OtherEth;
  return std::nullopt;
}

/// For OtherEth keys service_port holds the IP protocol number (IPv4) or
/// the ethertype (non-IPv4).
struct FlowKey {
  FlowKind kind = FlowKind::OtherEth;
  Ipv4Addr peer_ip;
  Ipv4Addr local_ip;
  std::uint16_t service_port = 0;
  MacAddr peer_mac;  // zero for Tcp/Udp

  std::string render() const {
    std::string s(to_string(kind));
    s += ' ';
    switch (kind) {
      case FlowKind::Tcp:
      case FlowKind::Udp:
        s += peer_ip.to_string() + '>' + local_ip.to_string() + ':' + std::to_string(service_port);
        break;
      case FlowKind::Arp:
        s += peer_ip.to_string() + '/' + peer_mac.to_string() + '>' + local_ip.to_string();
        break;
      case FlowKind::OtherEth:
        s += peer_mac.to_string() + '/' + peer_ip.to_string() + '>' + local_ip.to_string() + '#' +
             std::to_string(service_port);
        break;
    }
    return s;
  }

  friend constexpr auto operator<=>(const FlowKey&, const FlowKey&) = default;
};

/// Forward: toward the service port (TCP/UDP) or an ARP request.
/// Reverse: from the service port or an ARP reply.
enum class Leg : std::uint8_t { Forward, Reverse };

inline std::string_view to_string(Leg l) { return l == Leg::Forward ? "fwd" : "rev"; }

struct ClassifiedPacket {
  FlowKey key;
  Leg leg = Leg::Forward;
};

struct Endpoint {
  Ipv4Addr ip;
  std::uint16_t port = 0;
  friend constexpr auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

struct ArpBinding {
  Ipv4Addr ip;
  MacAddr mac;
  TimePoint last_seen{};
  friend bool operator==(const ArpBinding&, const ArpBinding&) = default;
};

enum class FlowVerdict : std::uint8_t { Known, NewFlow, BindingConflict, L2L3Mismatch };

inline std::string_view to_string(FlowVerdict v) {
  switch (v) {
    case FlowVerdict::Known: return "Known";
    case FlowVerdict::NewFlow: return "NewFlow";
    case FlowVerdict::BindingConflict: return "BindingConflict";
    case FlowVerdict::L2L3Mismatch: return "L2L3Mismatch";
  }
  return "?";
}

/// Set of intrusive verdicts raised by one packet; empty means Known.
class FlowVerdicts {
 public:
  void add(FlowVerdict v) {
    if (v != FlowVerdict::Known) bits_ |= bit(v);
  }
  bool contains(FlowVerdict v) const { return v == FlowVerdict::Known ? bits_ == 0 : (bits_ & bit(v)) != 0; }
  bool known() const { return bits_ == 0; }

  /// Highest-priority verdict: NewFlow, BindingConflict, L2L3Mismatch, Known.
  FlowVerdict primary() const {
    for (auto v : kOrder)
      if (contains(v)) return v;
    return FlowVerdict::Known;
  }

  std::vector<FlowVerdict> list() const {
    std::vector<FlowVerdict> out;
    for (auto v : kOrder)
      if (contains(v)) out.push_back(v);
    return out;
  }

  friend bool operator==(const FlowVerdicts&, const FlowVerdicts&) = default;

 private:
  static constexpr FlowVerdict kOrder[] = {FlowVerdict::NewFlow, FlowVerdict::BindingConflict,
                                           FlowVerdict::L2L3Mismatch};
  static constexpr std::uint8_t bit(FlowVerdict v) { return static_cast<std::uint8_t>(1u << static_cast<int>(v)); }
  std::uint8_t bits_ = 0;
};

inline bool is_service_port_hint(std::uint16_t port) { return port < 1024 || port == 502; }

namespace detail {

// True when the packet's destination endpoint is the server side.
inline bool dst_is_server(const Ipv4Meta& ip, const TransportMeta& t, const std::set<Endpoint>* servers) {
  if (servers) {
    if (servers->contains({ip.dst_ip, t.dst_port})) return true;
    if (servers->contains({ip.src_ip, t.src_port})) return false;
  }
  if (t.has_flag(tcpflag::syn)) return !t.has_flag(tcpflag::ack);
  const bool dst_hint = is_service_port_hint(t.dst_port);
  const bool src_hint = is_service_port_hint(t.src_port);
  if (dst_hint != src_hint) return dst_hint;
  // No usable hint: the lower port is taken as the service port.
  return t.dst_port <= t.src_port;
}

// (peer, local) for a packet between src and dst, given which side serves.
inline std::pair<Ipv4Addr, Ipv4Addr> orient(Ipv4Addr src, Ipv4Addr dst, bool dst_serves, bool dst_group,
                                             Ipv4Addr local) {
  if (!local.is_unspecified()) {
    if (dst == local) return {src, local};
    if (src == local) return {dst, local};
    if (dst_group) return {src, local};
  }
  return dst_serves ? std::pair{src, dst} : std::pair{dst, src};
}

inline ClassifiedPacket classify(const PacketMeta& m, Ipv4Addr local, const std::set<Endpoint>* servers,
                                 const std::map<Ipv4Addr, ArpBinding>* bindings) {
  ClassifiedPacket c;
  FlowKey& k = c.key;
  if (m.arp) {
    const ArpMeta& a = *m.arp;
    k.kind = FlowKind::Arp;
    c.leg = a.op == ArpOp::Request ? Leg::Forward : Leg::Reverse;
    const bool involves_local = !local.is_unspecified() && a.sender_ip != a.target_ip &&
                                (a.sender_ip == local || a.target_ip == local);
    if (involves_local && a.sender_ip == local) {
      k.peer_ip = a.target_ip;
      k.peer_mac = a.target_mac;
      if (k.peer_mac.is_zero() && bindings) {
        if (auto it = bindings->find(a.target_ip); it != bindings->end()) k.peer_mac = it->second.mac;
      }
      k.local_ip = local;
    } else {
      k.peer_ip = a.sender_ip;
      k.peer_mac = a.sender_mac;
      k.local_ip = involves_local ? local : a.target_ip;
    }
    return c;
  }
  if (m.l3) {
    const Ipv4Meta& ip = *m.l3;
    if (const TransportMeta* t = m.l4()) {
      k.kind = ip.protocol == ipproto::tcp ? FlowKind::Tcp : FlowKind::Udp;
      const bool dst_serves = dst_is_server(ip, *t, servers);
      k.service_port = dst_serves ? t->dst_port : t->src_port;
      std::tie(k.peer_ip, k.local_ip) = orient(ip.src_ip, ip.dst_ip, dst_serves, m.dst_mac.is_group(), local);
      c.leg = dst_serves ? Leg::Forward : Leg::Reverse;
      return c;
    }
    k.kind = FlowKind::OtherEth;
    k.service_port = ip.protocol;
    const bool peer_is_src = local.is_unspecified() ? true : ip.src_ip != local;
    k.peer_ip = peer_is_src ? ip.src_ip : ip.dst_ip;
    k.local_ip = peer_is_src ? ip.dst_ip : ip.src_ip;
    k.peer_mac = peer_is_src ? m.src_mac : m.dst_mac;
    c.leg = peer_is_src ? Leg::Forward : Leg::Reverse;
    return c;
  }
  k.kind = FlowKind::OtherEth;
  k.service_port = m.ethertype;
  k.peer_mac = m.direction == Direction::Tx ? m.dst_mac : m.src_mac;
  return c;
}

}  // namespace detail

/// Stateless key derivation: SYN direction, then well-known port hints,
/// then the lower port. Use FlowTable::classify to honor orientations
/// learned from observed handshakes.
inline FlowKey derive_key(const PacketMeta& meta, Ipv4Addr local_ip) {
  return detail::classify(meta, local_ip, nullptr, nullptr).key;
}

// kind, peer_ip, local_ip, service_port, peer_mac (tab-separated)
inline std::string model_key_fields(const FlowKey& k) {
  std::string s(to_string(k.kind));
  s += '\t' + k.peer_ip.to_string() + '\t' + k.local_ip.to_string() + '\t' + std::to_string(k.service_port) + '\t' +
       k.peer_mac.to_string();
  return s;
}

inline FlowKey parse_model_key(std::string_view line, const std::vector<std::string_view>& f, std::size_t at) {
  if (f.size() < at + 5) malformed(line, "missing flow key fields");
  const auto kind = parse_flow_kind(f[at]);
  if (!kind) malformed(line, "unknown flow kind");
  return FlowKey{*kind, parse_model_ip(f[at + 1], line), parse_model_ip(f[at + 2], line),
                 parse_model_int<std::uint16_t>(f[at + 3], line), parse_model_mac(f[at + 4], line)};
}

struct FlowTableSnapshot {
  std::vector<FlowKey> flows;
  std::vector<Endpoint> servers;
  std::vector<ArpBinding> bindings;
  friend bool operator==(const FlowTableSnapshot&, const FlowTableSnapshot&) = default;
};

class FlowTable {
 public:
  explicit FlowTable(Ipv4Addr local_ip = {}) : local_ip_(local_ip) {}

  Ipv4Addr local_ip() const { return local_ip_; }
  std::size_t flow_count() const { return flows_.size(); }
  bool contains(const FlowKey& k) const { return flows_.contains(k); }

  std::optional<MacAddr> binding_for(Ipv4Addr ip) const {
    if (auto it = bindings_.find(ip); it != bindings_.end()) return it->second.mac;
    return std::nullopt;
  }

  ClassifiedPacket classify(const PacketMeta& meta) const {
    return detail::classify(meta, local_ip_, &servers_, &bindings_);
  }

  FlowVerdicts observe(const PacketMeta& meta, Mode mode) { return observe(meta, classify(meta), mode); }

  /// Learning inserts and never flags. Active reports unseen keys and
  /// address contradictions without modifying the learned state.
  FlowVerdicts observe(const PacketMeta& meta, const ClassifiedPacket& c, Mode mode) {
    FlowVerdicts v;
    if (mode == Mode::Learning) {
      learn(meta, c);
      return v;
    }
    if (!flows_.contains(c.key)) v.add(FlowVerdict::NewFlow);
    if (meta.arp) {
      const ArpMeta& a = *meta.arp;
      if (!a.sender_ip.is_unspecified()) {
        if (auto it = bindings_.find(a.sender_ip); it != bindings_.end()) {
          if (it->second.mac != a.sender_mac)
            v.add(FlowVerdict::BindingConflict);
          else
            it->second.last_seen = meta.timestamp;
        }
      }
      if (meta.src_mac != a.sender_mac) v.add(FlowVerdict::L2L3Mismatch);
    } else if (meta.l3) {
      if (auto it = bindings_.find(meta.l3->src_ip); it != bindings_.end()) {
        if (it->second.mac != meta.src_mac)
          v.add(FlowVerdict::L2L3Mismatch);
        else
          it->second.last_seen = meta.timestamp;
      }
      if (!meta.dst_mac.is_group()) {
        if (auto it = bindings_.find(meta.l3->dst_ip); it != bindings_.end() && it->second.mac != meta.dst_mac)
          v.add(FlowVerdict::L2L3Mismatch);
      }
    }
    return v;
  }

  /// Deterministic copy: flows in key order, servers and bindings by address.
  FlowTableSnapshot export_flows() const {
    FlowTableSnapshot s;
    s.flows.assign(flows_.begin(), flows_.end());
    s.servers.assign(servers_.begin(), servers_.end());
    for (const auto& [ip, b] : bindings_) s.bindings.push_back(b);
    return s;
  }

  void import_flows(const FlowTableSnapshot& s) {
    flows_ = {s.flows.begin(), s.flows.end()};
    servers_ = {s.servers.begin(), s.servers.end()};
    bindings_.clear();
    for (const auto& b : s.bindings) bindings_.emplace(b.ip, b);
  }

  void append_model_lines(std::string& out) const {
    for (const auto& k : flows_) out += "FLOW\t" + model_key_fields(k) + '\n';
    for (const auto& e : servers_) out += "SERVER\t" + e.ip.to_string() + '\t' + std::to_string(e.port) + '\n';
    for (const auto& [ip, b] : bindings_) out += "ARP\t" + ip.to_string() + '\t' + b.mac.to_string() + '\n';
  }

  /// Consumes FLOW/SERVER/ARP records; false for any other record tag.
  bool import_model_line(std::string_view line, const std::vector<std::string_view>& f) {
    if (f[0] == "FLOW") {
      if (f.size() != 6) malformed(line, "FLOW expects 5 fields");
      flows_.insert(parse_model_key(line, f, 1));
      return true;
    }
    if (f[0] == "SERVER") {
      if (f.size() != 3) malformed(line, "SERVER expects 2 fields");
      servers_.insert({parse_model_ip(f[1], line), parse_model_int<std::uint16_t>(f[2], line)});
      return true;
    }
    if (f[0] == "ARP") {
      if (f.size() != 3) malformed(line, "ARP expects 2 fields");
      const Ipv4Addr ip = parse_model_ip(f[1], line);
      bindings_.insert_or_assign(ip, ArpBinding{ip, parse_model_mac(f[2], line), {}});
      return true;
    }
    return false;
  }

  void clear() {
    flows_.clear();
    servers_.clear();
    bindings_.clear();
  }

 private:
  void learn(const PacketMeta& meta, const ClassifiedPacket& c) {
    flows_.insert(c.key);
    if (meta.arp) {
      const ArpMeta& a = *meta.arp;
      if (!a.sender_ip.is_unspecified()) bind(a.sender_ip, a.sender_mac, meta.timestamp);
      return;
    }
    if (!meta.l3) return;
    const Ipv4Meta& ip = *meta.l3;
    if (!meta.src_mac.is_group() && !ip.src_ip.is_unspecified()) bind(ip.src_ip, meta.src_mac, meta.timestamp);
    if (const TransportMeta* t = meta.l4(); t && t->has_flag(tcpflag::syn)) {
      if (t->has_flag(tcpflag::ack))
        servers_.insert({ip.src_ip, t->src_port});
      else
        servers_.insert({ip.dst_ip, t->dst_port});
    }
  }

  // First binding wins during learning.
  void bind(Ipv4Addr ip, const MacAddr& mac, TimePoint at) {
    auto [it, inserted] = bindings_.try_emplace(ip, ArpBinding{ip, mac, at});
    if (!inserted && it->second.mac == mac) it->second.last_seen = at;
  }

  Ipv4Addr local_ip_;
  std::set<FlowKey> flows_;
  std::set<Endpoint> servers_;
  std::map<Ipv4Addr, ArpBinding> bindings_;
};

}  // namespace eids
