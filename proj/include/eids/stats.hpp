#pragma once

// Interarrival statistics over captured or simulated traffic.

#include <sstream>

#include "eids/flow_table.hpp"

namespace eids {

/// Conjunction of tcpdump-flavoured primitives:
///   tcp | udp | arp | port N | host IP | src IP | dst IP | request | reply
/// An empty expression matches every parsed frame.
class FlowFilter {
 public:
  static FlowFilter parse(std::string_view expr) {
    FlowFilter f;
    std::istringstream in{std::string(expr)};
    std::string tok;
    auto operand = [&](const char* what) {
      std::string v;
      if (!(in >> v)) throw std::invalid_argument(std::string("filter: '") + what + "' needs an operand");
      return v;
    };
    auto ip = [&](const char* what) {
      const auto v = operand(what);
      const auto a = Ipv4Addr::parse(v);
      if (!a) throw std::invalid_argument("filter: bad address " + v);
      return *a;
    };
    while (in >> tok) {
      if (tok == "and" || tok == "&&") continue;
      if (tok == "tcp" || tok == "udp" || tok == "arp") {
        f.kind_ = parse_flow_kind(tok);
      } else if (tok == "port") {
        const auto v = operand("port");
        unsigned long p = 0;
        try {
          std::size_t used = 0;
          p = std::stoul(v, &used);
          if (used != v.size() || p > 65535) throw std::out_of_range(v);
        } catch (const std::exception&) {
          throw std::invalid_argument("filter: bad port " + v);
        }
        f.port_ = static_cast<std::uint16_t>(p);
      } else if (tok == "host") {
        f.host_ = ip("host");
      } else if (tok == "src") {
        f.src_ = ip("src");
      } else if (tok == "dst") {
        f.dst_ = ip("dst");
      } else if (tok == "request") {
        f.arp_op_ = ArpOp::Request;
      } else if (tok == "reply") {
        f.arp_op_ = ArpOp::Reply;
      } else {
        throw std::invalid_argument("filter: unknown token " + tok);
      }
    }
    return f;
  }

  bool matches(const PacketMeta& m) const {
    if (kind_) {
      const bool tcp = m.l4() && m.l3->protocol == ipproto::tcp;
      const bool udp = m.l4() && m.l3->protocol == ipproto::udp;
      if ((*kind_ == FlowKind::Tcp && !tcp) || (*kind_ == FlowKind::Udp && !udp) || (*kind_ == FlowKind::Arp && !m.arp))
        return false;
    }
    if (arp_op_ && (!m.arp || m.arp->op != *arp_op_)) return false;
    if (port_) {
      const TransportMeta* t = m.l4();
      if (!t || (t->src_port != *port_ && t->dst_port != *port_)) return false;
    }
    Ipv4Addr s, d;
    if (m.arp) {
      s = m.arp->sender_ip;
      d = m.arp->target_ip;
    } else if (m.l3) {
      s = m.l3->src_ip;
      d = m.l3->dst_ip;
    } else if (host_ || src_ || dst_) {
      return false;
    }
    if (host_ && s != *host_ && d != *host_) return false;
    if (src_ && s != *src_) return false;
    if (dst_ && d != *dst_) return false;
    return true;
  }

 private:
  std::optional<FlowKind> kind_;
  std::optional<std::uint16_t> port_;
  std::optional<Ipv4Addr> host_, src_, dst_;
  std::optional<ArpOp> arp_op_;
};

struct TimedFrame {
  TimePoint at{};
  ByteView bytes;
};

struct InterarrivalRow {
  std::string flow;
  TimePoint at{};
  Duration interarrival{};
};

// ARP is grouped by the unordered address pair so requests and replies
// between two hosts form one series; TCP/UDP by the port-erased key.
inline std::string stats_label(const PacketMeta& m, const ClassifiedPacket& c, bool per_leg) {
  std::string s;
  if (m.arp) {
    auto a = m.arp->sender_ip, b = m.arp->target_ip;
    if (b < a) std::swap(a, b);
    s = "arp " + a.to_string() + "<->" + b.to_string();
  } else {
    s = c.key.render();
  }
  if (per_leg) s += ' ' + std::string(to_string(c.leg));
  return s;
}

/// Rows in input order; the first packet of each series has no row.
/// Unparseable and out-of-order frames are skipped.
inline std::vector<InterarrivalRow> interarrivals(const std::vector<TimedFrame>& frames, const FlowFilter& filter,
                                                  bool per_leg = false) {
  FlowTable table;  // network-sensor view, learns handshake orientation
  std::map<std::string, TimePoint> last;
  std::vector<InterarrivalRow> rows;
  for (const auto& f : frames) {
    PacketMeta m;
    try {
      m = parse_frame(f.bytes, f.at, Direction::Rx);
    } catch (const ParseError&) {
      continue;
    }
    const ClassifiedPacket c = table.classify(m);
    table.observe(m, c, Mode::Learning);
    if (!filter.matches(m)) continue;
    std::string label = stats_label(m, c, per_leg);
    auto [it, first] = last.try_emplace(label, f.at);
    if (first) continue;
    if (f.at < it->second) continue;
    rows.push_back({std::move(label), f.at, f.at - it->second});
    it->second = f.at;
  }
  return rows;
}

inline void write_stats_csv(std::ostream& out, const std::vector<InterarrivalRow>& rows) {
  out << "flow,timestamp_us,interarrival_us\n";
  for (const auto& r : rows) out << r.flow << ',' << to_micros(r.at) << ',' << r.interarrival.count() << '\n';
}

inline std::string stats_csv(const std::vector<TimedFrame>& frames, const FlowFilter& filter, bool per_leg = false) {
  std::ostringstream out;
  write_stats_csv(out, interarrivals(frames, filter, per_leg));
  return out.str();
}

struct SeriesSummary {
  std::string flow;
  std::uint64_t count = 0;
  double mean_us = 0.0;
  std::int64_t min_us = 0;
  std::int64_t max_us = 0;
};

inline std::vector<SeriesSummary> summarize(const std::vector<InterarrivalRow>& rows) {
  std::map<std::string, std::pair<SeriesSummary, long double>> acc;
  for (const auto& r : rows) {
    auto& [s, sum] = acc[r.flow];
    const auto t = r.interarrival.count();
    if (s.count == 0) {
      s.flow = r.flow;
      s.min_us = s.max_us = t;
    }
    s.min_us = std::min(s.min_us, t);
    s.max_us = std::max(s.max_us, t);
    sum += t;
    ++s.count;
  }
  std::vector<SeriesSummary> out;
  for (auto& [k, v] : acc) {
    v.first.mean_us = static_cast<double>(v.second / static_cast<long double>(v.first.count));
    out.push_back(v.first);
  }
  return out;
}

/// Twice the longest gap between consecutive ARP requests of one
/// (sender, target) pair; nullopt when no pair repeats its request.
inline std::optional<Duration> suggest_learning_duration(const std::vector<TimedFrame>& frames) {
  std::map<std::pair<Ipv4Addr, Ipv4Addr>, TimePoint> last;
  std::optional<Duration> longest;
  for (const auto& f : frames) {
    PacketMeta m;
    try {
      m = parse_frame(f.bytes, f.at, Direction::Rx);
    } catch (const ParseError&) {
      continue;
    }
    if (!m.arp || m.arp->op != ArpOp::Request) continue;
    auto [it, first] = last.try_emplace({m.arp->sender_ip, m.arp->target_ip}, f.at);
    if (!first) {
      const Duration gap = f.at - it->second;
      if (!longest || gap > *longest) longest = gap;
      it->second = f.at;
    }
  }
  if (!longest) return std::nullopt;
  return *longest * 2;
}

}  // namespace eids
