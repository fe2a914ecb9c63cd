#pragma once

// Protocol-independent header metadata: Ethernet II, ARP, IPv4, TCP, UDP.
// Nothing above the transport header is decoded.

#include <algorithm>
#include <optional>

#include "eids/net_types.hpp"

namespace eids {

namespace ethertype {
inline constexpr std::uint16_t ipv4 = 0x0800;
inline constexpr std::uint16_t arp = 0x0806;
inline constexpr std::uint16_t vlan = 0x8100;
inline constexpr std::uint16_t ipv6 = 0x86dd;
}  // namespace ethertype

namespace ipproto {
inline constexpr std::uint8_t tcp = 6;
inline constexpr std::uint8_t udp = 17;
}  // namespace ipproto

namespace tcpflag {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t rst = 0x04;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
}  // namespace tcpflag

inline constexpr std::size_t kEthHeaderLen = 14;

struct TransportMeta {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::optional<std::uint8_t> tcp_flags;  // absent for UDP
  std::uint32_t payload_len = 0;

  bool has_flag(std::uint8_t f) const { return tcp_flags && (*tcp_flags & f) != 0; }
  friend bool operator==(const TransportMeta&, const TransportMeta&) = default;
};

struct Ipv4Meta {
  Ipv4Addr src_ip;
  Ipv4Addr dst_ip;
  std::uint8_t protocol = 0;
  std::optional<TransportMeta> l4;
  friend bool operator==(const Ipv4Meta&, const Ipv4Meta&) = default;
};

enum class ArpOp : std::uint8_t { Request = 1, Reply = 2 };

struct ArpMeta {
  ArpOp op = ArpOp::Request;
  MacAddr sender_mac;
  MacAddr target_mac;
  Ipv4Addr sender_ip;
  Ipv4Addr target_ip;
  friend bool operator==(const ArpMeta&, const ArpMeta&) = default;
};

struct PacketMeta {
  TimePoint timestamp{};
  MacAddr src_mac;
  MacAddr dst_mac;
  std::uint16_t ethertype = 0;
  std::optional<Ipv4Meta> l3;
  std::optional<ArpMeta> arp;
  std::uint32_t frame_len = 0;
  Direction direction = Direction::Rx;

  const TransportMeta* l4() const { return l3 && l3->l4 ? &*l3->l4 : nullptr; }
  friend bool operator==(const PacketMeta&, const PacketMeta&) = default;
};

enum class ParseErrorKind { TruncatedFrame, MalformedArp };

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

namespace detail {

inline void need(ByteView frame, std::size_t end, const char* layer) {
  if (frame.size() < end)
    throw ParseError(ParseErrorKind::TruncatedFrame, std::string("truncated ") + layer + " header");
}

inline ArpMeta parse_arp(ByteView f, std::size_t off) {
  need(f, off + 8, "arp");
  const std::uint16_t htype = load_be16(f, off);
  const std::uint16_t ptype = load_be16(f, off + 2);
  const std::uint8_t hlen = f[off + 4];
  const std::uint8_t plen = f[off + 5];
  const std::uint16_t opcode = load_be16(f, off + 6);
  if (htype != 1 || ptype != ethertype::ipv4 || hlen != 6 || plen != 4)
    throw ParseError(ParseErrorKind::MalformedArp, "arp is not ethernet/ipv4");
  if (opcode != 1 && opcode != 2)
    throw ParseError(ParseErrorKind::MalformedArp, "arp opcode " + std::to_string(opcode));
  need(f, off + 28, "arp");
  ArpMeta a;
  a.op = static_cast<ArpOp>(opcode);
  std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(off + 8), 6, a.sender_mac.octets.begin());
  a.sender_ip = {load_be32(f, off + 14)};
  std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(off + 18), 6, a.target_mac.octets.begin());
  a.target_ip = {load_be32(f, off + 24)};
  return a;
}

inline Ipv4Meta parse_ipv4(ByteView f, std::size_t off) {
  need(f, off + 20, "ipv4");
  const std::uint8_t version = f[off] >> 4;
  const std::size_t ihl = static_cast<std::size_t>(f[off] & 0x0f) * 4;
  if (version != 4 || ihl < 20) throw ParseError(ParseErrorKind::TruncatedFrame, "bad ipv4 header length");
  need(f, off + ihl, "ipv4 options");
  const std::size_t total_len = load_be16(f, off + 2);
  if (total_len < ihl) throw ParseError(ParseErrorKind::TruncatedFrame, "ipv4 total length below header");

  Ipv4Meta ip;
  ip.protocol = f[off + 9];
  ip.src_ip = {load_be32(f, off + 12)};
  ip.dst_ip = {load_be32(f, off + 16)};

  // Non-first fragments carry no transport header.
  const std::uint16_t frag = load_be16(f, off + 6) & 0x1fff;
  if (frag != 0) return ip;

  // Ethernet pads short frames; the IP total length bounds the datagram.
  const std::size_t datagram_end = std::min(off + total_len, f.size());
  const std::size_t l4 = off + ihl;
  if (ip.protocol == ipproto::tcp) {
    need(f, l4 + 20, "tcp");
    const std::size_t doff = static_cast<std::size_t>(f[l4 + 12] >> 4) * 4;
    if (doff < 20) throw ParseError(ParseErrorKind::TruncatedFrame, "bad tcp data offset");
    need(f, l4 + doff, "tcp options");
    TransportMeta t;
    t.src_port = load_be16(f, l4);
    t.dst_port = load_be16(f, l4 + 2);
    t.tcp_flags = static_cast<std::uint8_t>(f[l4 + 13] & 0x3f);
    t.payload_len = static_cast<std::uint32_t>(datagram_end > l4 + doff ? datagram_end - l4 - doff : 0);
    ip.l4 = t;
  } else if (ip.protocol == ipproto::udp) {
    need(f, l4 + 8, "udp");
    TransportMeta t;
    t.src_port = load_be16(f, l4);
    t.dst_port = load_be16(f, l4 + 2);
    t.payload_len = static_cast<std::uint32_t>(datagram_end > l4 + 8 ? datagram_end - l4 - 8 : 0);
    ip.l4 = t;
  }
  return ip;
}

}  // namespace detail

/// Decodes one captured Ethernet II frame. Single 802.1Q tags are skipped;
/// checksums are not validated. Throws ParseError.
inline PacketMeta parse_frame(ByteView frame, TimePoint timestamp, Direction direction) {
  if (frame.size() < kEthHeaderLen)
    throw ParseError(ParseErrorKind::TruncatedFrame, "frame shorter than ethernet header");
  PacketMeta m;
  m.timestamp = timestamp;
  m.direction = direction;
  m.frame_len = static_cast<std::uint32_t>(frame.size());
  std::copy_n(frame.begin(), 6, m.dst_mac.octets.begin());
  std::copy_n(frame.begin() + 6, 6, m.src_mac.octets.begin());

  std::size_t off = 12;
  std::uint16_t type = load_be16(frame, off);
  off += 2;
  if (type == ethertype::vlan) {
    detail::need(frame, off + 4, "802.1q");
    type = load_be16(frame, off + 2);
    off += 4;
  }
  m.ethertype = type;

  if (type == ethertype::arp)
    m.arp = detail::parse_arp(frame, off);
  else if (type == ethertype::ipv4)
    m.l3 = detail::parse_ipv4(frame, off);
  return m;
}

/// UDP payload of an unfragmented IPv4 datagram, or nullopt. Used to hand
/// status broadcasts to the collector; the detector never looks here.
inline std::optional<ByteView> udp_payload(ByteView frame) {
  PacketMeta m;
  try {
    m = parse_frame(frame, {}, Direction::Rx);
  } catch (const ParseError&) {
    return std::nullopt;
  }
  const TransportMeta* t = m.l4();
  if (!t || t->tcp_flags) return std::nullopt;
  const std::size_t ip_off = load_be16(frame, 12) == ethertype::vlan ? 18 : kEthHeaderLen;
  const std::size_t end = std::min<std::size_t>(ip_off + load_be16(frame, ip_off + 2), frame.size());
  return frame.subspan(end - t->payload_len, t->payload_len);
}

}  // namespace eids
