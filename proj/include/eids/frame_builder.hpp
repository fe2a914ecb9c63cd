#pragma once

// Frame synthesis for the simulator and for tests. Produces untagged
// Ethernet II frames padded to the 60-byte minimum.

#include "eids/packet.hpp"

namespace eids {

inline constexpr std::size_t kMinFrameLen = 60;

struct TcpSegment {
  Ipv4Addr src_ip, dst_ip;
  std::uint16_t src_port = 0, dst_port = 0;
  std::uint32_t seq = 0, ack = 0;
  std::uint8_t flags = 0;
  ByteView payload{};
};

struct UdpDatagram {
  Ipv4Addr src_ip, dst_ip;
  std::uint16_t src_port = 0, dst_port = 0;
  ByteView payload{};
};

namespace detail {

inline std::uint32_t ones_sum(ByteView b, std::uint32_t sum = 0) {
  std::size_t i = 0;
  for (; i + 1 < b.size(); i += 2) sum += static_cast<std::uint32_t>(b[i] << 8 | b[i + 1]);
  if (i < b.size()) sum += static_cast<std::uint32_t>(b[i] << 8);
  return sum;
}

inline std::uint16_t fold(std::uint32_t sum) {
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

inline void put_eth(Bytes& out, const MacAddr& dst, const MacAddr& src, std::uint16_t type) {
  out.insert(out.end(), dst.octets.begin(), dst.octets.end());
  out.insert(out.end(), src.octets.begin(), src.octets.end());
  put_be16(out, type);
}

inline void put_ipv4(Bytes& out, Ipv4Addr src, Ipv4Addr dst, std::uint8_t proto, std::size_t l4_len,
                     std::uint16_t ident) {
  const std::size_t start = out.size();
  out.push_back(0x45);
  out.push_back(0);
  put_be16(out, static_cast<std::uint16_t>(20 + l4_len));
  put_be16(out, ident);
  put_be16(out, 0x4000);  // DF
  out.push_back(64);
  out.push_back(proto);
  put_be16(out, 0);
  put_be32(out, src.value);
  put_be32(out, dst.value);
  const std::uint16_t csum = fold(ones_sum(ByteView(out).subspan(start, 20)));
  out[start + 10] = static_cast<std::uint8_t>(csum >> 8);
  out[start + 11] = static_cast<std::uint8_t>(csum);
}

inline std::uint32_t pseudo_header_sum(Ipv4Addr src, Ipv4Addr dst, std::uint8_t proto, std::size_t len) {
  return (src.value >> 16) + (src.value & 0xffff) + (dst.value >> 16) + (dst.value & 0xffff) + proto +
         static_cast<std::uint32_t>(len);
}

inline void pad(Bytes& out) {
  if (out.size() < kMinFrameLen) out.resize(kMinFrameLen, 0);
}

}  // namespace detail

inline Bytes build_arp_frame(const MacAddr& eth_src, const MacAddr& eth_dst, ArpOp op, const MacAddr& sender_mac,
                             Ipv4Addr sender_ip, const MacAddr& target_mac, Ipv4Addr target_ip) {
  Bytes out;
  out.reserve(kMinFrameLen);
  detail::put_eth(out, eth_dst, eth_src, ethertype::arp);
  put_be16(out, 1);
  put_be16(out, ethertype::ipv4);
  out.push_back(6);
  out.push_back(4);
  put_be16(out, static_cast<std::uint16_t>(op));
  out.insert(out.end(), sender_mac.octets.begin(), sender_mac.octets.end());
  put_be32(out, sender_ip.value);
  out.insert(out.end(), target_mac.octets.begin(), target_mac.octets.end());
  put_be32(out, target_ip.value);
  detail::pad(out);
  return out;
}

inline Bytes build_tcp_frame(const MacAddr& eth_src, const MacAddr& eth_dst, const TcpSegment& seg,
                             std::uint16_t ip_ident = 0) {
  Bytes out;
  const std::size_t l4_len = 20 + seg.payload.size();
  out.reserve(kEthHeaderLen + 20 + l4_len);
  detail::put_eth(out, eth_dst, eth_src, ethertype::ipv4);
  detail::put_ipv4(out, seg.src_ip, seg.dst_ip, ipproto::tcp, l4_len, ip_ident);
  const std::size_t start = out.size();
  put_be16(out, seg.src_port);
  put_be16(out, seg.dst_port);
  put_be32(out, seg.seq);
  put_be32(out, seg.ack);
  out.push_back(0x50);
  out.push_back(seg.flags);
  put_be16(out, 0xfaf0);  // window
  put_be16(out, 0);
  put_be16(out, 0);
  out.insert(out.end(), seg.payload.begin(), seg.payload.end());
  const std::uint16_t csum = detail::fold(detail::ones_sum(
      ByteView(out).subspan(start), detail::pseudo_header_sum(seg.src_ip, seg.dst_ip, ipproto::tcp, l4_len)));
  out[start + 16] = static_cast<std::uint8_t>(csum >> 8);
  out[start + 17] = static_cast<std::uint8_t>(csum);
  detail::pad(out);
  return out;
}

inline Bytes build_udp_frame(const MacAddr& eth_src, const MacAddr& eth_dst, const UdpDatagram& dg,
                             std::uint16_t ip_ident = 0) {
  Bytes out;
  const std::size_t l4_len = 8 + dg.payload.size();
  out.reserve(kEthHeaderLen + 20 + l4_len);
  detail::put_eth(out, eth_dst, eth_src, ethertype::ipv4);
  detail::put_ipv4(out, dg.src_ip, dg.dst_ip, ipproto::udp, l4_len, ip_ident);
  const std::size_t start = out.size();
  put_be16(out, dg.src_port);
  put_be16(out, dg.dst_port);
  put_be16(out, static_cast<std::uint16_t>(l4_len));
  put_be16(out, 0);
  out.insert(out.end(), dg.payload.begin(), dg.payload.end());
  std::uint16_t csum = detail::fold(detail::ones_sum(
      ByteView(out).subspan(start), detail::pseudo_header_sum(dg.src_ip, dg.dst_ip, ipproto::udp, l4_len)));
  if (csum == 0) csum = 0xffff;
  out[start + 6] = static_cast<std::uint8_t>(csum >> 8);
  out[start + 7] = static_cast<std::uint8_t>(csum);
  detail::pad(out);
  return out;
}

/// Rebuilds a frame whose headers decode back to `meta`. Payload bytes are
/// zero-filled to payload_len; opaque ethertypes get a zero body.
inline Bytes synthesize(const PacketMeta& meta) {
  if (meta.arp) {
    const auto& a = *meta.arp;
    return build_arp_frame(meta.src_mac, meta.dst_mac, a.op, a.sender_mac, a.sender_ip, a.target_mac, a.target_ip);
  }
  if (meta.l3) {
    const auto& ip = *meta.l3;
    if (const auto* t = meta.l4()) {
      const Bytes payload(t->payload_len, 0);
      if (ip.protocol == ipproto::tcp)
        return build_tcp_frame(meta.src_mac, meta.dst_mac,
                               {ip.src_ip, ip.dst_ip, t->src_port, t->dst_port, 0, 0, t->tcp_flags.value_or(0),
                                payload});
      return build_udp_frame(meta.src_mac, meta.dst_mac, {ip.src_ip, ip.dst_ip, t->src_port, t->dst_port, payload});
    }
    Bytes out;
    detail::put_eth(out, meta.dst_mac, meta.src_mac, ethertype::ipv4);
    detail::put_ipv4(out, ip.src_ip, ip.dst_ip, ip.protocol, 0, 0);
    detail::pad(out);
    return out;
  }
  Bytes out;
  detail::put_eth(out, meta.dst_mac, meta.src_mac, meta.ethertype);
  detail::pad(out);
  return out;
}

}  // namespace eids
