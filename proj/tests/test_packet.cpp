#include <catch_amalgamated.hpp>

#include <random>

#include "eids/frame_builder.hpp"
#include "eids/sim.hpp"

using namespace eids;

namespace {

const TimePoint kT = from_micros(1'600'000'000'000'000);

Bytes hex(std::string_view s) {
  Bytes out;
  auto nib = [](char c) { return static_cast<std::uint8_t>(c <= '9' ? c - '0' : c - 'a' + 10); };
  for (std::size_t i = 0; i + 1 < s.size();) {
    if (s[i] == ' ') {
      ++i;
      continue;
    }
    out.push_back(static_cast<std::uint8_t>(nib(s[i]) << 4 | nib(s[i + 1])));
    i += 2;
  }
  return out;
}

// 42-byte who-has 192.168.1.101 tell 192.168.1.50, written out by hand.
const Bytes kArpRequest = hex(
    "ffffffffffff 02005e100132 0806"
    "0001 0800 06 04 0001"
    "02005e100132 c0a80132"
    "000000000000 c0a80165");

// PLC 192.168.1.50:49152 -> 192.168.1.101:502, SYN, no options, no payload.
const Bytes kTcpSyn = hex(
    "02005e100165 02005e100132 0800"
    "4500 0028 0001 4000 4006 0000 c0a80132 c0a80165"
    "c000 01f6 00000001 00000000 5002 faf0 0000 0000");

}  // namespace

TEST_CASE("ARP request from the PLC decodes", "[packet]") {
  REQUIRE(kArpRequest.size() == 42);
  const PacketMeta m = parse_frame(kArpRequest, kT, Direction::Rx);
  CHECK(m.ethertype == ethertype::arp);
  REQUIRE(m.arp);
  CHECK_FALSE(m.l3);
  CHECK(m.arp->op == ArpOp::Request);
  CHECK(m.arp->sender_ip == Ipv4Addr::of(192, 168, 1, 50));
  CHECK(m.arp->target_ip == Ipv4Addr::of(192, 168, 1, 101));
  CHECK(m.arp->sender_mac.to_string() == "02:00:5e:10:01:32");
  CHECK(m.dst_mac == MacAddr::broadcast());
  CHECK(m.frame_len == 42);
  CHECK(m.timestamp == kT);
}

TEST_CASE("short input is a truncated frame", "[packet]") {
  const Bytes b(13, 0xff);
  try {
    parse_frame(b, kT, Direction::Rx);
    FAIL("no error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseErrorKind::TruncatedFrame);
  }
}

TEST_CASE("TCP SYN to port 502 decodes flags and ports", "[packet]") {
  const PacketMeta m = parse_frame(kTcpSyn, kT, Direction::Tx);
  REQUIRE(m.l4());
  CHECK(m.l3->protocol == ipproto::tcp);
  CHECK(m.l4()->dst_port == 502);
  CHECK(m.l4()->src_port == 49152);
  REQUIRE(m.l4()->tcp_flags);
  CHECK(*m.l4()->tcp_flags == tcpflag::syn);
  CHECK(m.l4()->payload_len == 0);
  CHECK(m.direction == Direction::Tx);
}

TEST_CASE("every strict prefix of a header is truncated", "[packet]") {
  for (std::size_t n = 0; n < kTcpSyn.size(); ++n) {
    const ByteView prefix(kTcpSyn.data(), n);
    CHECK_THROWS_AS(parse_frame(prefix, kT, Direction::Rx), ParseError);
  }
  for (std::size_t n = 0; n < kArpRequest.size(); ++n) {
    const ByteView prefix(kArpRequest.data(), n);
    CHECK_THROWS_AS(parse_frame(prefix, kT, Direction::Rx), ParseError);
  }
}

TEST_CASE("ARP opcode other than request/reply is malformed", "[packet]") {
  Bytes b = kArpRequest;
  b[21] = 3;
  try {
    parse_frame(b, kT, Direction::Rx);
    FAIL("no error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseErrorKind::MalformedArp);
  }
  b[21] = 2;
  CHECK(parse_frame(b, kT, Direction::Rx).arp->op == ArpOp::Reply);
}

TEST_CASE("802.1Q tag is skipped", "[packet]") {
  Bytes b(kTcpSyn.begin(), kTcpSyn.begin() + 12);
  const Bytes tag = hex("8100 0064");
  b.insert(b.end(), tag.begin(), tag.end());
  b.insert(b.end(), kTcpSyn.begin() + 12, kTcpSyn.end());
  const PacketMeta m = parse_frame(b, kT, Direction::Rx);
  CHECK(m.ethertype == ethertype::ipv4);
  REQUIRE(m.l4());
  CHECK(m.l4()->dst_port == 502);
}

TEST_CASE("unknown ethertype keeps only link fields", "[packet]") {
  Bytes b = kTcpSyn;
  b[12] = 0x86;
  b[13] = 0xdd;
  const PacketMeta m = parse_frame(b, kT, Direction::Rx);
  CHECK(m.ethertype == ethertype::ipv6);
  CHECK_FALSE(m.l3);
  CHECK_FALSE(m.arp);
  CHECK(m.src_mac.to_string() == "02:00:5e:10:01:32");
}

TEST_CASE("Ethernet padding is not payload", "[packet]") {
  Bytes b = kTcpSyn;
  b.resize(60, 0xaa);
  CHECK(parse_frame(b, kT, Direction::Rx).l4()->payload_len == 0);
}

TEST_CASE("non-first fragments carry no transport header", "[packet]") {
  Bytes b = kTcpSyn;
  b[20] = 0x00;
  b[21] = 0x10;  // offset 16*8
  const PacketMeta m = parse_frame(b, kT, Direction::Rx);
  REQUIRE(m.l3);
  CHECK_FALSE(m.l3->l4);
}

TEST_CASE("payload bytes never influence metadata", "[packet]") {
  const Bytes p1(12, 0x00), p2(12, 0xff);
  TcpSegment seg{Ipv4Addr::of(192, 168, 1, 50), Ipv4Addr::of(192, 168, 1, 101), 49152, 502, 7, 9,
                 tcpflag::psh | tcpflag::ack, p1};
  const MacAddr a = sim::testbed_mac(50), b = sim::testbed_mac(101);
  const PacketMeta m1 = parse_frame(build_tcp_frame(a, b, seg), kT, Direction::Rx);
  seg.payload = p2;
  const PacketMeta m2 = parse_frame(build_tcp_frame(a, b, seg), kT, Direction::Rx);
  CHECK(m1 == m2);
  CHECK(m1.l4()->payload_len == 12);
}

TEST_CASE("builder checksums verify", "[packet]") {
  const Bytes payload(12, 0x42);
  const Bytes f = build_tcp_frame(sim::testbed_mac(50), sim::testbed_mac(101),
                                  {Ipv4Addr::of(192, 168, 1, 50), Ipv4Addr::of(192, 168, 1, 101), 49152, 502, 1, 2,
                                   tcpflag::psh | tcpflag::ack, payload},
                                  77);
  // Independent one's-complement sum; a correct header sums to 0xffff.
  auto sum16 = [](const std::vector<std::uint32_t>& words) {
    std::uint32_t s = 0;
    for (auto w : words) s += w;
    while (s >> 16) s = (s & 0xffff) + (s >> 16);
    return s;
  };
  std::vector<std::uint32_t> ip;
  for (std::size_t i = 14; i < 34; i += 2) ip.push_back(static_cast<std::uint32_t>(f[i] << 8 | f[i + 1]));
  CHECK(sum16(ip) == 0xffff);
  std::vector<std::uint32_t> tcp = {0xc0a8, 0x0132, 0xc0a8, 0x0165, 6, 32};
  for (std::size_t i = 34; i < 66; i += 2) tcp.push_back(static_cast<std::uint32_t>(f[i] << 8 | f[i + 1]));
  CHECK(sum16(tcp) == 0xffff);
}

TEST_CASE("parsing is total over random bytes", "[packet][fuzz]") {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> len(0, 120), byte(0, 255);
  std::size_t ok = 0, typed = 0;
  for (int i = 0; i < 200000; ++i) {
    Bytes b(static_cast<std::size_t>(len(rng)));
    for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
    // Steer half the inputs into ARP/IPv4 so deeper layers are exercised.
    if (b.size() > 14 && (i & 1)) {
      b[12] = (i & 2) ? 0x08 : 0x08;
      b[13] = (i & 2) ? 0x06 : 0x00;
      if (!(i & 2)) b[14] = static_cast<std::uint8_t>(0x40 | (b[14] & 0x0f));
    }
    try {
      const PacketMeta m = parse_frame(b, kT, Direction::Rx);
      CHECK_FALSE((m.l3 && m.arp));
      if (m.l4()) CHECK((m.l3->protocol == ipproto::tcp) == m.l4()->tcp_flags.has_value());
      ++ok;
    } catch (const ParseError&) {
      ++typed;
    }
  }
  CHECK(ok > 1000);
  CHECK(typed > 1000);
}

TEST_CASE("simulated frames round-trip through synthesize", "[packet]") {
  sim::TrafficProfile p;
  sim::AttackScenario inj;
  inj.kind = sim::AttackKind::Inject;
  inj.start = std::chrono::seconds(5);
  inj.target = "S1";
  const auto trace = sim::run(sim::default_topology(), p, {inj}, std::chrono::seconds(20), 3);
  REQUIRE(trace.frames.size() > 1000);
  for (const auto& f : trace.frames) {
    const PacketMeta m = parse_frame(f.bytes, f.at, Direction::Rx);
    const PacketMeta back = parse_frame(synthesize(m), f.at, Direction::Rx);
    REQUIRE(back == m);
  }
}

TEST_CASE("udp_payload returns the datagram body", "[packet]") {
  const Bytes body = {1, 2, 3, 4, 5};
  const Bytes f = build_udp_frame(sim::testbed_mac(101), MacAddr::broadcast(),
                                  {Ipv4Addr::of(192, 168, 1, 101), Ipv4Addr::of(192, 168, 1, 255), 47808, 47808, body});
  REQUIRE(f.size() == 60);  // padded
  const auto p = udp_payload(f);
  REQUIRE(p);
  CHECK(Bytes(p->begin(), p->end()) == body);
  CHECK_FALSE(udp_payload(kTcpSyn));
  CHECK_FALSE(udp_payload(kArpRequest));
}
