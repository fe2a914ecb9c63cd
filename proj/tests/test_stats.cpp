#include <catch_amalgamated.hpp>

#include "eids/frame_builder.hpp"
#include "eids/sim.hpp"
#include "eids/stats.hpp"

using namespace eids;
using std::chrono::milliseconds;
using std::chrono::seconds;

namespace {

std::vector<TimedFrame> frames_of(const sim::FrameTrace& t) {
  std::vector<TimedFrame> out;
  for (const auto& f : t.frames) out.push_back({f.at, f.bytes});
  return out;
}

const TimePoint kT0 = from_micros(1'600'000'000'000'000);

}  // namespace

TEST_CASE("filter grammar", "[stats]") {
  CHECK_NOTHROW(FlowFilter::parse(""));
  CHECK_NOTHROW(FlowFilter::parse("tcp and port 502 and host 192.168.1.101"));
  CHECK_NOTHROW(FlowFilter::parse("arp && request"));
  CHECK_THROWS_AS(FlowFilter::parse("port"), std::invalid_argument);
  CHECK_THROWS_AS(FlowFilter::parse("port 70000"), std::invalid_argument);
  CHECK_THROWS_AS(FlowFilter::parse("host 1.2.3"), std::invalid_argument);
  CHECK_THROWS_AS(FlowFilter::parse("icmp"), std::invalid_argument);
}

TEST_CASE("filter matching", "[stats]") {
  const MacAddr a = sim::testbed_mac(50), b = sim::testbed_mac(101);
  const Ipv4Addr ia = Ipv4Addr::of(192, 168, 1, 50), ib = Ipv4Addr::of(192, 168, 1, 101);
  const PacketMeta tcp =
      parse_frame(build_tcp_frame(a, b, {ia, ib, 49152, 502, 0, 0, tcpflag::ack, {}}), kT0, Direction::Rx);
  const PacketMeta arp =
      parse_frame(build_arp_frame(a, MacAddr::broadcast(), ArpOp::Request, a, ia, {}, ib), kT0, Direction::Rx);
  CHECK(FlowFilter::parse("tcp port 502").matches(tcp));
  CHECK_FALSE(FlowFilter::parse("udp").matches(tcp));
  CHECK(FlowFilter::parse("src 192.168.1.50 dst 192.168.1.101").matches(tcp));
  CHECK_FALSE(FlowFilter::parse("src 192.168.1.101").matches(tcp));
  CHECK(FlowFilter::parse("arp request host 192.168.1.101").matches(arp));
  CHECK_FALSE(FlowFilter::parse("arp reply").matches(arp));
  CHECK_FALSE(FlowFilter::parse("port 502").matches(arp));
}

TEST_CASE("non-matching filter gives a header-only CSV", "[stats]") {
  const auto t = sim::run(sim::default_topology(), {}, {}, seconds(10), 1);
  CHECK(stats_csv(frames_of(t), FlowFilter::parse("udp port 9")) == "flow,timestamp_us,interarrival_us\n");
  CHECK(stats_csv({}, FlowFilter{}) == "flow,timestamp_us,interarrival_us\n");
}

TEST_CASE("hand-made series yields exact interarrivals", "[stats]") {
  const MacAddr a = sim::testbed_mac(50), b = sim::testbed_mac(101);
  const Ipv4Addr ia = Ipv4Addr::of(192, 168, 1, 50), ib = Ipv4Addr::of(192, 168, 1, 101);
  std::vector<Bytes> store;
  std::vector<TimedFrame> fs;
  for (std::int64_t ms : {0, 100, 203, 300}) {
    store.push_back(build_tcp_frame(a, b, {ia, ib, 49152, 502, 0, 0, tcpflag::ack, {}}));
    fs.push_back({kT0 + milliseconds(ms), store.back()});
  }
  CHECK(stats_csv(fs, FlowFilter{}) ==
        "flow,timestamp_us,interarrival_us\n"
        "tcp 192.168.1.50>192.168.1.101:502,1600000000100000,100000\n"
        "tcp 192.168.1.50>192.168.1.101:502,1600000000203000,103000\n"
        "tcp 192.168.1.50>192.168.1.101:502,1600000000300000,97000\n");
  const auto s = summarize(interarrivals(fs, FlowFilter{}));
  REQUIRE(s.size() == 1);
  CHECK(s[0].count == 3);
  CHECK(s[0].mean_us == 100000.0);
  CHECK(s[0].min_us == 97000);
  CHECK(s[0].max_us == 103000);
}

TEST_CASE("per-leg labels split request and response", "[stats]") {
  const auto t = sim::run(sim::default_topology(), {}, {}, seconds(20), 2);
  const auto rows = interarrivals(frames_of(t), FlowFilter::parse("tcp host 192.168.1.101"), true);
  std::set<std::string> labels;
  for (const auto& r : rows) labels.insert(r.flow);
  CHECK(labels == std::set<std::string>{"tcp 192.168.1.50>192.168.1.101:502 fwd",
                                        "tcp 192.168.1.50>192.168.1.101:502 rev"});
}

TEST_CASE("benign Modbus series averages 100 ms per leg", "[stats]") {
  const auto t = sim::run(sim::default_topology(), {}, {}, seconds(60), 3);
  const auto s = summarize(interarrivals(frames_of(t), FlowFilter::parse("tcp port 502 host 192.168.1.101"), true));
  REQUIRE(s.size() == 2);
  for (const auto& x : s) {
    CHECK(x.mean_us > 95000.0);
    CHECK(x.mean_us < 105000.0);
  }
}

TEST_CASE("learning duration suggestion is twice the longest ARP gap", "[stats]") {
  const auto t = sim::run(sim::default_topology(), {}, {}, seconds(1800), 4);
  // Independent scan over the raw bytes: opcode at 20..21, sender IP 28..31, target IP 38..41.
  std::map<std::pair<std::uint32_t, std::uint32_t>, TimePoint> last;
  Duration longest{};
  for (const auto& f : t.frames) {
    const auto& b = f.bytes;
    if (b[12] != 0x08 || b[13] != 0x06 || b[21] != 1) continue;
    const std::uint32_t s = load_be32(b, 28), d = load_be32(b, 38);
    auto [it, first] = last.try_emplace({s, d}, f.at);
    if (!first) {
      longest = std::max(longest, f.at - it->second);
      it->second = f.at;
    }
  }
  REQUIRE(longest > seconds(180));
  CHECK(suggest_learning_duration(frames_of(t)) == longest * 2);
  CHECK_FALSE(suggest_learning_duration({}));
}
