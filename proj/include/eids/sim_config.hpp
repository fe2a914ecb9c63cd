#pragma once

// Text configuration for the testbed simulator. One `key = value` per line,
// `#` starts a comment. Repeatable keys: `device` and `scenario`.
//
//   seed = 42
//   duration_s = 1800
//   epoch_s = 1600000000
//   poll_period_ms = 100
//   response_delay_ms = 1 5            # uniform range
//   jitter = 0.02                      # +- fraction of the poll period
//   plc_timeout_ms = 1000
//   hmi_poll_period_ms = 100
//   scada_poll_period_ms = 100
//   arp_expiry_s = 180 360             # uniform range, mean 270 s
//   keepalive_period_s = 10
//   keepalive_jitter_ms = 20
//   announce_port = 47808
//   device = S1 sensor 192.168.1.101 02:00:5e:10:01:65 1   # name role ip mac [node_id]
//   attacker = 192.168.1.66 de:ad:be:ef:00:66
//   scenario = dos_flood start_s=660 target=S1 stop_s=690 rate=1000
//
// Scenario options: start_s, stop_s, target, rate, period_ms, peer,
// starve (0/1). The first `device` line replaces the default topology.
// The keep-alive PSK is never part of this file.

#include <fstream>
#include <sstream>

#include "eids/sim.hpp"

namespace eids::sim {

struct SimSpec {
  Topology topology = default_topology();
  TrafficProfile profile;
  std::vector<AttackScenario> scenarios;
  Duration duration = std::chrono::seconds(1800);
  std::uint64_t seed = 1;
};

namespace detail {

[[noreturn]] inline void config_fail(std::size_t line_no, const std::string& msg) {
  throw SimError(SimErrorKind::ConfigInvalid, "line " + std::to_string(line_no) + ": " + msg);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline double number(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    config_fail(line_no, "not a number: " + s);
  }
}

inline std::uint64_t unsigned_number(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    config_fail(line_no, "not an unsigned integer: " + s);
  }
}

inline Duration scaled(double v, double unit_us, std::size_t line_no) {
  const double us = v * unit_us;
  if (!(us >= 0.0 && us < 9.0e15)) config_fail(line_no, "duration out of range");
  return Duration{static_cast<std::int64_t>(std::llround(us))};
}

inline AttackScenario parse_scenario(const std::vector<std::string>& w, std::size_t line_no) {
  if (w.empty()) config_fail(line_no, "scenario needs a kind");
  const auto kind = parse_attack_kind(w[0]);
  if (!kind) config_fail(line_no, "unknown scenario " + w[0]);
  AttackScenario s;
  s.kind = *kind;
  for (std::size_t i = 1; i < w.size(); ++i) {
    const auto eq = w[i].find('=');
    if (eq == std::string::npos) config_fail(line_no, "expected option=value, got " + w[i]);
    const std::string k = w[i].substr(0, eq), v = w[i].substr(eq + 1);
    if (k == "start_s")
      s.start = scaled(number(v, line_no), 1e6, line_no);
    else if (k == "stop_s")
      s.stop = scaled(number(v, line_no), 1e6, line_no);
    else if (k == "target")
      s.target = v;
    else if (k == "rate")
      s.rate = number(v, line_no);
    else if (k == "period_ms")
      s.period = scaled(number(v, line_no), 1e3, line_no);
    else if (k == "peer")
      s.peer = v;
    else if (k == "starve")
      s.starve_keepalive = unsigned_number(v, line_no) != 0;
    else
      config_fail(line_no, "unknown scenario option " + k);
  }
  return s;
}

}  // namespace detail

inline SimSpec parse_sim_config(std::string_view text) {
  using namespace detail;
  SimSpec spec;
  bool custom_devices = false;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_fail(line_no, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto w = words(value);
    auto one = [&]() -> const std::string& {
      if (w.size() != 1) config_fail(line_no, key + " takes one value");
      return w[0];
    };
    auto range = [&](double unit_us, Duration& lo, Duration& hi) {
      if (w.size() != 2) config_fail(line_no, key + " takes two values");
      lo = scaled(number(w[0], line_no), unit_us, line_no);
      hi = scaled(number(w[1], line_no), unit_us, line_no);
    };
    TrafficProfile& p = spec.profile;
    if (key == "seed") {
      spec.seed = unsigned_number(one(), line_no);
    } else if (key == "duration_s") {
      spec.duration = scaled(number(one(), line_no), 1e6, line_no);
    } else if (key == "epoch_s") {
      p.epoch = from_micros(static_cast<std::int64_t>(unsigned_number(one(), line_no)) * 1'000'000);
    } else if (key == "poll_period_ms") {
      p.poll_period = scaled(number(one(), line_no), 1e3, line_no);
    } else if (key == "response_delay_ms") {
      range(1e3, p.response_delay_min, p.response_delay_max);
    } else if (key == "jitter") {
      p.jitter = number(one(), line_no);
    } else if (key == "plc_timeout_ms") {
      p.plc_timeout = scaled(number(one(), line_no), 1e3, line_no);
    } else if (key == "hmi_poll_period_ms") {
      p.hmi_poll_period = scaled(number(one(), line_no), 1e3, line_no);
    } else if (key == "scada_poll_period_ms") {
      p.scada_poll_period = scaled(number(one(), line_no), 1e3, line_no);
    } else if (key == "arp_expiry_s") {
      range(1e6, p.arp_expiry_min, p.arp_expiry_max);
    } else if (key == "keepalive_period_s") {
      p.keepalive_period = scaled(number(one(), line_no), 1e6, line_no);
    } else if (key == "keepalive_jitter_ms") {
      p.keepalive_jitter = scaled(number(one(), line_no), 1e3, line_no);
    } else if (key == "announce_port") {
      const auto port = unsigned_number(one(), line_no);
      if (port == 0 || port > 65535) config_fail(line_no, "port out of range");
      p.announce_port = static_cast<std::uint16_t>(port);
    } else if (key == "device") {
      if (w.size() != 4 && w.size() != 5) config_fail(line_no, "device = name role ip mac [node_id]");
      if (!custom_devices) spec.topology.devices.clear();
      custom_devices = true;
      Device d;
      d.name = w[0];
      const auto role = parse_role(w[1]);
      const auto ip = Ipv4Addr::parse(w[2]);
      const auto mac = MacAddr::parse(w[3]);
      if (!role || !ip || !mac) config_fail(line_no, "bad device " + w[0]);
      if (spec.topology.index_of(d.name)) config_fail(line_no, "duplicate device " + d.name);
      d.role = *role;
      d.ip = *ip;
      d.mac = *mac;
      if (w.size() == 5) {
        const auto id = unsigned_number(w[4], line_no);
        if (id == 0 || id > 0xffff) config_fail(line_no, "node id out of range");
        d.node_id = static_cast<std::uint16_t>(id);
      }
      if (d.is_edge() && d.node_id == 0) config_fail(line_no, "edge node " + d.name + " needs a node id");
      spec.topology.devices.push_back(d);
    } else if (key == "attacker") {
      if (w.size() != 2) config_fail(line_no, "attacker = ip mac");
      const auto ip = Ipv4Addr::parse(w[0]);
      const auto mac = MacAddr::parse(w[1]);
      if (!ip || !mac) config_fail(line_no, "bad attacker address");
      spec.topology.attacker.ip = *ip;
      spec.topology.attacker.mac = *mac;
    } else if (key == "scenario") {
      spec.scenarios.push_back(parse_scenario(w, line_no));
    } else if (key == "psk") {
      config_fail(line_no, "PSK is read from --psk-file or EIDS_PSK only");
    } else {
      config_fail(line_no, "unknown key " + key);
    }
  }
  return spec;
}

inline SimSpec load_sim_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SimError(SimErrorKind::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_sim_config(ss.str());
}

}  // namespace eids::sim
