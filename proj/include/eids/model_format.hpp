#pragma once

// Shared pieces of the line-oriented model file:
//
//   EIDS-MODEL 1
//   FLOW    kind peer_ip local_ip service_port peer_mac
//   SERVER  ip port
//   ARP     ip mac
//   TIMING  kind peer_ip local_ip service_port peer_mac leg mean_us min_us max_us n_l delta_milli
//
// Fields are tab-separated, MACs lowercase colon-hex, IPs dotted-quad.

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

#include "eids/net_types.hpp"

namespace eids {

inline constexpr std::string_view kModelHeader = "EIDS-MODEL 1";
inline constexpr std::string_view kModelMagic = "EIDS-MODEL";

enum class ModelErrorKind { BadModelVersion, MalformedModelLine };

class ModelError : public std::runtime_error {
 public:
  ModelError(ModelErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ModelErrorKind kind() const noexcept { return kind_; }

 private:
  ModelErrorKind kind_;
};

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] inline void malformed(std::string_view line, std::string_view why) {
  throw ModelError(ModelErrorKind::MalformedModelLine, std::string(why) + ": '" + std::string(line) + "'");
}

template <typename Int>
Int parse_model_int(std::string_view field, std::string_view line) {
  Int v{};
  const auto* end = field.data() + field.size();
  const auto [p, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc{} || p != end || field.empty()) malformed(line, "bad integer");
  return v;
}

inline Ipv4Addr parse_model_ip(std::string_view field, std::string_view line) {
  const auto ip = Ipv4Addr::parse(field);
  if (!ip) malformed(line, "bad ipv4 address");
  return *ip;
}

inline MacAddr parse_model_mac(std::string_view field, std::string_view line) {
  const auto mac = MacAddr::parse(field);
  if (!mac) malformed(line, "bad mac address");
  return *mac;
}

}  // namespace eids
