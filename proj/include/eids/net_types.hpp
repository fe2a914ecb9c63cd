#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eids {

using Duration = std::chrono::microseconds;
using TimePoint = std::chrono::sys_time<std::chrono::microseconds>;
using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class Direction : std::uint8_t { Rx, Tx };

inline constexpr TimePoint from_micros(std::int64_t us) { return TimePoint{Duration{us}}; }
inline constexpr std::int64_t to_micros(TimePoint t) { return t.time_since_epoch().count(); }

struct MacAddr {
  std::array<std::uint8_t, 6> octets{};

  static constexpr MacAddr broadcast() { return {{0xff, 0xff, 0xff, 0xff, 0xff, 0xff}}; }

  constexpr bool is_zero() const {
    for (auto o : octets)
      if (o != 0) return false;
    return true;
  }
  // Group bit covers broadcast and multicast.
  constexpr bool is_group() const { return (octets[0] & 0x01) != 0; }

  std::string to_string() const {
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    s.reserve(17);
    for (std::size_t i = 0; i < 6; ++i) {
      if (i) s += ':';
      s += hex[octets[i] >> 4];
      s += hex[octets[i] & 0xf];
    }
    return s;
  }

  static std::optional<MacAddr> parse(std::string_view s) {
    if (s.size() != 17) return std::nullopt;
    MacAddr m;
    auto nib = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t p = i * 3;
      if (i && s[p - 1] != ':') return std::nullopt;
      const int hi = nib(s[p]), lo = nib(s[p + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      m.octets[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return m;
  }

  friend constexpr auto operator<=>(const MacAddr&, const MacAddr&) = default;
};

struct Ipv4Addr {
  std::uint32_t value = 0;  // host order

  static constexpr Ipv4Addr of(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return {static_cast<std::uint32_t>(a) << 24 | static_cast<std::uint32_t>(b) << 16 |
            static_cast<std::uint32_t>(c) << 8 | d};
  }

  constexpr bool is_unspecified() const { return value == 0; }

  std::string to_string() const {
    return std::to_string(value >> 24) + '.' + std::to_string(value >> 16 & 0xff) + '.' +
           std::to_string(value >> 8 & 0xff) + '.' + std::to_string(value & 0xff);
  }

  static std::optional<Ipv4Addr> parse(std::string_view s) {
    std::uint32_t out = 0;
    int parts = 0;
    std::size_t i = 0;
    while (parts < 4) {
      if (i >= s.size() || s[i] < '0' || s[i] > '9') return std::nullopt;
      std::uint32_t v = 0;
      std::size_t digits = 0;
      while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
        v = v * 10 + static_cast<std::uint32_t>(s[i] - '0');
        if (++digits > 3 || v > 255) return std::nullopt;
        ++i;
      }
      out = out << 8 | v;
      if (++parts < 4) {
        if (i >= s.size() || s[i] != '.') return std::nullopt;
        ++i;
      }
    }
    if (i != s.size()) return std::nullopt;
    return Ipv4Addr{out};
  }

  friend constexpr auto operator<=>(const Ipv4Addr&, const Ipv4Addr&) = default;
};

// Big-endian field access over raw frames. Callers bounds-check first.
inline std::uint16_t load_be16(ByteView b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] << 8 | b[off + 1]);
}
inline std::uint32_t load_be32(ByteView b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) << 24 | static_cast<std::uint32_t>(b[off + 1]) << 16 |
         static_cast<std::uint32_t>(b[off + 2]) << 8 | b[off + 3];
}
inline void put_be16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}
inline void put_be32(Bytes& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}
inline void put_be64(Bytes& out, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

// 2020-09-13T12:26:40.000000Z
inline std::string iso8601(TimePoint t) {
  const std::int64_t us = to_micros(t);
  std::int64_t secs = us / 1'000'000;
  std::int64_t frac = us % 1'000'000;
  if (frac < 0) {
    frac += 1'000'000;
    --secs;
  }
  const std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(frac));
  return buf;
}

}  // namespace eids
