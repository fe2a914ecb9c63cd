#pragma once

// Classic libpcap file format (microsecond timestamps, linktype 1).

#include <istream>
#include <ostream>

#include "eids/net_types.hpp"

namespace eids {

inline constexpr std::uint32_t kPcapMagic = 0xa1b2c3d4;
inline constexpr std::uint32_t kPcapMagicSwapped = 0xd4c3b2a1;
inline constexpr std::uint32_t kLinktypeEthernet = 1;

struct PcapRecord {
  TimePoint timestamp{};
  Bytes data;
  std::uint32_t orig_len = 0;
  friend bool operator==(const PcapRecord&, const PcapRecord&) = default;
};

enum class PcapErrorKind { BadMagic, TruncatedRecord, UnsupportedLinktype, IoError };

class PcapError : public std::runtime_error {
 public:
  PcapError(PcapErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  PcapErrorKind kind() const noexcept { return kind_; }

 private:
  PcapErrorKind kind_;
};

class PcapReader {
 public:
  explicit PcapReader(std::istream& in) : in_(in) {
    unsigned char hdr[24];
    const auto got = read_some(hdr, sizeof hdr);
    if (got < 4) throw PcapError(PcapErrorKind::BadMagic, "missing pcap magic");
    const std::uint32_t magic_le = le32(hdr);
    if (magic_le == kPcapMagic)
      swapped_ = false;
    else if (magic_le == kPcapMagicSwapped)
      swapped_ = true;
    else
      throw PcapError(PcapErrorKind::BadMagic, "not a classic pcap file");
    if (got < sizeof hdr) throw PcapError(PcapErrorKind::TruncatedRecord, "truncated pcap global header");
    snaplen_ = u32(hdr + 16);
    linktype_ = u32(hdr + 20);
    if (linktype_ != kLinktypeEthernet)
      throw PcapError(PcapErrorKind::UnsupportedLinktype, "linktype " + std::to_string(linktype_));
  }

  /// Next record in file order; nullopt at a clean end of file.
  std::optional<PcapRecord> next() {
    unsigned char rh[16];
    const auto got = read_some(rh, sizeof rh);
    if (got == 0) return std::nullopt;
    if (got < sizeof rh) throw PcapError(PcapErrorKind::TruncatedRecord, "truncated record header");
    const std::uint32_t sec = u32(rh), usec = u32(rh + 4), incl = u32(rh + 8), orig = u32(rh + 12);
    if (incl > (1u << 24)) throw PcapError(PcapErrorKind::TruncatedRecord, "implausible record length");
    PcapRecord r;
    r.timestamp = from_micros(static_cast<std::int64_t>(sec) * 1'000'000 + usec);
    r.orig_len = orig;
    r.data.resize(incl);
    if (read_some(r.data.data(), incl) != incl) throw PcapError(PcapErrorKind::TruncatedRecord, "truncated record");
    return r;
  }

  std::uint32_t snaplen() const { return snaplen_; }
  bool byte_swapped() const { return swapped_; }

 private:
  std::size_t read_some(unsigned char* p, std::size_t n) {
    in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in_.gcount());
  }
  static std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  std::uint32_t u32(const unsigned char* p) const {
    const std::uint32_t v = le32(p);
    return swapped_ ? __builtin_bswap32(v) : v;
  }

  std::istream& in_;
  bool swapped_ = false;
  std::uint32_t snaplen_ = 0;
  std::uint32_t linktype_ = 0;
};

inline std::vector<PcapRecord> read_pcap(std::istream& in) {
  PcapReader reader(in);
  std::vector<PcapRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

/// Writes little-endian classic pcap, the layout libpcap produces on x86.
class PcapWriter {
 public:
  explicit PcapWriter(std::ostream& out, std::uint32_t snaplen = 65535) : out_(out) {
    put32(kPcapMagic);
    put16(2);
    put16(4);
    put32(0);  // thiszone
    put32(0);  // sigfigs
    put32(snaplen);
    put32(kLinktypeEthernet);
  }

  void write(TimePoint ts, ByteView frame) {
    const std::int64_t us = to_micros(ts);
    if (us < 0) throw PcapError(PcapErrorKind::IoError, "timestamp before epoch");
    put32(static_cast<std::uint32_t>(us / 1'000'000));
    put32(static_cast<std::uint32_t>(us % 1'000'000));
    put32(static_cast<std::uint32_t>(frame.size()));
    put32(static_cast<std::uint32_t>(frame.size()));
    out_.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
    if (!out_) throw PcapError(PcapErrorKind::IoError, "pcap write failed");
  }

 private:
  void put16(std::uint16_t v) {
    const char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    out_.write(b, 2);
  }
  void put32(std::uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                       static_cast<char>(v >> 24)};
    out_.write(b, 4);
  }

  std::ostream& out_;
};

}  // namespace eids
