#pragma once

// Authenticated node status / keep-alive datagram. 48 octets, big-endian,
// no padding:
//
//   offset  size  field
//        0     4  magic "EIDS"
//        4     1  version 0x01
//        5     2  node_id
//        7     8  msg_time, ms since epoch (replay protection)
//       15     1  flags: bit0 intrusion since last message, bit1 active mode
//       16    32  HMAC-SHA-256 over octets [0, 16) keyed with the PSK

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <array>
#include <map>

#include "eids/net_types.hpp"

namespace eids {

inline constexpr std::size_t kStatusSignedLen = 16;
inline constexpr std::size_t kStatusHmacLen = 32;
inline constexpr std::size_t kStatusWireLen = kStatusSignedLen + kStatusHmacLen;
inline constexpr std::uint8_t kStatusVersion = 0x01;
inline constexpr std::uint16_t kDefaultAnnouncePort = 47808;
inline constexpr std::array<std::uint8_t, 4> kStatusMagic = {'E', 'I', 'D', 'S'};

namespace statusflag {
inline constexpr std::uint8_t intrusion = 0x01;
inline constexpr std::uint8_t active = 0x02;
}  // namespace statusflag

using StatusWire = std::array<std::uint8_t, kStatusWireLen>;
using Hmac = std::array<std::uint8_t, kStatusHmacLen>;

struct StatusMessage {
  std::uint16_t node_id = 0;
  std::uint64_t msg_time_ms = 0;
  bool intrusion = false;
  bool active = false;

  std::uint8_t flags() const {
    return static_cast<std::uint8_t>((intrusion ? statusflag::intrusion : 0) | (active ? statusflag::active : 0));
  }
  friend bool operator==(const StatusMessage&, const StatusMessage&) = default;
};

enum class AnnounceErrorKind { BadMagic, BadVersion, BadLength, BadHmac, ReplayRejected, FutureSkew };

inline std::string_view to_string(AnnounceErrorKind k) {
  switch (k) {
    case AnnounceErrorKind::BadMagic: return "BadMagic";
    case AnnounceErrorKind::BadVersion: return "BadVersion";
    case AnnounceErrorKind::BadLength: return "BadLength";
    case AnnounceErrorKind::BadHmac: return "BadHmac";
    case AnnounceErrorKind::ReplayRejected: return "ReplayRejected";
    case AnnounceErrorKind::FutureSkew: return "FutureSkew";
  }
  return "?";
}

class AnnounceError : public std::runtime_error {
 public:
  explicit AnnounceError(AnnounceErrorKind kind) : std::runtime_error(std::string(to_string(kind))), kind_(kind) {}
  AnnounceErrorKind kind() const noexcept { return kind_; }

 private:
  AnnounceErrorKind kind_;
};

inline Hmac hmac_sha256(ByteView key, ByteView data) {
  Hmac out{};
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), out.data(), &len) ||
      len != out.size())
    throw std::runtime_error("HMAC-SHA-256 failed");
  return out;
}

inline StatusWire encode(const StatusMessage& m, ByteView psk) {
  if (psk.empty()) throw std::invalid_argument("empty PSK");
  Bytes b;
  b.reserve(kStatusWireLen);
  b.insert(b.end(), kStatusMagic.begin(), kStatusMagic.end());
  b.push_back(kStatusVersion);
  put_be16(b, m.node_id);
  put_be64(b, m.msg_time_ms);
  b.push_back(m.flags());
  const Hmac tag = hmac_sha256(psk, b);
  StatusWire w{};
  std::copy(b.begin(), b.end(), w.begin());
  std::copy(tag.begin(), tag.end(), w.begin() + kStatusSignedLen);
  return w;
}

/// Last accepted msg_time per node; strictly increasing.
class ReplayState {
 public:
  std::optional<std::uint64_t> last(std::uint16_t node) const {
    if (auto it = last_.find(node); it != last_.end()) return it->second;
    return std::nullopt;
  }
  bool fresh(std::uint16_t node, std::uint64_t t) const {
    auto it = last_.find(node);
    return it == last_.end() || t > it->second;
  }
  void accept(std::uint16_t node, std::uint64_t t) { last_[node] = t; }

 private:
  std::map<std::uint16_t, std::uint64_t> last_;
};

/// Checks are ordered length, magic, version, HMAC, freshness. The replay
/// state is updated only on success. `now_ms` with a skew bound rejects
/// timestamps too far in the receiver's future.
inline StatusMessage decode_verify(ByteView bytes, ByteView psk, ReplayState& replay,
                                   std::optional<std::uint64_t> now_ms = std::nullopt,
                                   std::uint64_t max_future_skew_ms = 120'000) {
  if (bytes.size() != kStatusWireLen) throw AnnounceError(AnnounceErrorKind::BadLength);
  if (!std::equal(kStatusMagic.begin(), kStatusMagic.end(), bytes.begin()))
    throw AnnounceError(AnnounceErrorKind::BadMagic);
  if (bytes[4] != kStatusVersion) throw AnnounceError(AnnounceErrorKind::BadVersion);
  if (psk.empty()) throw AnnounceError(AnnounceErrorKind::BadHmac);
  const Hmac expect = hmac_sha256(psk, bytes.first(kStatusSignedLen));
  if (CRYPTO_memcmp(expect.data(), bytes.data() + kStatusSignedLen, kStatusHmacLen) != 0)
    throw AnnounceError(AnnounceErrorKind::BadHmac);
  StatusMessage m;
  m.node_id = load_be16(bytes, 5);
  m.msg_time_ms = static_cast<std::uint64_t>(load_be32(bytes, 7)) << 32 | load_be32(bytes, 11);
  m.intrusion = (bytes[15] & statusflag::intrusion) != 0;
  m.active = (bytes[15] & statusflag::active) != 0;
  if (!replay.fresh(m.node_id, m.msg_time_ms)) throw AnnounceError(AnnounceErrorKind::ReplayRejected);
  if (now_ms && m.msg_time_ms > *now_ms + max_future_skew_ms) throw AnnounceError(AnnounceErrorKind::FutureSkew);
  replay.accept(m.node_id, m.msg_time_ms);
  return m;
}

/// True when a keep-alive is due. A clock that stepped backwards counts as
/// zero elapsed.
inline bool keepalive_due(TimePoint last_sent, TimePoint now, Duration period = std::chrono::seconds(10)) {
  if (now < last_sent) return false;
  return now - last_sent >= period;
}

inline std::uint64_t to_epoch_ms(TimePoint t) { return static_cast<std::uint64_t>(to_micros(t) / 1000); }

}  // namespace eids
