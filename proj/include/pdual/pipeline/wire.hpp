#pragma once

// Length-prefixed frames shared by every transport:
//
//   u32 payload length (little endian) | u8 type tag | payload
//
// The payload is a sequence of little-endian IEEE-754 f64 fields in
// declared order; integer fields are carried as exactly representable f64.
//
//   0x01 measurement   k, timestamp, y[6M]
//   0x02 param update  source, K, timestamp, theta[3(N-1)]
//   0x03 threshold     beta, timestamp
//   0x04 shutdown      (empty)

#include "pdual/kinematics.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pdual {

struct MeasurementMsg {
  std::uint64_t k = 0;
  double timestamp = 0.0;
  VecX y;
};

struct ParamUpdateMsg {
  std::uint64_t source = 0;
  std::uint64_t K = 0;
  double timestamp = 0.0;
  VecX theta;
};

struct ThresholdMsg {
  std::uint64_t beta = 0;
  double timestamp = 0.0;
};

struct ShutdownMsg {};

using Message = std::variant<MeasurementMsg, ParamUpdateMsg, ThresholdMsg, ShutdownMsg>;

enum class MessageTag : std::uint8_t {
  Measurement = 0x01,
  ParamUpdate = 0x02,
  Threshold = 0x03,
  Shutdown = 0x04,
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kFrameHeaderSize = 5;
inline constexpr std::uint32_t kMaxPayload = 1u << 24;

namespace wire {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::uint64_t to_count(double d, const char* field) {
  if (!(d >= 0.0) || d > 9007199254740992.0 || std::floor(d) != d) {
    throw ProtocolError(std::string("field '") + field + "' is not a nonnegative integer");
  }
  return static_cast<std::uint64_t>(d);
}

}  // namespace wire

inline MessageTag tag_of(const Message& m) {
  return static_cast<MessageTag>(m.index() + 1);
}

/// Full frame (header included).
inline std::vector<std::uint8_t> encode(const Message& msg) {
  std::vector<double> fields;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MeasurementMsg>) {
          fields.push_back(static_cast<double>(m.k));
          fields.push_back(m.timestamp);
          fields.insert(fields.end(), m.y.data(), m.y.data() + m.y.size());
        } else if constexpr (std::is_same_v<T, ParamUpdateMsg>) {
          fields.push_back(static_cast<double>(m.source));
          fields.push_back(static_cast<double>(m.K));
          fields.push_back(m.timestamp);
          fields.insert(fields.end(), m.theta.data(), m.theta.data() + m.theta.size());
        } else if constexpr (std::is_same_v<T, ThresholdMsg>) {
          fields.push_back(static_cast<double>(m.beta));
          fields.push_back(m.timestamp);
        }
      },
      msg);
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + 8 * fields.size());
  wire::put_u32(out, static_cast<std::uint32_t>(8 * fields.size()));
  out.push_back(static_cast<std::uint8_t>(tag_of(msg)));
  for (double d : fields) wire::put_f64(out, d);
  return out;
}

/// Decodes one payload given its tag.
inline Message decode(std::uint8_t tag, std::span<const std::uint8_t> payload) {
  if (payload.size() % 8 != 0) throw ProtocolError("payload length is not a multiple of 8");
  const std::size_t count = payload.size() / 8;
  auto field = [&](std::size_t i) { return wire::get_f64(payload.data() + 8 * i); };
  auto tail = [&](std::size_t from) {
    VecX v(static_cast<Eigen::Index>(count - from));
    for (std::size_t i = from; i < count; ++i) v[static_cast<Eigen::Index>(i - from)] = field(i);
    return v;
  };
  switch (static_cast<MessageTag>(tag)) {
    case MessageTag::Measurement:
      if (count < 2) throw ProtocolError("measurement frame too short");
      return MeasurementMsg{wire::to_count(field(0), "k"), field(1), tail(2)};
    case MessageTag::ParamUpdate:
      if (count < 3) throw ProtocolError("param update frame too short");
      return ParamUpdateMsg{wire::to_count(field(0), "source"), wire::to_count(field(1), "K"),
                            field(2), tail(3)};
    case MessageTag::Threshold:
      if (count != 2) throw ProtocolError("threshold frame must carry 2 fields");
      return ThresholdMsg{wire::to_count(field(0), "beta"), field(1)};
    case MessageTag::Shutdown:
      if (count != 0) throw ProtocolError("shutdown frame must be empty");
      return ShutdownMsg{};
  }
  throw ProtocolError("unknown message tag " + std::to_string(tag));
}

/// Decodes a complete frame produced by encode().
inline Message decode_frame(std::span<const std::uint8_t> frame) {
  if (frame.size() < kFrameHeaderSize) throw ProtocolError("frame shorter than header");
  const std::uint32_t len = wire::get_u32(frame.data());
  if (frame.size() != kFrameHeaderSize + len) throw ProtocolError("frame length mismatch");
  return decode(frame[4], frame.subspan(kFrameHeaderSize));
}

}  // namespace pdual
