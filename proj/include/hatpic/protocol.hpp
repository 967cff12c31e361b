// Device <-> host dataframe (protocol v1).
//
//   AA 55 | version | type | seq | len | payload[len] | crc_lo crc_hi
//
// CRC-16/CCITT-FALSE over version..payload. Payload integers are
// little-endian fixed point in micro-units. See docs/protocol.md.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hatpic/core.hpp"

namespace hatpic::wire {

inline constexpr std::uint8_t kSync0 = 0xAA;
inline constexpr std::uint8_t kSync1 = 0x55;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 6;  // sync0 sync1 version type seq len
inline constexpr std::size_t kOverhead = 8;    // header + crc
inline constexpr std::size_t kMaxPayload = 64;

enum class FrameType : std::uint8_t {
  telemetry = 0x01,
  feedback = 0x02,
  config_set = 0x03,
  config_ack = 0x04,
};

/// Schema length for a known type, std::nullopt otherwise.
std::optional<std::size_t> payload_size(std::uint8_t type);

struct Frame {
  std::uint8_t version = kVersion;
  FrameType type = FrameType::telemetry;
  std::uint8_t seq = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> data);

/// Serializes a frame. Throws EncodeError (and writes nothing) when the frame
/// violates its schema.
std::vector<std::uint8_t> encode(const Frame& frame);

/// Appends the encoded frame to `out`; on error `out` is left untouched.
void encode_into(const Frame& frame, std::vector<std::uint8_t>& out);

struct ParserDiagnostics {
  std::uint64_t resyncs = 0;          // times the parser lost sync and went hunting
  std::uint64_t discarded_bytes = 0;  // bytes skipped while hunting
  std::uint64_t crc_failures = 0;
  std::uint64_t unknown_type = 0;
  std::uint64_t truncated = 0;        // partial frame pending at end of stream

  bool clean() const {
    return resyncs == 0 && crc_failures == 0 && unknown_type == 0 && truncated == 0;
  }
  bool operator==(const ParserDiagnostics&) const = default;
};

/// Incremental, resynchronizing stream parser. One instance per byte stream.
///
/// Any violation (bad sync, version, length or CRC) drops exactly one byte and
/// the hunt restarts from the next one, so overlapping sync patterns are found.
/// Frames with a verified CRC but an unknown type are skipped whole.
class FrameParser {
 public:
  /// Consumes `bytes`, appending every completed frame to `frames`.
  void feed(std::span<const std::uint8_t> bytes, std::vector<Frame>& frames);
  std::vector<Frame> feed(std::span<const std::uint8_t> bytes);

  /// Marks end of stream. A partially received frame counts as truncated.
  void finish();

  const ParserDiagnostics& diagnostics() const { return diag_; }
  std::size_t buffered() const { return buf_.size() - head_; }

 private:
  void drop_one();
  void compact();

  std::vector<std::uint8_t> buf_;
  std::size_t head_ = 0;
  bool hunting_ = false;
  ParserDiagnostics diag_;
};

// ---------------------------------------------------------------------------
// Payloads

struct TelemetryPayload {
  std::int32_t theta_urad = 0;
  std::int32_t omega_urad_s = 0;
  std::int32_t tau_unm = 0;
  std::uint32_t t_us = 0;

  bool operator==(const TelemetryPayload&) const = default;
};

struct FeedbackPayload {
  std::int32_t tau_ext_unm = 0;

  bool operator==(const FeedbackPayload&) const = default;
};

/// Device parameters pushed by the host, all in micro-units.
struct ConfigPayload {
  std::int32_t theta0_urad = 0;
  std::int32_t q_dz_urad = 0;
  std::int32_t n_urad = 0;
  std::int32_t k_min_u = 0;      // uN*m/rad
  std::int32_t k_max_u = 0;      // uN*m/rad
  std::int32_t d_adm_u = 0;      // uN*m*s^2/rad
  std::int32_t m_adm_u = 0;      // uN*m*s/rad
  std::int32_t tau_max_unm = 0;
  std::int32_t theta_max_urad = 0;
  std::int32_t k_stop_u = 0;     // uN*m/rad

  bool operator==(const ConfigPayload&) const = default;
};

enum class ConfigStatus : std::uint8_t { accepted = 0, rejected = 1 };

struct ConfigAckPayload {
  ConfigStatus status = ConfigStatus::accepted;
  bool operator==(const ConfigAckPayload&) const = default;
};

Frame make_frame(std::uint8_t seq, const TelemetryPayload& p);
Frame make_frame(std::uint8_t seq, const FeedbackPayload& p);
Frame make_frame(std::uint8_t seq, const ConfigPayload& p);
Frame make_frame(std::uint8_t seq, const ConfigAckPayload& p);

/// Payload views of a frame. Throw std::invalid_argument on a type or size
/// mismatch.
TelemetryPayload telemetry_of(const Frame& f);
FeedbackPayload feedback_of(const Frame& f);
ConfigPayload config_of(const Frame& f);
ConfigAckPayload config_ack_of(const Frame& f);

// ---------------------------------------------------------------------------
// Fixed-point conversion

/// SI value -> micro-units, round half to even, saturating at the i32 range.
struct Quantized {
  std::int32_t value = 0;
  bool saturated = false;
};
Quantized to_micro(double si);
inline double from_micro(std::int32_t micro) { return static_cast<double>(micro) / 1e6; }

struct QuantizedState {
  TelemetryPayload payload;
  bool saturated = false;
};

QuantizedState quantize_state(const JoystickState& state);
JoystickState dequantize_payload(const TelemetryPayload& p);

/// Wrapping microsecond difference b - a, in seconds.
double elapsed_seconds(std::uint32_t a_us, std::uint32_t b_us);

}  // namespace hatpic::wire
