#include "hatpic/protocol.hpp"

#include <cmath>
#include <limits>

namespace hatpic::wire {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
  std::array<std::uint16_t, 256> table{};
  for (unsigned i = 0; i < 256; ++i) {
    auto crc = static_cast<std::uint16_t>(i << 8);
    for (int b = 0; b < 8; ++b) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                           : static_cast<std::uint16_t>(crc << 1);
    }
    table[i] = crc;
  }
  return table;
}

constexpr auto kCrcTable = make_crc_table();

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_i32(std::vector<std::uint8_t>& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::uint32_t>(in[at]) | (static_cast<std::uint32_t>(in[at + 1]) << 8) |
         (static_cast<std::uint32_t>(in[at + 2]) << 16) |
         (static_cast<std::uint32_t>(in[at + 3]) << 24);
}

std::int32_t get_i32(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::int32_t>(get_u32(in, at));
}

void expect(const Frame& f, FrameType type) {
  if (f.type != type) {
    throw std::invalid_argument("frame type mismatch");
  }
  if (f.payload.size() != payload_size(static_cast<std::uint8_t>(type))) {
    throw std::invalid_argument("frame payload size mismatch");
  }
}

Frame frame_with(FrameType type, std::uint8_t seq, std::vector<std::uint8_t> payload) {
  Frame f;
  f.type = type;
  f.seq = seq;
  f.payload = std::move(payload);
  return f;
}

}  // namespace

std::optional<std::size_t> payload_size(std::uint8_t type) {
  switch (static_cast<FrameType>(type)) {
    case FrameType::telemetry: return 16;
    case FrameType::feedback: return 4;
    case FrameType::config_set: return 40;
    case FrameType::config_ack: return 1;
  }
  return std::nullopt;
}

std::uint16_t crc16_ccitt_false(std::span<const std::uint8_t> data) {
  std::uint16_t crc = 0xFFFF;
  for (std::uint8_t byte : data) {
    crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ byte) & 0xFF]);
  }
  return crc;
}

void encode_into(const Frame& frame, std::vector<std::uint8_t>& out) {
  if (frame.version != kVersion) {
    throw EncodeError("unsupported protocol version");
  }
  const auto expected = payload_size(static_cast<std::uint8_t>(frame.type));
  if (!expected) {
    throw EncodeError("unknown frame type");
  }
  if (frame.payload.size() != *expected) {
    throw EncodeError("payload length does not match frame type");
  }

  const std::size_t start = out.size();
  out.reserve(start + kOverhead + frame.payload.size());
  out.push_back(kSync0);
  out.push_back(kSync1);
  out.push_back(frame.version);
  out.push_back(static_cast<std::uint8_t>(frame.type));
  out.push_back(frame.seq);
  out.push_back(static_cast<std::uint8_t>(frame.payload.size()));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  const auto crc = crc16_ccitt_false(std::span(out).subspan(start + 2));
  out.push_back(static_cast<std::uint8_t>(crc));
  out.push_back(static_cast<std::uint8_t>(crc >> 8));
}

std::vector<std::uint8_t> encode(const Frame& frame) {
  std::vector<std::uint8_t> out;
  encode_into(frame, out);
  return out;
}

// ---------------------------------------------------------------------------

void FrameParser::drop_one() {
  if (!hunting_) {
    hunting_ = true;
    ++diag_.resyncs;
  }
  ++diag_.discarded_bytes;
  ++head_;
}

void FrameParser::compact() {
  if (head_ == buf_.size()) {
    buf_.clear();
    head_ = 0;
  } else if (head_ > 4096 && head_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(head_));
    head_ = 0;
  }
}

void FrameParser::feed(std::span<const std::uint8_t> bytes, std::vector<Frame>& frames) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());

  while (true) {
    const std::size_t avail = buf_.size() - head_;
    const std::uint8_t* p = buf_.data() + head_;

    if (avail < 1) break;
    if (p[0] != kSync0) { drop_one(); continue; }
    if (avail < 2) break;
    if (p[1] != kSync1) { drop_one(); continue; }
    if (avail < 3) break;
    if (p[2] != kVersion) { drop_one(); continue; }
    if (avail < kHeaderSize) break;

    const std::uint8_t type = p[3];
    const std::size_t len = p[5];
    const auto schema = payload_size(type);
    if (len > kMaxPayload || (schema && *schema != len)) {
      drop_one();
      continue;
    }
    const std::size_t total = kOverhead + len;
    if (avail < total) break;

    const auto crc = static_cast<std::uint16_t>(p[kHeaderSize + len] |
                                                (p[kHeaderSize + len + 1] << 8));
    if (crc16_ccitt_false(std::span(p + 2, kHeaderSize - 2 + len)) != crc) {
      ++diag_.crc_failures;
      drop_one();
      continue;
    }

    if (schema) {
      Frame f;
      f.version = p[2];
      f.type = static_cast<FrameType>(type);
      f.seq = p[4];
      f.payload.assign(p + kHeaderSize, p + kHeaderSize + len);
      frames.push_back(std::move(f));
    } else {
      ++diag_.unknown_type;
    }
    head_ += total;
    hunting_ = false;
  }
  compact();
}

std::vector<Frame> FrameParser::feed(std::span<const std::uint8_t> bytes) {
  std::vector<Frame> frames;
  feed(bytes, frames);
  return frames;
}

void FrameParser::finish() {
  if (buffered() > 0) {
    ++diag_.truncated;
    diag_.discarded_bytes += buffered();
    buf_.clear();
    head_ = 0;
  }
  hunting_ = false;
}

// ---------------------------------------------------------------------------

Frame make_frame(std::uint8_t seq, const TelemetryPayload& p) {
  std::vector<std::uint8_t> b;
  b.reserve(16);
  put_i32(b, p.theta_urad);
  put_i32(b, p.omega_urad_s);
  put_i32(b, p.tau_unm);
  put_u32(b, p.t_us);
  return frame_with(FrameType::telemetry, seq, std::move(b));
}

Frame make_frame(std::uint8_t seq, const FeedbackPayload& p) {
  std::vector<std::uint8_t> b;
  b.reserve(4);
  put_i32(b, p.tau_ext_unm);
  return frame_with(FrameType::feedback, seq, std::move(b));
}

Frame make_frame(std::uint8_t seq, const ConfigPayload& p) {
  std::vector<std::uint8_t> b;
  b.reserve(40);
  for (std::int32_t v : {p.theta0_urad, p.q_dz_urad, p.n_urad, p.k_min_u, p.k_max_u, p.d_adm_u,
                         p.m_adm_u, p.tau_max_unm, p.theta_max_urad, p.k_stop_u}) {
    put_i32(b, v);
  }
  return frame_with(FrameType::config_set, seq, std::move(b));
}

Frame make_frame(std::uint8_t seq, const ConfigAckPayload& p) {
  return frame_with(FrameType::config_ack, seq, {static_cast<std::uint8_t>(p.status)});
}

TelemetryPayload telemetry_of(const Frame& f) {
  expect(f, FrameType::telemetry);
  return {get_i32(f.payload, 0), get_i32(f.payload, 4), get_i32(f.payload, 8),
          get_u32(f.payload, 12)};
}

FeedbackPayload feedback_of(const Frame& f) {
  expect(f, FrameType::feedback);
  return {get_i32(f.payload, 0)};
}

ConfigPayload config_of(const Frame& f) {
  expect(f, FrameType::config_set);
  ConfigPayload p;
  std::int32_t* fields[] = {&p.theta0_urad, &p.q_dz_urad, &p.n_urad,  &p.k_min_u,
                            &p.k_max_u,     &p.d_adm_u,   &p.m_adm_u, &p.tau_max_unm,
                            &p.theta_max_urad, &p.k_stop_u};
  for (std::size_t i = 0; i < std::size(fields); ++i) {
    *fields[i] = get_i32(f.payload, 4 * i);
  }
  return p;
}

ConfigAckPayload config_ack_of(const Frame& f) {
  expect(f, FrameType::config_ack);
  return {f.payload[0] == 0 ? ConfigStatus::accepted : ConfigStatus::rejected};
}

// ---------------------------------------------------------------------------

Quantized to_micro(double si) {
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  if (std::isnan(si)) {
    return {0, true};
  }
  // nearbyint honours the default round-to-nearest-even mode.
  const double scaled = std::nearbyint(si * 1e6);
  if (scaled < lo) return {std::numeric_limits<std::int32_t>::min(), true};
  if (scaled > hi) return {std::numeric_limits<std::int32_t>::max(), true};
  return {static_cast<std::int32_t>(scaled), false};
}

QuantizedState quantize_state(const JoystickState& state) {
  QuantizedState q;
  const auto theta = to_micro(state.theta);
  const auto omega = to_micro(state.omega);
  const auto tau = to_micro(state.tau_operator);
  q.payload.theta_urad = theta.value;
  q.payload.omega_urad_s = omega.value;
  q.payload.tau_unm = tau.value;
  q.saturated = theta.saturated || omega.saturated || tau.saturated;

  double t_us = std::nearbyint(state.t * 1e6);
  if (!std::isfinite(t_us) || t_us < 0.0) {
    t_us = 0.0;
    q.saturated = true;
  }
  // Wraps every 2^32 us (~71.6 min).
  q.payload.t_us = static_cast<std::uint32_t>(
      static_cast<std::uint64_t>(std::fmod(t_us, 4294967296.0)));
  return q;
}

JoystickState dequantize_payload(const TelemetryPayload& p) {
  return {from_micro(p.theta_urad), from_micro(p.omega_urad_s), from_micro(p.tau_unm),
          static_cast<double>(p.t_us) / 1e6};
}

double elapsed_seconds(std::uint32_t a_us, std::uint32_t b_us) {
  return static_cast<double>(static_cast<std::uint32_t>(b_us - a_us)) / 1e6;
}

}  // namespace hatpic::wire
