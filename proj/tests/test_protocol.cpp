#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "hatpic/protocol.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hatpic;
using namespace hatpic::wire;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::vector<std::uint8_t> concat(const std::vector<Frame>& frames) {
  std::vector<std::uint8_t> out;
  for (const auto& f : frames) encode_into(f, out);
  return out;
}

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("crc check value") {
  const auto msg = bytes_of("123456789");
  CHECK(crc16_ccitt_false(msg) == 0x29B1);
  CHECK(oracle::crc16(msg) == 0x29B1);
  CHECK(crc16_ccitt_false({}) == 0xFFFF);
}

TEST_CASE("table crc agrees with the bitwise oracle") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::uint8_t> data(rng() % 80);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    REQUIRE(crc16_ccitt_false(data) == oracle::crc16(data));
  }
}

TEST_CASE("feedback frame bytes") {
  const auto bytes = encode(make_frame(0, FeedbackPayload{0}));
  const std::vector<std::uint8_t> expected{0xAA, 0x55, 0x01, 0x02, 0x00, 0x04, 0x00, 0x00, 0x00, 0x00, 0x08, 0x9F};
  CHECK(bytes == expected);
  const std::vector<std::uint8_t> body(expected.begin() + 2, expected.end() - 2);
  CHECK(oracle::crc16(body) == 0x9F08);
}

TEST_CASE("telemetry frame layout") {
  const auto bytes = encode(make_frame(7, TelemetryPayload{}));
  REQUIRE(bytes.size() == 24);
  CHECK(bytes[0] == 0xAA);
  CHECK(bytes[1] == 0x55);
  CHECK(bytes[2] == 0x01);
  CHECK(bytes[3] == 0x01);
  CHECK(bytes[4] == 7);
  CHECK(bytes[5] == 16);
  CHECK(bytes[22] == 0xC0);
  CHECK(bytes[23] == 0xF3);

  const auto le = encode(make_frame(1, TelemetryPayload{0x01020304, -2, 0, 0xA0B0C0D0u}));
  CHECK(le[6] == 0x04);
  CHECK(le[9] == 0x01);
  CHECK(le[10] == 0xFE);
  CHECK(le[13] == 0xFF);
  CHECK(le[18] == 0xD0);
  CHECK(le[21] == 0xA0);
}

TEST_CASE("config payload is ten little-endian words") {
  ConfigPayload p{1, 2, 3, 4, 5, 6, 7, 8, 9, -10};
  const auto bytes = encode(make_frame(3, p));
  REQUIRE(bytes.size() == 48);
  CHECK(bytes[5] == 40);
  for (int i = 0; i < 9; ++i) CHECK(bytes[6 + 4 * i] == i + 1);
  CHECK(bytes[6 + 36] == 0xF6);
  CHECK(config_of(FrameParser().feed(bytes).at(0)) == p);
}

TEST_CASE("encode rejects schema violations and leaves the buffer alone") {
  std::vector<std::uint8_t> out{1, 2, 3};
  Frame bad = make_frame(0, FeedbackPayload{5});
  bad.payload.push_back(0);
  CHECK_THROWS_AS(encode_into(bad, out), EncodeError);
  CHECK(out.size() == 3);
  Frame v2 = make_frame(0, FeedbackPayload{5});
  v2.version = 2;
  CHECK_THROWS_AS(encode(v2), EncodeError);
  Frame unknown = make_frame(0, FeedbackPayload{5});
  unknown.type = static_cast<FrameType>(0x7F);
  CHECK_THROWS_AS(encode(unknown), EncodeError);
}

TEST_CASE("payload views check type and size") {
  const auto fb = make_frame(0, FeedbackPayload{-220000});
  CHECK(feedback_of(fb).tau_ext_unm == -220000);
  CHECK_THROWS_AS(telemetry_of(fb), std::invalid_argument);
  Frame short_fb = fb;
  short_fb.payload.pop_back();
  CHECK_THROWS_AS(feedback_of(short_fb), std::invalid_argument);
  CHECK(config_ack_of(make_frame(9, ConfigAckPayload{ConfigStatus::rejected})).status == ConfigStatus::rejected);
}

TEST_CASE("round trip of random frames") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 20000; ++i) {
    const auto f = testing_support::random_frame(rng);
    FrameParser p;
    const auto out = p.feed(encode(f));
    REQUIRE(out.size() == 1);
    REQUIRE(out[0] == f);
    REQUIRE(p.diagnostics().clean());
  }
}

TEST_CASE("arbitrary chunking yields the same frames") {
  std::mt19937_64 rng(23);
  std::vector<Frame> frames;
  for (int i = 0; i < 500; ++i) frames.push_back(testing_support::random_frame(rng));
  const auto stream = concat(frames);
  for (int trial = 0; trial < 50; ++trial) {
    FrameParser p;
    std::vector<Frame> got;
    std::size_t at = 0;
    while (at < stream.size()) {
      const std::size_t n = std::min<std::size_t>(stream.size() - at, 1 + rng() % 70);
      p.feed(std::span(stream).subspan(at, n), got);
      at += n;
    }
    p.finish();
    REQUIRE(got == frames);
    REQUIRE(p.diagnostics().clean());
  }
  FrameParser bytewise;
  std::vector<Frame> got;
  for (auto b : stream) bytewise.feed(std::span(&b, 1), got);
  CHECK(got == frames);
}

TEST_CASE("every single-bit flip is detected and the next frame still arrives") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 40; ++trial) {
    const auto victim = testing_support::random_frame(rng);
    const auto next = testing_support::random_frame(rng);
    const auto clean = concat({victim, next});
    const std::size_t victim_bits = encode(victim).size() * 8;
    for (std::size_t bit = 0; bit < victim_bits; ++bit) {
      auto bytes = clean;
      bytes[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
      FrameParser p;
      const auto got = p.feed(bytes);
      REQUIRE(got.size() == 1);
      REQUIRE(got[0] == next);
    }
  }
}

TEST_CASE("unknown type with a valid crc is skipped whole") {
  std::vector<std::uint8_t> odd{0xAA, 0x55, 0x01, 0x42, 0x00, 0x02, 0xAA, 0x55};
  const auto crc = oracle::crc16({odd.begin() + 2, odd.end()});
  odd.push_back(static_cast<std::uint8_t>(crc));
  odd.push_back(static_cast<std::uint8_t>(crc >> 8));
  const auto good = make_frame(5, FeedbackPayload{77});
  auto stream = odd;
  encode_into(good, stream);
  FrameParser p;
  const auto got = p.feed(stream);
  REQUIRE(got.size() == 1);
  CHECK(got[0] == good);
  CHECK(p.diagnostics().unknown_type == 1);
  CHECK(p.diagnostics().resyncs == 0);
}

TEST_CASE("parser diagnostics") {
  SUBCASE("garbage before a frame") {
    std::vector<std::uint8_t> stream{0x00, 0x11, 0x22, 0x33, 0x44};
    encode_into(make_frame(1, FeedbackPayload{1}), stream);
    FrameParser p;
    CHECK(p.feed(stream).size() == 1);
    CHECK(p.diagnostics().resyncs == 1);
    CHECK(p.diagnostics().discarded_bytes == 5);
  }
  SUBCASE("crc failure") {
    auto stream = encode(make_frame(1, FeedbackPayload{1}));
    stream[7] ^= 0x10;
    FrameParser p;
    CHECK(p.feed(stream).empty());
    CHECK(p.diagnostics().crc_failures == 1);
    CHECK(p.diagnostics().resyncs == 1);
    CHECK(p.diagnostics().discarded_bytes == stream.size());
  }
  SUBCASE("truncated tail") {
    auto stream = encode(make_frame(1, TelemetryPayload{}));
    stream.resize(10);
    FrameParser p;
    CHECK(p.feed(stream).empty());
    CHECK(p.buffered() == 10);
    p.finish();
    CHECK(p.diagnostics().truncated == 1);
    CHECK(p.diagnostics().discarded_bytes == 10);
    CHECK(p.buffered() == 0);
  }
  SUBCASE("overlapping sync inside a corrupted frame") {
    std::vector<std::uint8_t> stream{0xAA, 0x55, 0x01, 0x02};
    encode_into(make_frame(3, FeedbackPayload{3}), stream);
    FrameParser p;
    const auto got = p.feed(stream);
    REQUIRE(got.size() == 1);
    CHECK(feedback_of(got[0]).tau_ext_unm == 3);
  }
  SUBCASE("empty stream") {
    FrameParser p;
    p.finish();
    CHECK(p.diagnostics() == ParserDiagnostics{});
  }
}

TEST_CASE("random noise with embedded frames") {
  std::mt19937_64 rng(25);
  std::vector<std::uint8_t> stream(256 * 1024);
  for (auto& b : stream) b = static_cast<std::uint8_t>(rng());
  std::vector<Frame> planted;
  std::vector<std::size_t> spots;
  for (int i = 0; i < 50; ++i) spots.push_back(rng() % stream.size());
  std::sort(spots.begin(), spots.end(), std::greater<>());
  for (auto at : spots) {
    const auto f = testing_support::random_frame(rng);
    const auto enc = encode(f);
    stream.insert(stream.begin() + static_cast<std::ptrdiff_t>(at), enc.begin(), enc.end());
    planted.insert(planted.begin(), f);
  }
  FrameParser p;
  const auto got = p.feed(stream);
  std::size_t matched = 0;
  for (const auto& f : got) {
    if (matched < planted.size() && f == planted[matched]) ++matched;
  }
  CHECK(matched == planted.size());
}

TEST_CASE("micro-unit quantization") {
  CHECK(to_micro(0.1234567).value == 123457);
  CHECK(to_micro(0.123456).value == 123456);
  CHECK(to_micro(-0.123456).value == -123456);
  CHECK(to_micro(2.5e-6).value == 2);
  CHECK(to_micro(3.5e-6).value == 4);
  CHECK(to_micro(-2.5e-6).value == -2);
  CHECK(to_micro(1e6).saturated);
  CHECK(to_micro(1e6).value == std::numeric_limits<std::int32_t>::max());
  CHECK(to_micro(-1e6).value == std::numeric_limits<std::int32_t>::min());
  CHECK(to_micro(std::nan("")).saturated);
  CHECK(to_micro(std::numeric_limits<double>::infinity()).saturated);
  CHECK_FALSE(to_micro(2147.0).saturated);
}

TEST_CASE("state quantization error is at most half a micro-unit") {
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<> u(-2.0, 2.0);
  for (int i = 0; i < 10000; ++i) {
    JoystickState s{u(rng), 5.0 * u(rng), 0.2 * u(rng), std::fabs(100.0 * u(rng))};
    const auto q = quantize_state(s);
    REQUIRE_FALSE(q.saturated);
    const auto back = dequantize_payload(q.payload);
    REQUIRE(std::fabs(back.theta - s.theta) <= 0.5e-6 + 1e-15);
    REQUIRE(std::fabs(back.omega - s.omega) <= 0.5e-6 + 1e-15);
    REQUIRE(std::fabs(back.tau_operator - s.tau_operator) <= 0.5e-6 + 1e-15);
    REQUIRE(std::fabs(back.t - s.t) <= 0.5e-6 + 1e-12);
  }
}

TEST_CASE("timestamp wraps") {
  JoystickState s;
  s.t = 4294.967296 + 0.001;
  CHECK(quantize_state(s).payload.t_us == 1000);
  CHECK(elapsed_seconds(0xFFFFFF00u, 0x100u) == doctest::Approx(512e-6));
  CHECK(elapsed_seconds(1000, 3000) == doctest::Approx(2e-3));
}

}  // TEST_SUITE
