#include <doctest.h>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "hatpic/firmware.hpp"
#include "hatpic/transport.hpp"
#include "oracles.hpp"

using namespace hatpic;
using namespace std::chrono_literals;

namespace {

FirmwareConfig with_hand(OperatorKind kind, double amplitude) {
  FirmwareConfig c;
  c.operator_input.segments.push_back({kind, amplitude, 0.0, 0.0, std::numeric_limits<double>::infinity()});
  return c;
}

JoystickState run_for(FirmwareEmulator& fw, double seconds) {
  const auto n = static_cast<int>(std::llround(seconds / fw.config().admittance.dt));
  for (int i = 0; i < n; ++i) fw.tick();
  return fw.true_state();
}

// Angle where a constant hand torque h balances the spring and the hard stop.
double balance_angle(double h, const FirmwareConfig& c) {
  const auto& s = c.stiffness;
  return oracle::bisect(
      [&](double th) {
        const double rec = std::clamp(-oracle::stiffness(th, s.theta0, s.q_dz, s.n, s.k_min, s.k_max) * th,
                                      -c.admittance.tau_max, c.admittance.tau_max);
        const double stop = th > c.servo.theta_max ? -c.servo.k_stop * (th - c.servo.theta_max) : 0.0;
        return h + rec + stop;
      },
      s.q_dz, 2.0);
}

}  // namespace

TEST_SUITE("firmware") {

TEST_CASE("hard stop torque") {
  ServoModel s;
  CHECK(hard_stop_torque(0.5, s) == 0.0);
  CHECK(hard_stop_torque(1.0, s) == 0.0);
  CHECK(hard_stop_torque(1.01, s) == doctest::Approx(-2.0));
  CHECK(hard_stop_torque(-1.01, s) == doctest::Approx(2.0));
}

TEST_CASE("hold torque settles where the spring balances it") {
  FirmwareEmulator fw(with_hand(OperatorKind::hold, 0.1));
  const auto s = run_for(fw, 5.0);
  CHECK(s.theta == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(std::fabs(s.omega) < 1e-4);
}

TEST_CASE("step of 0.2 settles at 0.2") {
  FirmwareEmulator fw(with_hand(OperatorKind::step, 0.2));
  const auto s = run_for(fw, 5.0);
  CHECK(s.theta == doctest::Approx(0.2).epsilon(1e-4));
}

TEST_CASE("step of 0.6 overpowers the spring and rests on the hard stop") {
  const auto cfg = with_hand(OperatorKind::step, 0.6);
  FirmwareEmulator fw(cfg);
  const auto s = run_for(fw, 8.0);
  const double expected = balance_angle(0.6, cfg);
  CHECK(expected > cfg.servo.theta_max);
  CHECK(s.theta == doctest::Approx(expected).epsilon(1e-6));
  CHECK(fw.summary().max_abs_tau_total <= cfg.admittance.tau_max);
}

TEST_CASE("records carry the pre-tick state and the clamped torque") {
  FirmwareConfig c = with_hand(OperatorKind::step, 0.2);
  c.initial_theta = 0.4;
  FirmwareEmulator fw(c);
  fw.post_feedback(0.3);
  const auto r = fw.tick();
  CHECK(r.input.theta == 0.4);
  CHECK(r.input.t == 0.0);
  CHECK(r.input.tau_operator == -0.2);
  CHECK(r.hand_torque == 0.2);
  CHECK(r.tau_ext == 0.3);
  CHECK(r.tau_rec == doctest::Approx(-oracle::stiffness(0.4, 0, 0.05, 0.3, 0.2, 1.0) * 0.4));
  CHECK(r.tau_total == doctest::Approx(total_feedback(r.tau_rec, 0.3, 0.44)));
  CHECK(r.sample.t == doctest::Approx(1e-3));
}

TEST_CASE("seeded noise is reproducible") {
  FirmwareConfig c = with_hand(OperatorKind::sine, 0.1);
  c.operator_input.segments[0].frequency = 2.0;
  c.operator_input.noise_std = 0.01;
  c.seed = 99;
  FirmwareEmulator a(c), b(c);
  for (int i = 0; i < 3000; ++i) {
    const auto ra = a.tick();
    const auto rb = b.tick();
    REQUIRE(ra.sample == rb.sample);
    REQUIRE(ra.hand_torque == rb.hand_torque);
  }
  c.seed = 100;
  FirmwareEmulator d(c);
  FirmwareEmulator e(a.config());
  bool differs = false;
  for (int i = 0; i < 10 && !differs; ++i) differs = d.tick().hand_torque != e.tick().hand_torque;
  CHECK(differs);
}

TEST_CASE("stale feedback is held, then faded to zero") {
  FirmwareConfig c;
  c.stiffness.q_dz = 0.5;
  c.stiffness.n = 0.6;
  FirmwareEmulator fw(c);
  fw.post_feedback(0.1);
  std::vector<TickRecord> recs;
  for (int i = 0; i < 400; ++i) recs.push_back(fw.tick());
  CHECK(recs[50].tau_ext == 0.1);
  CHECK(recs[100].tau_ext == 0.1);
  CHECK(recs[200].tau_ext == doctest::Approx(0.05));
  CHECK(recs[301].tau_ext == 0.0);
  CHECK(recs[399].tau_ext == 0.0);
}

TEST_CASE("non-finite feedback is discarded") {
  FirmwareEmulator fw(FirmwareConfig{});
  fw.post_feedback(0.05);
  fw.tick();
  fw.post_feedback(std::nan(""));
  const auto r = fw.tick();
  CHECK(r.tau_ext == 0.05);
  CHECK(fw.summary().discarded_feedback == 1);
  fw.post_feedback(std::numeric_limits<double>::infinity());
  CHECK(fw.tick().tau_ext == 0.05);
  CHECK(fw.summary().discarded_feedback == 2);
}

TEST_CASE("config updates are validated before they take effect") {
  FirmwareEmulator fw(FirmwareConfig{});
  std::uint64_t seen = 0;

  DeviceParams ok{{0.0, 0.02, 0.25, 0.1, 0.8}, 0.02, 0.2, 0.3, 0.9, 150.0};
  fw.post_config(ok);
  fw.tick();
  CHECK(fw.config().stiffness.q_dz == 0.02);
  CHECK(fw.config().admittance.tau_max == 0.3);
  CHECK(fw.config().servo.theta_max == 0.9);
  CHECK(fw.config_acks().take_newer(seen) == wire::ConfigStatus::accepted);

  DeviceParams bad = ok;
  bad.k_stop = 10.0;  // below 100 * k_max
  fw.post_config(bad);
  fw.tick();
  CHECK(fw.config().servo.k_stop == 150.0);
  CHECK(fw.config_acks().take_newer(seen) == wire::ConfigStatus::rejected);
  CHECK(fw.summary().configs_applied == 1);
  CHECK(fw.summary().configs_rejected == 1);
}

TEST_CASE("device params survive the micro-unit payload") {
  DeviceParams p{{0.01, 0.05, 0.3, 0.2, 1.0}, 0.01, 0.1, 0.44, 1.0, 200.0};
  const auto back = from_payload(to_payload(p));
  CHECK(back.stiffness.theta0 == 0.01);
  CHECK(back.stiffness.k_max == 1.0);
  CHECK(back.k_stop == 200.0);
  CHECK(back.tau_max == 0.44);
}

TEST_CASE("firmware config validation") {
  FirmwareConfig c;
  c.telemetry_rate = 2000.0;
  CHECK_THROWS_AS(FirmwareEmulator{c}, std::invalid_argument);
  c = {};
  c.servo.k_stop = 50.0;
  CHECK_THROWS_WITH_AS(FirmwareEmulator{c}, doctest::Contains("k_stop"), std::invalid_argument);
  c = {};
  c.operator_input.segments.push_back({OperatorKind::chirp, 0.1, 1.0, 0.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(FirmwareEmulator{c}, std::invalid_argument);
}

TEST_CASE("operator segments") {
  OperatorInput in;
  in.segments = {{OperatorKind::step, 0.3, 0.0, 0.0, 8.0}, {OperatorKind::step, 0.6, 0.0, 8.0}};
  CHECK(in.hand_torque(7.999) == 0.3);
  CHECK(in.hand_torque(8.0) == 0.6);
  in.segments = {{OperatorKind::sine, 0.1, 1.0, 1.0, 3.0}, {OperatorKind::external, 0.0, 0.0, 0.0}};
  CHECK(in.hand_torque(0.5, 0.2) == 0.2);
  CHECK(in.hand_torque(1.25, 0.0) == doctest::Approx(0.1));
  CHECK(in.uses_external());
}

TEST_CASE("telemetry carries the quantized angle in micro-radians") {
  FirmwareConfig c;
  c.initial_theta = 0.123456;
  c.stiffness.q_dz = 0.2;
  c.stiffness.n = 0.3;
  FirmwareEmulator fw(c);
  TelemetryLink link(fw, c.telemetry_rate);
  auto pair = open_transport("inproc");
  fw.tick();
  link.service(*pair.device, 0.0);
  const auto bytes = read_exact(*pair.host, 24, 500ms);
  const auto frames = wire::FrameParser().feed(bytes);
  REQUIRE(frames.size() == 1);
  CHECK(wire::telemetry_of(frames[0]).theta_urad == 123456);
  CHECK(wire::telemetry_of(frames[0]).t_us == 1000);
}

TEST_CASE("the link sends nothing while the control loop is idle") {
  FirmwareEmulator fw(FirmwareConfig{});
  TelemetryLink link(fw, 500.0);
  auto pair = open_transport("inproc");
  for (int i = 0; i < 100; ++i) link.service(*pair.device, i * 1e-3);
  CHECK(link.bytes_sent() == 0);
  CHECK(link.stats().frames_sent == 0);
  std::array<std::uint8_t, 8> buf{};
  CHECK(pair.host->read_some(buf, 10ms) == 0);
}

TEST_CASE("simulated pacing sends one frame per telemetry period") {
  FirmwareEmulator fw(with_hand(OperatorKind::step, 0.1));
  TelemetryLink link(fw, 500.0);
  auto pair = open_transport("inproc");
  for (int i = 0; i < 1000; ++i) {
    fw.tick();
    link.service(*pair.device, (i + 1) * 1e-3);
    std::array<std::uint8_t, 256> buf{};
    while (pair.host->read_some(buf, 0ms) > 0) {
    }
  }
  // Slots fall on even milliseconds; the first pass at 1 ms covers slot 0.
  CHECK(link.stats().frames_sent == 501);
  CHECK(link.stats().samples_consumed == 1000);
}

TEST_CASE("host feedback and config frames reach the mailboxes") {
  FirmwareEmulator fw(FirmwareConfig{});
  TelemetryLink link(fw, 500.0);
  auto pair = open_transport("inproc");
  std::vector<std::uint8_t> out;
  wire::encode_into(wire::make_frame(0, wire::FeedbackPayload{-220000}), out);
  DeviceParams p{{0.0, 0.05, 0.3, 0.2, 1.0}, 0.01, 0.1, 0.44, 1.0, 200.0};
  p.stiffness.q_dz = 0.04;
  wire::encode_into(wire::make_frame(1, to_payload(p)), out);
  write_all(*pair.host, out);
  link.receive(*pair.device, 100ms);
  const auto r = fw.tick();
  CHECK(r.tau_ext == doctest::Approx(-0.22));
  CHECK(fw.config().stiffness.q_dz == 0.04);
  CHECK(link.stats().feedback_frames == 1);
  CHECK(link.stats().config_frames == 1);

  link.service(*pair.device, 0.0);
  std::vector<wire::Frame> frames;
  wire::FrameParser parser;
  std::array<std::uint8_t, 256> buf{};
  while (const auto n = pair.host->read_some(buf, 50ms)) parser.feed(std::span(buf.data(), n), frames);
  bool acked = false;
  for (const auto& f : frames) acked |= f.type == wire::FrameType::config_ack;
  CHECK(acked);
}

TEST_CASE("telemetry rate on a real clock") {
  FirmwareEmulator fw(with_hand(OperatorKind::step, 0.1));
  TelemetryLink link(fw, 500.0);
  auto pair = open_transport("inproc");
  std::jthread control([&](std::stop_token st) {
    RealClock clock;
    fw.run_control_loop(clock, st);
  });
  std::jthread sender([&](std::stop_token st) {
    RealClock clock;
    link.run(*pair.device, clock, st);
  });

  wire::FrameParser parser;
  std::vector<wire::Frame> frames;
  std::array<std::uint8_t, 1024> buf{};
  const auto drain_until = [&](std::chrono::steady_clock::time_point end) {
    std::size_t count = 0;
    while (std::chrono::steady_clock::now() < end) {
      frames.clear();
      if (const auto n = pair.host->read_some(buf, 5ms)) parser.feed(std::span(buf.data(), n), frames);
      for (const auto& f : frames) count += f.type == wire::FrameType::telemetry;
    }
    return count;
  };
  const auto t0 = std::chrono::steady_clock::now();
  drain_until(t0 + 300ms);
  const auto begin = std::chrono::steady_clock::now();
  const auto n = drain_until(begin + 3s);
  const double window = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  sender.request_stop();
  control.request_stop();
  sender.join();
  control.join();

  const double rate = static_cast<double>(n) / window;
  MESSAGE("telemetry rate " << rate << " Hz");
  CHECK(std::fabs(rate - 500.0) <= 1.0);
  CHECK(parser.diagnostics().crc_failures == 0);
}

TEST_CASE("transports move bytes both ways") {
  for (const std::string spec : {"inproc", "tcp:127.0.0.1:0", "pty"}) {
    CAPTURE(spec);
    auto pair = open_transport(spec);
    std::vector<std::uint8_t> data(3000);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 7);
    std::jthread w([&] { write_all(*pair.device, data); });
    CHECK(read_exact(*pair.host, data.size()) == data);
    w.join();
    const std::vector<std::uint8_t> back{0xAA, 0x55, 0x01};
    write_all(*pair.host, back);
    CHECK(read_exact(*pair.device, back.size()) == back);
    std::array<std::uint8_t, 4> buf{};
    CHECK(pair.host->read_some(buf, 10ms) == 0);
    pair.device->close();
    CHECK_THROWS_AS(read_exact(*pair.host, 1, 200ms), TransportError);
  }
}

TEST_CASE("transport spec errors") {
  CHECK_THROWS_AS(open_transport("serial"), std::invalid_argument);
  CHECK_THROWS_AS(open_transport("tcp:nohost"), std::invalid_argument);
  CHECK(split_host_port("[::1]:80").first == "::1");
  CHECK(split_host_port("127.0.0.1:7400").second == 7400);
  CHECK_THROWS_AS(split_host_port("host:99999"), std::invalid_argument);
}

}  // TEST_SUITE
