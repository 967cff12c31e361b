#include "hatpic/simulation.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "hatpic/bridge.hpp"
#include "hatpic/clock.hpp"
#include "hatpic/firmware.hpp"
#include "hatpic/robot.hpp"
#include "hatpic/transport.hpp"

namespace hatpic {

namespace {

constexpr auto kLinkTimeout = std::chrono::milliseconds(1000);

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TraceWriter::TraceWriter(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& meta)
    : out_(out) {
  out_ << "# hatpic trace v1\n";
  for (const auto& [k, v] : meta) out_ << "# " << k << ": " << v << "\n";
  out_ << kTraceColumns << "\n";
}

void TraceWriter::write(const TraceRow& r) {
  out_ << fmt(r.t) << ',' << fmt(r.theta) << ',' << fmt(r.omega) << ',' << fmt(r.tau_operator) << ','
       << fmt(r.tau_fb_rec) << ',' << fmt(r.tau_fb_ext) << ',' << fmt(r.tau_fb_total) << ','
       << fmt(r.v_ref) << ',' << fmt(r.p_ref) << ',' << fmt(r.p) << ',' << fmt(r.f_contact) << '\n';
}

void TraceWriter::flush() { out_.flush(); }

TraceRow trace_row(const TickRecord& rec, const ReferenceState& ref, const RobotState& robot) {
  TraceRow row;
  row.t = rec.input.t;
  row.theta = rec.input.theta;
  row.omega = rec.input.omega;
  row.tau_operator = rec.input.tau_operator;
  row.tau_fb_rec = rec.tau_rec;
  row.tau_fb_ext = rec.tau_ext;
  row.tau_fb_total = rec.tau_total;
  row.v_ref = ref.v_ref;
  row.p_ref = ref.p_ref;
  row.p = robot.p;
  row.f_contact = robot.f_contact;
  return row;
}

SimSummary run_simulation(const Scenario& sc, const SimOptions& opt) {
  sc.validate();
  const double duration = opt.duration.value_or(sc.duration);
  if (!(std::isfinite(duration) && duration > 0.0)) throw std::invalid_argument("duration: must be > 0");

  auto link_ends = open_transport(opt.transport);
  ByteStream& dev = *link_ends.device;
  ByteStream& host = *link_ends.host;

  FirmwareEmulator fw(sc.firmware);
  TelemetryLink link(fw, sc.firmware.telemetry_rate);
  BridgeCore bridge(sc.bridge, sc.device_params());
  BridgeCore::Output out;
  RobotState robot = sc.robot_initial;

  SimClock sim_clock;
  RealClock real_clock;
  Clock& clock = opt.realtime ? static_cast<Clock&>(real_clock) : sim_clock;

  const double dt = sc.firmware.admittance.dt;
  const auto ticks = static_cast<std::uint64_t>(std::llround(duration / dt));
  const std::uint64_t steady_from = ticks - std::max<std::uint64_t>(1, ticks / 10);
  const double robot_period = 1.0 / sc.robot_state_rate;
  double next_robot_pub = 0.0;
  double p_ref_published = bridge.reference().p_ref;

  SimSummary sum;
  sum.duration = duration;
  double theta_acc = 0.0, tau_acc = 0.0, f_acc = 0.0;

  auto emit = [&](const BusMessage& m) {
    if (m.topic == topics::robot_ref) p_ref_published = m.body.at("p_ref").get<double>();
    if (opt.on_message) opt.on_message(m);
  };

  const double start = clock.now();
  for (std::uint64_t k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (opt.realtime) {
      clock.sleep_until(start + t);
      if (clock.now() - (start + t) > dt) ++sum.late_wakeups;
    }
    const auto t0 = std::chrono::steady_clock::now();

    const TickRecord rec = fw.tick();

    // Device -> host.
    const std::uint64_t sent_before = link.bytes_sent();
    link.service(dev, t);
    const auto sent = static_cast<std::size_t>(link.bytes_sent() - sent_before);
    out.clear();
    if (sent > 0) {
      const auto bytes = read_exact(host, sent, kLinkTimeout);
      if (opt.capture) opt.capture->write(reinterpret_cast<const char*>(bytes.data()),
                                          static_cast<std::streamsize>(bytes.size()));
      bridge.on_device_bytes(bytes, t + dt, out);
    }
    for (const auto& m : out.messages) emit(m);

    // Host -> device; make sure the firmware has parsed it before the next tick.
    if (!out.device_bytes.empty()) {
      const std::uint64_t expected = link.bytes_received() + out.device_bytes.size();
      write_all(host, out.device_bytes, kLinkTimeout);
      const auto deadline = std::chrono::steady_clock::now() + kLinkTimeout;
      while (link.bytes_received() < expected) {
        if (std::chrono::steady_clock::now() > deadline) throw TransportError("device link stalled");
        link.receive(dev, std::chrono::milliseconds(50));
      }
    }

    robot = step_robot(robot, p_ref_published, sc.world, dt);
    if (t + 1e-12 >= next_robot_pub) {
      next_robot_pub += robot_period;
      const BusMessage rs{std::string(topics::robot_state), t + dt,
                          {{"p", robot.p}, {"v", robot.v}, {"f_contact", robot.f_contact}}};
      out.clear();
      bridge.on_bus_message(rs, out);
      emit(rs);
      for (const auto& m : out.messages) emit(m);
    }

    if (opt.on_row) opt.on_row(trace_row(rec, bridge.reference(), robot));

    if (k >= steady_from) {
      theta_acc += fw.true_state().theta;
      tau_acc += rec.tau_total;
      f_acc += robot.f_contact;
    }
    sum.max_abs_tau_total = std::max(sum.max_abs_tau_total, std::abs(rec.tau_total));

    if (opt.realtime) {
      const double busy = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (busy > dt) ++sum.overruns;
    }
  }

  const double n_steady = static_cast<double>(ticks - steady_from);
  sum.ticks = ticks;
  sum.steady_theta = theta_acc / n_steady;
  sum.steady_tau_total = tau_acc / n_steady;
  sum.steady_f_contact = f_acc / n_steady;
  sum.final_theta = fw.true_state().theta;
  sum.final_p = robot.p;
  sum.final_p_ref = bridge.reference().p_ref;
  sum.telemetry_frames = bridge.counters().telemetry_frames;
  sum.feedback_frames = link.stats().feedback_frames;
  sum.resyncs = bridge.parser_diagnostics().resyncs;
  sum.crc_failures = bridge.parser_diagnostics().crc_failures;
  sum.device_resyncs = link.stats().parser.resyncs;
  return sum;
}

std::string format_summary(const SimSummary& s) {
  std::ostringstream os;
  os << "ticks:              " << s.ticks << "\n"
     << "duration_s:         " << fmt(s.duration) << "\n"
     << "steady_theta_rad:   " << fmt(s.steady_theta) << "\n"
     << "final_theta_rad:    " << fmt(s.final_theta) << "\n"
     << "max_abs_tau_total:  " << fmt(s.max_abs_tau_total) << "\n"
     << "steady_tau_total:   " << fmt(s.steady_tau_total) << "\n"
     << "steady_f_contact_N: " << fmt(s.steady_f_contact) << "\n"
     << "final_p_m:          " << fmt(s.final_p) << "\n"
     << "final_p_ref_m:      " << fmt(s.final_p_ref) << "\n"
     << "overruns:           " << s.overruns << "\n"
     << "late_wakeups:       " << s.late_wakeups << "\n"
     << "telemetry_frames:   " << s.telemetry_frames << "\n"
     << "feedback_frames:    " << s.feedback_frames << "\n"
     << "resyncs:            " << s.resyncs << "\n"
     << "crc_failures:       " << s.crc_failures << "\n"
     << "device_resyncs:     " << s.device_resyncs << "\n";
  return os.str();
}

std::vector<BusMessage> replay_capture(const Scenario& sc, std::span<const std::uint8_t> bytes,
                                       std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  BridgeCore bridge(sc.bridge, sc.device_params());
  BridgeCore::Output out;
  std::vector<BusMessage> refs;
  for (std::size_t off = 0; off < bytes.size(); off += chunk) {
    out.clear();
    bridge.on_device_bytes(bytes.subspan(off, std::min(chunk, bytes.size() - off)), 0.0, out);
    for (auto& m : out.messages) {
      if (m.topic == topics::robot_ref) refs.push_back(std::move(m));
    }
  }
  return refs;
}

}  // namespace hatpic
