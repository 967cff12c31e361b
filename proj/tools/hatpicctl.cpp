// hatpicctl: scenario runner, capture decoder, live stack launcher.
//
// Exit codes: 0 ok, 1 replay mismatch, 2 invalid input, 3 transport/bind failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "hatpic/bus.hpp"
#include "hatpic/live.hpp"
#include "hatpic/protocol.hpp"
#include "hatpic/scenario.hpp"
#include "hatpic/simulation.hpp"
#include "hatpic/transport.hpp"

using namespace hatpic;

namespace {

constexpr int kExitMismatch = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitTransport = 3;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("hatpic");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("HATPIC_LOG")) {
    const auto level = spdlog::level::from_str(lvl);
    // from_str maps unknown names to "off"; only honour real ones.
    if (level != spdlog::level::off || std::string(lvl) == "off") spdlog::set_level(level);
  }
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<std::vector<std::uint8_t>> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// -- run ----------------------------------------------------------------------

struct RunArgs {
  std::string scenario;
  std::string record;
  std::string transport = "inproc";
  bool realtime = false;
  std::optional<double> duration;
  std::string capture;
};

int cmd_run(const RunArgs& a) {
  Scenario sc = load_scenario(a.scenario);
  if (a.duration) {
    sc.duration = *a.duration;
    sc.validate();
  }

  SimOptions opt;
  opt.transport = a.transport;
  opt.realtime = a.realtime;

  std::ofstream record, capture;
  std::unique_ptr<TraceWriter> writer;
  if (!a.record.empty()) {
    record.open(a.record, std::ios::trunc);
    if (!record) throw std::invalid_argument("--record: cannot open " + a.record);
    writer = std::make_unique<TraceWriter>(
        record, std::vector<std::pair<std::string, std::string>>{
                    {"scenario", a.scenario},
                    {"seed", std::to_string(sc.seed)},
                    {"dt", num(sc.firmware.admittance.dt)},
                    {"duration", num(sc.duration)},
                    {"transport", a.transport},
                    {"clock", a.realtime ? "real" : "simulated"},
                    {"generated", utc_now()}});
    opt.on_row = [&](const TraceRow& r) { writer->write(r); };
  }
  if (!a.capture.empty()) {
    capture.open(a.capture, std::ios::binary | std::ios::trunc);
    if (!capture) throw std::invalid_argument("--capture: cannot open " + a.capture);
    opt.capture = &capture;
  }

  const SimSummary s = run_simulation(sc, opt);
  if (writer) writer->flush();
  std::cout << format_summary(s);
  return 0;
}

// -- decode -------------------------------------------------------------------

std::string describe(const wire::Frame& f) {
  std::ostringstream os;
  os << "seq=" << static_cast<int>(f.seq) << " ";
  switch (f.type) {
    case wire::FrameType::telemetry: {
      const auto p = wire::telemetry_of(f);
      os << "telemetry theta_urad=" << p.theta_urad << " omega_urad_s=" << p.omega_urad_s
         << " tau_unm=" << p.tau_unm << " t_us=" << p.t_us;
      break;
    }
    case wire::FrameType::feedback:
      os << "feedback tau_ext_unm=" << wire::feedback_of(f).tau_ext_unm;
      break;
    case wire::FrameType::config_set: {
      const auto p = wire::config_of(f);
      os << "config-set theta0_urad=" << p.theta0_urad << " q_dz_urad=" << p.q_dz_urad << " n_urad=" << p.n_urad
         << " k_min_u=" << p.k_min_u << " k_max_u=" << p.k_max_u << " d_adm_u=" << p.d_adm_u
         << " m_adm_u=" << p.m_adm_u << " tau_max_unm=" << p.tau_max_unm
         << " theta_max_urad=" << p.theta_max_urad << " k_stop_u=" << p.k_stop_u;
      break;
    }
    case wire::FrameType::config_ack:
      os << "config-ack status="
         << (wire::config_ack_of(f).status == wire::ConfigStatus::accepted ? "accepted" : "rejected");
      break;
  }
  return os.str();
}

int cmd_decode(const std::string& input) {
  const auto bytes = read_file(input);
  if (!bytes) {
    std::cerr << "decode: cannot read " << input << "\n";
    return kExitInvalid;
  }
  wire::FrameParser parser;
  const auto frames = parser.feed(*bytes);
  parser.finish();
  for (std::size_t i = 0; i < frames.size(); ++i) std::cout << "#" << i << " " << describe(frames[i]) << "\n";
  const auto& d = parser.diagnostics();
  std::cout << "-- frames=" << frames.size() << " resyncs=" << d.resyncs << " crc_failures=" << d.crc_failures
            << " unknown_type=" << d.unknown_type << " truncated=" << d.truncated
            << " discarded_bytes=" << d.discarded_bytes << "\n";
  return 0;
}

// -- serve --------------------------------------------------------------------

struct ServeArgs {
  std::string config;
  std::optional<std::string> device, bus, ws;
  std::optional<double> v_max, publish_rate, feedback_gain, f_max, input_deadzone, staleness_timeout,
      staleness_decay, link_timeout;
  double duration = 0.0;
  std::string trace;
  std::string static_dir;
};

int cmd_serve(const ServeArgs& a) {
  Scenario sc = a.config.empty() ? Scenario{} : load_scenario(a.config);
  auto& b = sc.bridge;
  if (a.device) b.device = *a.device;
  if (a.bus) b.bus = *a.bus;
  if (a.ws) b.ws = *a.ws;
  if (a.v_max) b.v_max = *a.v_max;
  if (a.publish_rate) b.publish_rate = *a.publish_rate;
  if (a.feedback_gain) b.feedback_gain = *a.feedback_gain;
  if (a.f_max) b.f_max = *a.f_max;
  if (a.input_deadzone) b.input_deadzone = *a.input_deadzone;
  if (a.staleness_timeout) b.staleness_timeout = *a.staleness_timeout;
  if (a.staleness_decay) b.staleness_decay = *a.staleness_decay;
  if (a.link_timeout) b.link_timeout = *a.link_timeout;
  sc.validate();
  if (!(a.duration >= 0.0)) throw ScenarioError("duration: must be >= 0 (0 runs until interrupted)");

  std::ofstream trace;
  LiveOptions opt;
  opt.static_dir = a.static_dir;
  opt.trace_source = a.config.empty() ? "<defaults>" : a.config;
  if (!a.trace.empty()) {
    trace.open(a.trace, std::ios::trunc);
    if (!trace) throw std::invalid_argument("--trace: cannot open " + a.trace);
    opt.trace = &trace;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  LiveStack stack(sc, opt);
  stack.start();
  std::cout << "serving bus=" << stack.bus_port() << " ws=" << stack.ws_port() << std::endl;

  const auto t0 = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    if (a.duration > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= a.duration) {
      break;
    }
  }
  stack.stop();
  std::cout << "stopped ticks=" << stack.ticks() << " overruns=" << stack.overruns() << std::endl;
  return 0;
}

// -- replay -------------------------------------------------------------------

std::string strip_generated(const std::string& text) {
  std::istringstream in(text);
  std::ostringstream out;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("# generated:", 0) == 0) continue;
    out << line << "\n";
  }
  return out.str();
}

int cmd_replay(const std::string& scenario_path, const std::string& trace_path, const std::string& capture_path) {
  const Scenario sc = load_scenario(scenario_path);

  if (!capture_path.empty()) {
    const auto bytes = read_file(capture_path);
    if (!bytes) {
      std::cerr << "replay: cannot read " << capture_path << "\n";
      return kExitInvalid;
    }
    for (const auto& m : replay_capture(sc, *bytes)) std::cout << m.to_line();
    return 0;
  }

  const auto recorded = read_file(trace_path);
  if (!recorded) {
    std::cerr << "replay: cannot read " << trace_path << "\n";
    return kExitInvalid;
  }
  const std::string recorded_text(recorded->begin(), recorded->end());

  // Re-run with the metadata the recording declares.
  std::string transport = "inproc";
  std::optional<double> duration;
  {
    std::istringstream in(recorded_text);
    for (std::string line; std::getline(in, line) && line.rfind("#", 0) == 0;) {
      if (line.rfind("# transport: ", 0) == 0) transport = line.substr(13);
      if (line.rfind("# duration: ", 0) == 0) duration = std::stod(line.substr(12));
    }
  }
  Scenario rerun = sc;
  if (duration) rerun.duration = *duration;

  std::ostringstream fresh;
  TraceWriter writer(fresh, {{"scenario", scenario_path},
                             {"seed", std::to_string(rerun.seed)},
                             {"dt", num(rerun.firmware.admittance.dt)},
                             {"duration", num(rerun.duration)},
                             {"transport", transport},
                             {"clock", "simulated"},
                             {"generated", utc_now()}});
  SimOptions opt;
  opt.transport = transport;
  opt.on_row = [&](const TraceRow& r) { writer.write(r); };
  run_simulation(rerun, opt);

  if (strip_generated(fresh.str()) == strip_generated(recorded_text)) {
    std::cout << "replay: identical\n";
    return 0;
  }
  std::cout << "replay: MISMATCH\n";
  return kExitMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"HATPIC single-axis haptic joystick twin"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario headless and print a summary");
  run_cmd->add_option("--scenario", run.scenario, "Scenario TOML file")->required();
  run_cmd->add_option("--record", run.record, "Write the per-tick CSV trace here");
  run_cmd->add_option("--transport", run.transport, "inproc | tcp:HOST:PORT | pty");
  run_cmd->add_option("--realtime", run.realtime, "Pace ticks on the wall clock (true/false)")
      ->default_str("false");
  run_cmd->add_option("--duration", run.duration, "Override the scenario duration, s");
  run_cmd->add_option("--capture", run.capture, "Write device->host bytes here");

  std::string decode_input;
  auto* decode_cmd = app.add_subcommand("decode", "Pretty-print frames from a byte capture");
  decode_cmd->add_option("--input", decode_input, "Capture file")->required();

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the live stack on the wall clock");
  serve_cmd->add_option("--config", serve.config, "Scenario TOML file ([bridge] and the rest)");
  serve_cmd->add_option("--device", serve.device, "Device transport");
  serve_cmd->add_option("--bus", serve.bus, "Bus listen address HOST:PORT");
  serve_cmd->add_option("--ws", serve.ws, "WebSocket listen address HOST:PORT");
  serve_cmd->add_option("--v_max", serve.v_max, "Maximum reference velocity, m/s");
  serve_cmd->add_option("--publish_rate", serve.publish_rate, "Bus publish rate, Hz");
  serve_cmd->add_option("--feedback_gain", serve.feedback_gain, "Contact force to torque gain, N*m/N");
  serve_cmd->add_option("--f_max", serve.f_max, "Largest contact force mapped, N");
  serve_cmd->add_option("--input_deadzone", serve.input_deadzone, "Reference deadzone, rad");
  serve_cmd->add_option("--staleness_timeout", serve.staleness_timeout, "Feedback hold, s");
  serve_cmd->add_option("--staleness_decay", serve.staleness_decay, "Feedback fade, s");
  serve_cmd->add_option("--link_timeout", serve.link_timeout, "Device silence before link loss, s");
  serve_cmd->add_option("--duration", serve.duration, "Stop after this many seconds (0 = until SIGINT)");
  serve_cmd->add_option("--trace", serve.trace, "Write the per-tick CSV trace here");
  serve_cmd->add_option("--static", serve.static_dir, "Directory served over HTTP (operator console)");

  std::string replay_scenario, replay_trace, replay_capture_path;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run and compare a trace, or replay a device capture");
  replay_cmd->add_option("--scenario", replay_scenario, "Scenario TOML file")->required();
  auto* trace_opt = replay_cmd->add_option("--trace", replay_trace, "Recorded CSV to reproduce");
  auto* capture_opt = replay_cmd->add_option("--capture", replay_capture_path, "Device->host byte capture");
  trace_opt->excludes(capture_opt);
  replay_cmd->callback([&] {
    if (replay_trace.empty() && replay_capture_path.empty()) {
      throw CLI::ValidationError("replay", "one of --trace or --capture is required");
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*decode_cmd) return cmd_decode(decode_input);
    if (*serve_cmd) return cmd_serve(serve);
    if (*replay_cmd) return cmd_replay(replay_scenario, replay_trace, replay_capture_path);
  } catch (const ScenarioError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const BindError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTransport;
  } catch (const TransportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitTransport;
  }
  return 0;
}
