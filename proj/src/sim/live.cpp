#include "hatpic/live.hpp"

#include <chrono>
#include <limits>

#include <spdlog/spdlog.h>

#include "hatpic/clock.hpp"

namespace hatpic {

RobotNode::RobotNode(std::string bus_addr, WorldConfig world, RobotState initial, double rate)
    : addr_(std::move(bus_addr)), world_(world), rate_(rate), state_(initial) {
  world_.validate();
  if (!(rate_ > 0.0)) throw std::invalid_argument("rate: must be > 0");
}

RobotNode::~RobotNode() { stop(); }

void RobotNode::start() {
  client_ = std::make_unique<BusClient>(addr_);
  client_->subscribe(std::string(topics::robot_ref));
  thread_ = std::jthread([this](std::stop_token st) { loop(st); });
}

void RobotNode::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
  if (client_) client_->close();
}

RobotState RobotNode::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

ReferenceState RobotNode::reference() const {
  std::lock_guard lock(mu_);
  return ref_;
}

void RobotNode::loop(std::stop_token stop) {
  RealClock clock;
  const double dt = 1.0 / rate_;
  RobotState robot = state();
  ReferenceState ref;
  try {
    for (std::uint64_t k = 1; !stop.stop_requested(); ++k) {
      clock.sleep_until(static_cast<double>(k) * dt);
      while (auto m = client_->next(std::chrono::milliseconds(0))) {
        if (m->topic != topics::robot_ref) continue;
        ref.v_ref = m->body.value("v_ref", ref.v_ref);
        ref.p_ref = m->body.value("p_ref", ref.p_ref);
        ref.v_max = m->body.value("v_max", ref.v_max);
      }
      robot = step_robot(robot, ref.p_ref, world_, dt);
      {
        std::lock_guard lock(mu_);
        state_ = robot;
        ref_ = ref;
      }
      client_->publish({std::string(topics::robot_state), clock.now(),
                        {{"p", robot.p}, {"v", robot.v}, {"f_contact", robot.f_contact}}});
    }
  } catch (const std::exception& e) {
    if (!stop.stop_requested()) spdlog::error("robot: {}", e.what());
  }
}

// ---------------------------------------------------------------------------

LiveStack::LiveStack(Scenario scenario, LiveOptions options)
    : scenario_(std::move(scenario)), options_(std::move(options)) {
  scenario_.validate();
  // The console can always steer: add a live operator input if the scenario
  // only scripts one.
  if (!scenario_.firmware.operator_input.uses_external()) {
    scenario_.firmware.operator_input.segments.push_back({OperatorKind::external, 0.0, 0.0, 0.0,
                                                          std::numeric_limits<double>::infinity()});
  }
}

LiveStack::~LiveStack() { stop(); }

void LiveStack::start() {
  firmware_ = std::make_unique<FirmwareEmulator>(scenario_.firmware);
  link_ = std::make_unique<TelemetryLink>(*firmware_, scenario_.firmware.telemetry_rate);
  transport_ = open_transport(scenario_.bridge.device);

  BridgeServerOptions bopts;
  bopts.static_dir = options_.static_dir;
  bopts.connect = [this]() -> std::unique_ptr<ByteStream> {
    if (!transport_.host) throw TransportError("device link closed");
    return std::move(transport_.host);
  };
  bopts.on_operator_torque = [this](double tau) { firmware_->post_operator_torque(tau); };
  bopts.diag_extra = [this](nlohmann::json& body) {
    const auto ticks = firmware_->ticks_done();
    const auto overruns = firmware_->overruns();
    const auto link = link_->stats();
    body["fw_ticks"] = ticks;
    body["fw_overruns"] = overruns;
    body["fw_overrun_ratio"] = ticks ? static_cast<double>(overruns) / static_cast<double>(ticks) : 0.0;
    body["fw_frames_sent"] = link.frames_sent;
    body["fw_frames_dropped"] = link.frames_dropped;
    body["fw_crc_failures"] = link.parser.crc_failures;
  };
  bridge_ = std::make_unique<BridgeServer>(scenario_.bridge, scenario_.device_params(), std::move(bopts));
  bridge_->start();

  if (options_.trace) {
    const auto& adm = scenario_.firmware.admittance;
    writer_ = std::make_unique<TraceWriter>(
        *options_.trace, std::vector<std::pair<std::string, std::string>>{
                             {"mode", "serve"},
                             {"scenario", options_.trace_source},
                             {"dt", std::to_string(adm.dt)}});
    firmware_->attach_trace(&trace_queue_);
    trace_thread_ = std::jthread([this](std::stop_token st) { trace_loop(st); });
  }

  control_thread_ = std::jthread([this](std::stop_token st) {
    RealClock clock;
    firmware_->run_control_loop(clock, st);
  });
  link_thread_ = std::jthread([this](std::stop_token st) {
    RealClock clock;
    try {
      link_->run(*transport_.device, clock, st);
    } catch (const TransportError& e) {
      spdlog::error("firmware link: {}", e.what());
    }
  });

  const std::string bus_addr = "127.0.0.1:" + std::to_string(bridge_->bus_port());
  robot_ = std::make_unique<RobotNode>(bus_addr, scenario_.world, scenario_.robot_initial,
                                       scenario_.robot_state_rate);
  robot_->start();
}

void LiveStack::stop() {
  if (stopped_) return;
  stopped_ = true;
  if (robot_) robot_->stop();
  if (control_thread_.joinable()) {
    control_thread_.request_stop();
    control_thread_.join();
  }
  if (link_thread_.joinable()) {
    link_thread_.request_stop();
    link_thread_.join();
  }
  if (bridge_) bridge_->stop();
  if (transport_.device) transport_.device->close();
  if (trace_thread_.joinable()) {
    trace_thread_.request_stop();
    trace_thread_.join();
  }
  if (writer_) {
    drain_trace();
    writer_->flush();
  }
}

void LiveStack::drain_trace() {
  trace_batch_.clear();
  trace_queue_.drain(trace_batch_);
  const RobotState robot = robot_ ? robot_->state() : RobotState{};
  const ReferenceState ref = robot_ ? robot_->reference() : ReferenceState{};
  for (const auto& rec : trace_batch_) writer_->write(trace_row(rec, ref, robot));
}

void LiveStack::trace_loop(std::stop_token stop) {
  while (!stop.stop_requested()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    drain_trace();
  }
}

}  // namespace hatpic
