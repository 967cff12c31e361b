#include "hatpic/firmware.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace hatpic {

namespace {

void require(bool ok, const std::string& field, const char* rule) {
  if (!ok) throw std::invalid_argument(field + ": " + rule);
}

}  // namespace

void RealClock::sleep_until(double t) {
  std::this_thread::sleep_until(epoch_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                             std::chrono::duration<double>(t)));
}

// ---------------------------------------------------------------------------

void ServoModel::validate(const StiffnessProfile& profile) const {
  require(std::isfinite(theta_max) && theta_max > 0.0, "theta_max", "must be > 0");
  require(std::isfinite(k_stop) && k_stop >= 100.0 * profile.k_max, "k_stop",
          "must be >= 100 * k_max");
  require(std::isfinite(position_quantum) && position_quantum >= 0.0, "position_quantum",
          "must be >= 0");
  require(std::isfinite(torque_quantum) && torque_quantum >= 0.0, "torque_quantum",
          "must be >= 0");
}

double hard_stop_torque(double theta, const ServoModel& servo) {
  const double overshoot = std::abs(theta) - servo.theta_max;
  if (overshoot <= 0.0) return 0.0;
  return -servo.k_stop * overshoot * (theta > 0.0 ? 1.0 : -1.0);
}

double quantize_to(double value, double quantum) {
  if (quantum <= 0.0) return value;
  return std::nearbyint(value / quantum) * quantum;
}

std::optional<OperatorKind> operator_kind_from(const std::string& name) {
  if (name == "step") return OperatorKind::step;
  if (name == "sine") return OperatorKind::sine;
  if (name == "chirp") return OperatorKind::chirp;
  if (name == "hold") return OperatorKind::hold;
  if (name == "external") return OperatorKind::external;
  return std::nullopt;
}

const char* to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::step: return "step";
    case OperatorKind::sine: return "sine";
    case OperatorKind::chirp: return "chirp";
    case OperatorKind::hold: return "hold";
    case OperatorKind::external: return "external";
  }
  return "?";
}

void OperatorInput::validate() const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    const std::string at = "operator[" + std::to_string(i) + "].";
    require(std::isfinite(s.amplitude), at + "amplitude", "must be finite");
    require(std::isfinite(s.frequency) && s.frequency >= 0.0, at + "frequency", "must be >= 0");
    require(std::isfinite(s.start) && s.start >= 0.0, at + "start", "must be >= 0");
    require(!std::isnan(s.stop) && s.stop > s.start, at + "stop", "must be > start");
    if (s.kind == OperatorKind::chirp) {
      require(std::isfinite(s.stop), at + "stop", "chirp needs a finite stop time");
    }
  }
  require(std::isfinite(noise_std) && noise_std >= 0.0, "operator.noise_std", "must be >= 0");
}

bool OperatorInput::uses_external() const {
  for (const auto& s : segments) {
    if (s.kind == OperatorKind::external) return true;
  }
  return false;
}

double OperatorInput::hand_torque(double t, double external) const {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double tau = 0.0;
  for (const auto& s : segments) {
    if (s.kind == OperatorKind::hold) {
      tau += s.amplitude;
      continue;
    }
    if (t < s.start || t >= s.stop) continue;
    const double local = t - s.start;
    switch (s.kind) {
      case OperatorKind::step:
        tau += s.amplitude;
        break;
      case OperatorKind::sine:
        tau += s.amplitude * std::sin(two_pi * s.frequency * local);
        break;
      case OperatorKind::chirp: {
        // Instantaneous frequency ramps 0 -> f across the window.
        const double span = s.stop - s.start;
        tau += s.amplitude * std::sin(two_pi * s.frequency * local * local / (2.0 * span));
        break;
      }
      case OperatorKind::external:
        tau += external;
        break;
      case OperatorKind::hold:
        break;
    }
  }
  return tau;
}

void FirmwareConfig::validate() const {
  admittance.validate();
  stiffness.validate();
  servo.validate(stiffness);
  operator_input.validate();
  require(std::isfinite(initial_theta), "initial_theta", "must be finite");
  require(std::isfinite(initial_omega), "initial_omega", "must be finite");
  require(std::isfinite(telemetry_rate) && telemetry_rate > 0.0, "telemetry_rate", "must be > 0");
  require(telemetry_rate <= 1.0 / admittance.dt + 1e-9, "telemetry_rate",
          "must not exceed the control loop rate");
  require(std::isfinite(feedback_timeout) && feedback_timeout >= 0.0, "feedback_timeout",
          "must be >= 0");
  require(std::isfinite(feedback_decay) && feedback_decay >= 0.0, "feedback_decay",
          "must be >= 0");
}

wire::ConfigPayload to_payload(const DeviceParams& p) {
  auto u = [](double v) { return wire::to_micro(v).value; };
  return {u(p.stiffness.theta0), u(p.stiffness.q_dz), u(p.stiffness.n), u(p.stiffness.k_min),
          u(p.stiffness.k_max),  u(p.d_adm),          u(p.m_adm),       u(p.tau_max),
          u(p.theta_max),        u(p.k_stop)};
}

DeviceParams from_payload(const wire::ConfigPayload& p) {
  DeviceParams d;
  d.stiffness.theta0 = wire::from_micro(p.theta0_urad);
  d.stiffness.q_dz = wire::from_micro(p.q_dz_urad);
  d.stiffness.n = wire::from_micro(p.n_urad);
  d.stiffness.k_min = wire::from_micro(p.k_min_u);
  d.stiffness.k_max = wire::from_micro(p.k_max_u);
  d.d_adm = wire::from_micro(p.d_adm_u);
  d.m_adm = wire::from_micro(p.m_adm_u);
  d.tau_max = wire::from_micro(p.tau_max_unm);
  d.theta_max = wire::from_micro(p.theta_max_urad);
  d.k_stop = wire::from_micro(p.k_stop_u);
  return d;
}

// ---------------------------------------------------------------------------

FirmwareEmulator::FirmwareEmulator(FirmwareConfig config)
    : config_(std::move(config)), rng_(config_.seed), telemetry_(config_.telemetry_capacity) {
  config_.validate();
  state_.theta = config_.initial_theta;
  state_.omega = config_.initial_omega;
}

double FirmwareEmulator::feedback_torque(double t) {
  if (auto v = feedback_.take_newer(feedback_seen_)) {
    if (std::isfinite(*v)) {
      held_feedback_ = *v;
      feedback_rx_t_ = t;
      have_feedback_ = true;
    } else {
      ++summary_.discarded_feedback;
    }
  }
  if (!have_feedback_) return 0.0;

  const double age = t - feedback_rx_t_;
  if (age <= config_.feedback_timeout) return held_feedback_;
  if (config_.feedback_decay <= 0.0) return 0.0;
  const double fade = 1.0 - (age - config_.feedback_timeout) / config_.feedback_decay;
  return fade > 0.0 ? held_feedback_ * fade : 0.0;
}

void FirmwareEmulator::apply_pending_config() {
  auto update = config_in_.take_newer(config_seen_);
  if (!update) return;

  FirmwareConfig next = config_;
  next.stiffness = update->stiffness;
  next.admittance.d_adm = update->d_adm;
  next.admittance.m_adm = update->m_adm;
  next.admittance.tau_max = update->tau_max;
  next.servo.theta_max = update->theta_max;
  next.servo.k_stop = update->k_stop;
  try {
    next.validate();
  } catch (const std::invalid_argument&) {
    ++summary_.configs_rejected;
    config_acks_.post(wire::ConfigStatus::rejected);
    return;
  }
  config_ = std::move(next);
  ++summary_.configs_applied;
  config_acks_.post(wire::ConfigStatus::accepted);
}

TickRecord FirmwareEmulator::tick() {
  apply_pending_config();

  const auto& adm = config_.admittance;
  const auto& servo = config_.servo;
  const double t = static_cast<double>(tick_index_) * adm.dt;

  double external = 0.0;
  if (auto live = operator_.read()) external = live->value;

  TickRecord rec;
  rec.hand_torque = config_.operator_input.hand_torque(t, external);
  if (config_.operator_input.noise_std > 0.0) {
    rec.hand_torque += config_.operator_input.noise_std * noise_(rng_);
  }

  const double theta_measured = quantize_to(state_.theta, servo.position_quantum);
  rec.tau_ext = feedback_torque(t);
  rec.tau_rec = recentering_torque(theta_measured, config_.stiffness);
  rec.tau_total = total_feedback(rec.tau_rec, rec.tau_ext, adm.tau_max);
  const double commanded =
      std::clamp(quantize_to(rec.tau_total, servo.torque_quantum), -adm.tau_max, adm.tau_max);
  rec.tau_stop = hard_stop_torque(state_.theta, servo);

  JoystickState now = state_;
  now.t = t;
  // The admittance law takes the interaction torque, which opposes the hand.
  now.tau_operator = -rec.hand_torque;
  rec.input = now;
  state_ = step_dynamics(now, commanded + rec.tau_stop, adm);

  rec.sample = state_;
  rec.sample.theta = quantize_to(state_.theta, servo.position_quantum);

  ++tick_index_;
  ++summary_.ticks;
  summary_.max_abs_tau_total = std::max(summary_.max_abs_tau_total, std::abs(rec.tau_total));
  ticks_done_.store(summary_.ticks, std::memory_order_relaxed);

  telemetry_.push(rec.sample);
  if (trace_) trace_->push(rec);
  return rec;
}

ControlSummary FirmwareEmulator::run_control_loop(Clock& clock, std::stop_token stop,
                                                  std::uint64_t max_ticks) {
  const double dt = config_.admittance.dt;
  const double start = clock.now();
  for (std::uint64_t k = 0; !stop.stop_requested() && (max_ticks == 0 || k < max_ticks); ++k) {
    const double slot = start + static_cast<double>(k) * dt;
    clock.sleep_until(slot);
    if (clock.now() - slot > dt) ++summary_.late_wakeups;

    const auto t0 = std::chrono::steady_clock::now();
    tick();
    const double busy = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (busy > dt) {
      ++summary_.overruns;
      overruns_.store(summary_.overruns, std::memory_order_relaxed);
    }
  }
  return summary_;
}

ControlSummary FirmwareEmulator::summary() const { return summary_; }

// ---------------------------------------------------------------------------

TelemetryLink::TelemetryLink(FirmwareEmulator& device, double rate, std::size_t outbound_capacity)
    : device_(device), rate_(rate), capacity_(outbound_capacity == 0 ? 1 : outbound_capacity) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw std::invalid_argument("telemetry rate must be > 0");
  }
}

void TelemetryLink::enqueue(const wire::Frame& frame) {
  if (outbound_.size() == capacity_) {
    outbound_.pop_front();
    std::lock_guard lock(stats_mu_);
    ++stats_.frames_dropped;
  }
  outbound_.push_back(wire::encode(frame));
}

void TelemetryLink::flush(ByteStream& stream) {
  while (true) {
    if (partial_off_ == partial_.size()) {
      if (outbound_.empty()) return;
      partial_ = std::move(outbound_.front());
      outbound_.pop_front();
      partial_off_ = 0;
    }
    const std::size_t n = stream.write_some(std::span(partial_).subspan(partial_off_));
    partial_off_ += n;
    bytes_sent_ += n;
    if (partial_off_ == partial_.size()) {
      std::lock_guard lock(stats_mu_);
      ++stats_.frames_sent;
    }
    if (n == 0) return;
  }
}

void TelemetryLink::handle(const wire::Frame& frame) {
  switch (frame.type) {
    case wire::FrameType::feedback: {
      const auto p = wire::feedback_of(frame);
      device_.post_feedback(wire::from_micro(p.tau_ext_unm));
      std::lock_guard lock(stats_mu_);
      ++stats_.feedback_frames;
      break;
    }
    case wire::FrameType::config_set: {
      device_.post_config(from_payload(wire::config_of(frame)));
      std::lock_guard lock(stats_mu_);
      ++stats_.config_frames;
      break;
    }
    default:
      // Device-bound links only carry feedback and config.
      break;
  }
}

void TelemetryLink::receive(ByteStream& stream, std::chrono::milliseconds wait) {
  std::array<std::uint8_t, 512> buf{};
  while (true) {
    const std::size_t n = stream.read_some(buf, wait);
    if (n == 0) break;
    bytes_received_ += n;
    inbound_.clear();
    parser_.feed(std::span(buf.data(), n), inbound_);
    for (const auto& f : inbound_) handle(f);
    {
      std::lock_guard lock(stats_mu_);
      stats_.parser = parser_.diagnostics();
    }
    wait = std::chrono::milliseconds(0);
  }
}

void TelemetryLink::service(ByteStream& stream, double /*now*/, std::chrono::milliseconds rx_wait) {
  receive(stream, rx_wait);

  if (auto ack = device_.config_acks().take_newer(ack_seen_)) {
    enqueue(wire::make_frame(seq_++, wire::ConfigAckPayload{*ack}));
  }

  // Decimate on device time: the first sample of each telemetry period goes
  // out. The frame rate then follows the control loop even when this task is
  // scheduled late, and an idle control loop produces no frames.
  const double period = 1.0 / rate_;
  samples_.clear();
  device_.telemetry().drain(samples_);
  for (const auto& s : samples_) {
    const auto slot = static_cast<std::int64_t>(std::floor(s.t / period + 1e-9));
    if (slot <= last_slot_) continue;
    last_slot_ = slot;
    enqueue(wire::make_frame(seq_++, wire::quantize_state(s).payload));
  }
  if (!samples_.empty()) {
    std::lock_guard lock(stats_mu_);
    stats_.samples_consumed += samples_.size();
  }

  flush(stream);
}

void TelemetryLink::run(ByteStream& stream, Clock& clock, std::stop_token stop) {
  const double period = 1.0 / rate_;
  const double start = clock.now();
  std::uint64_t k = 0;
  try {
    while (!stop.stop_requested()) {
      const double slot = start + static_cast<double>(k) * period;
      const double left = slot - clock.now();
      if (left > 1e-3) {
        // Block on inbound bytes rather than sleeping until the slot.
        receive(stream, std::chrono::milliseconds(static_cast<int>(left * 1000.0)));
        continue;
      }
      clock.sleep_until(slot);
      const double now = clock.now() - start;
      service(stream, now);
      k = std::max(k + 1, static_cast<std::uint64_t>(std::floor(now / period)) + 1);
    }
  } catch (const TransportError&) {
    if (!stop.stop_requested()) throw;
  }
}

LinkStats TelemetryLink::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

}  // namespace hatpic
