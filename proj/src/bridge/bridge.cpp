#include "hatpic/bridge.hpp"

#include <algorithm>
#include <cmath>

namespace hatpic {

namespace {

double percentile(std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  const auto idx = std::min(k, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

void check_device_params(const DeviceParams& p) {
  p.stiffness.validate();
  AdmittanceParams adm;
  adm.d_adm = p.d_adm;
  adm.m_adm = p.m_adm;
  adm.tau_max = p.tau_max;
  adm.validate();
  ServoModel servo;
  servo.theta_max = p.theta_max;
  servo.k_stop = p.k_stop;
  servo.validate(p.stiffness);
}

}  // namespace

void BridgeConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw std::invalid_argument(std::string(field) + ": " + rule);
  };
  require(!device.empty(), "device", "must not be empty");
  require(std::isfinite(v_max) && v_max > 0.0, "v_max", "must be > 0");
  require(std::isfinite(publish_rate) && publish_rate > 0.0, "publish_rate", "must be > 0");
  require(std::isfinite(feedback_gain), "feedback_gain", "must be finite");
  require(std::isfinite(f_max) && f_max >= 0.0, "f_max", "must be >= 0");
  require(std::isnan(input_deadzone) || (std::isfinite(input_deadzone) && input_deadzone >= 0.0),
          "input_deadzone", "must be >= 0");
  require(std::isfinite(staleness_timeout) && staleness_timeout >= 0.0, "staleness_timeout",
          "must be >= 0");
  require(std::isfinite(staleness_decay) && staleness_decay >= 0.0, "staleness_decay", "must be >= 0");
  require(std::isfinite(link_timeout) && link_timeout > 0.0, "link_timeout", "must be > 0");
}

double staleness_scale(double age, double timeout, double decay) {
  if (age <= timeout) return 1.0;
  if (decay <= 0.0) return 0.0;
  return std::max(0.0, 1.0 - (age - timeout) / decay);
}

BridgeCore::BridgeCore(BridgeConfig config, DeviceParams device)
    : config_(std::move(config)),
      device_(device),
      deadzone_follows_device_(std::isnan(config_.input_deadzone)) {
  config_.validate();
  ref_.v_max = config_.v_max;
}

double BridgeCore::input_deadzone() const {
  return deadzone_follows_device_ ? device_.stiffness.q_dz : config_.input_deadzone;
}

double BridgeCore::feedback_torque() const {
  if (!have_robot_) return 0.0;
  const double age = device_time_ - robot_rx_time_;
  const double force = std::clamp(f_contact_, 0.0, config_.f_max);
  return -config_.feedback_gain * force *
         staleness_scale(age, config_.staleness_timeout, config_.staleness_decay);
}

BusMessage BridgeCore::event(const std::string& name, nlohmann::json extra) const {
  BusMessage m{std::string(topics::bridge_diag), device_time_, std::move(extra)};
  m.body["event"] = name;
  return m;
}

void BridgeCore::on_device_bytes(std::span<const std::uint8_t> bytes, double host_time, Output& out) {
  frames_.clear();
  parser_.feed(bytes, frames_);
  for (const auto& f : frames_) {
    switch (f.type) {
      case wire::FrameType::telemetry:
        on_telemetry(f, host_time, out);
        break;
      case wire::FrameType::config_ack: {
        ++counters_.ack_frames;
        const bool ok = wire::config_ack_of(f).status == wire::ConfigStatus::accepted;
        out.messages.push_back(event("config_ack", {{"status", ok ? "accepted" : "rejected"}}));
        break;
      }
      default:
        break;
    }
  }
}

void BridgeCore::on_telemetry(const wire::Frame& frame, double host_time, Output& out) {
  const auto payload = wire::telemetry_of(frame);
  const JoystickState js = wire::dequantize_payload(payload);
  ++counters_.telemetry_frames;

  const double v_new = velocity_reference(js.theta, ref_.v_max, input_deadzone());
  if (!have_sample_) {
    device_time_ = js.t;
    ref_.v_ref = v_new;
    next_publish_ = device_time_;
    have_sample_ = true;
  } else {
    const double dt = wire::elapsed_seconds(last_t_us_, payload.t_us);
    device_time_ += dt;
    if (dt > 0.0) ref_ = integrate_reference(ref_, v_new, dt);
  }
  last_t_us_ = payload.t_us;
  link_up_ = true;

  const double offset = host_time - device_time_;
  min_offset_ = std::min(min_offset_, offset);
  if (latency_.size() >= 8192) latency_.erase(latency_.begin(), latency_.begin() + 4096);
  latency_.push_back(offset - min_offset_);

  const double period = 1.0 / config_.publish_rate;
  if (device_time_ + 1e-9 >= next_publish_) {
    out.messages.push_back({std::string(topics::joystick_state), device_time_,
                            {{"theta", js.theta}, {"omega", js.omega}, {"tau", js.tau_operator}}});
    out.messages.push_back({std::string(topics::robot_ref), device_time_,
                            {{"v_ref", ref_.v_ref}, {"p_ref", ref_.p_ref}, {"v_max", ref_.v_max}}});
    next_publish_ += period;
    if (next_publish_ < device_time_) next_publish_ = device_time_ + period;
  }

  if (have_robot_) {
    const auto tau = wire::to_micro(feedback_torque());
    wire::encode_into(wire::make_frame(seq_++, wire::FeedbackPayload{tau.value}), out.device_bytes);
    ++counters_.feedback_sent;
  }
}

void BridgeCore::on_bus_message(const BusMessage& msg, Output& out) {
  try {
    if (msg.topic == topics::robot_state) {
      const double f = msg.number("f_contact");
      if (f < 0.0) throw MessageError("robot/state: f_contact must be >= 0");
      f_contact_ = f;
      robot_rx_time_ = device_time_;
      have_robot_ = true;
    } else if (msg.topic == topics::operator_torque) {
      out.operator_torque = msg.number("tau");
    } else if (msg.topic == topics::operator_params) {
      on_params(msg, out);
    }
  } catch (const MessageError& e) {
    ++counters_.bus_malformed;
    out.messages.push_back(event("malformed", {{"topic", msg.topic}, {"error", e.what()}}));
  }
}

void BridgeCore::on_params(const BusMessage& msg, Output& out) {
  DeviceParams next = device_;
  double v_max = ref_.v_max;
  bool device_changed = false;

  struct Field {
    const char* key;
    double* slot;
  };
  const Field fields[] = {
      {"theta0", &next.stiffness.theta0}, {"q_dz", &next.stiffness.q_dz},
      {"n", &next.stiffness.n},           {"k_min", &next.stiffness.k_min},
      {"k_max", &next.stiffness.k_max},   {"d_adm", &next.d_adm},
      {"m_adm", &next.m_adm},             {"tau_max", &next.tau_max},
      {"theta_max", &next.theta_max},     {"k_stop", &next.k_stop},
  };
  for (auto it = msg.body.begin(); it != msg.body.end(); ++it) {
    if (it.key() == "v_max") {
      v_max = msg.number("v_max");
      continue;
    }
    const auto f = std::find_if(std::begin(fields), std::end(fields),
                                [&](const Field& fl) { return it.key() == fl.key; });
    if (f == std::end(fields)) throw MessageError("operator/params: unknown field '" + it.key() + "'");
    *f->slot = msg.number(f->key);
    device_changed = true;
  }

  try {
    if (!(v_max > 0.0)) throw std::invalid_argument("v_max: must be > 0");
    check_device_params(next);
  } catch (const std::invalid_argument& e) {
    out.messages.push_back(event("config_ack", {{"status", "rejected"}, {"reason", e.what()}}));
    return;
  }

  ref_.v_max = v_max;
  config_.v_max = v_max;
  if (device_changed) {
    device_ = next;
    wire::encode_into(wire::make_frame(seq_++, to_payload(device_)), out.device_bytes);
    ++counters_.config_sent;
    out.messages.push_back(event("config_sent", nlohmann::json::object()));
  } else {
    out.messages.push_back(event("config_ack", {{"status", "accepted"}}));
  }
}

void BridgeCore::on_link_lost(Output& out) {
  if (!link_up_) return;
  link_up_ = false;
  ++counters_.link_losses;
  ref_.v_ref = 0.0;
  // The next sample restarts integration instead of bridging the gap.
  have_sample_ = false;
  out.messages.push_back(event("link_lost", nlohmann::json::object()));
  out.messages.push_back({std::string(topics::robot_ref), device_time_,
                          {{"v_ref", 0.0}, {"p_ref", ref_.p_ref}, {"v_max", ref_.v_max}}});
}

BusMessage BridgeCore::diag(double /*host_time*/) {
  const auto& d = parser_.diagnostics();
  BusMessage m{std::string(topics::bridge_diag), device_time_, nlohmann::json::object()};
  m.body["frames"] = counters_.telemetry_frames;
  m.body["resyncs"] = d.resyncs;
  m.body["crc_failures"] = d.crc_failures;
  m.body["unknown_type"] = d.unknown_type;
  m.body["truncated"] = d.truncated;
  m.body["discarded_bytes"] = d.discarded_bytes;
  m.body["feedback_sent"] = counters_.feedback_sent;
  m.body["config_sent"] = counters_.config_sent;
  m.body["bus_malformed"] = counters_.bus_malformed;
  m.body["link_up"] = link_up_;
  m.body["latency_p50_ms"] = 1e3 * percentile(latency_, 0.50);
  m.body["latency_p95_ms"] = 1e3 * percentile(latency_, 0.95);
  m.body["latency_p99_ms"] = 1e3 * percentile(latency_, 0.99);
  latency_.clear();
  return m;
}

}  // namespace hatpic
