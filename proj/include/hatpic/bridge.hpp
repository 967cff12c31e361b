// Host-side joystick driver logic, independent of sockets and threads.
//
// Device frames in -> joystick/state and robot/ref messages out (the reference
// is integrated here, on the host). robot/state in -> feedback frames to the
// device. The same object backs the live bridge server, the deterministic
// simulation and capture replay.

#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hatpic/core.hpp"
#include "hatpic/firmware.hpp"
#include "hatpic/message.hpp"
#include "hatpic/protocol.hpp"

namespace hatpic {

struct BridgeConfig {
  std::string device = "inproc";      // transport spec
  std::string bus = "127.0.0.1:7400";  // JSON-lines TCP bus
  std::string ws = "127.0.0.1:7401";   // WebSocket endpoint
  double v_max = 2.0;                 // m/s
  double publish_rate = 500.0;        // Hz
  double feedback_gain = 0.022;       // N*m per N of contact force
  double f_max = 20.0;                // contact force mapped at most, N
  /// NaN means "same as the device deadzone q_dz".
  double input_deadzone = std::numeric_limits<double>::quiet_NaN();
  double staleness_timeout = 0.1;     // s
  double staleness_decay = 0.2;       // s
  double link_timeout = 0.25;         // s without device bytes before the link counts as lost

  void validate() const;
};

/// Staleness fade shared by both ends of the link: 1 up to `timeout`, then a
/// linear ramp to 0 over `decay`.
double staleness_scale(double age, double timeout, double decay);

struct BridgeCounters {
  std::uint64_t telemetry_frames = 0;
  std::uint64_t ack_frames = 0;
  std::uint64_t feedback_sent = 0;
  std::uint64_t config_sent = 0;
  std::uint64_t bus_malformed = 0;
  std::uint64_t link_losses = 0;
};

class BridgeCore {
 public:
  struct Output {
    std::vector<BusMessage> messages;
    std::vector<std::uint8_t> device_bytes;
    std::optional<double> operator_torque;

    void clear() {
      messages.clear();
      device_bytes.clear();
      operator_torque.reset();
    }
  };

  /// `device` is the parameter set the firmware starts with; operator edits
  /// are merged into it before being pushed down.
  BridgeCore(BridgeConfig config, DeviceParams device);

  /// Bytes read from the device link. `host_time` (s, any epoch) feeds the
  /// latency estimate only.
  void on_device_bytes(std::span<const std::uint8_t> bytes, double host_time, Output& out);

  /// robot/state, operator/torque and operator/params. Anything else is ignored.
  void on_bus_message(const BusMessage& msg, Output& out);

  /// Device link went quiet: hold the reference (v_ref = 0) and report it.
  void on_link_lost(Output& out);

  /// Periodic bridge/diag message.
  BusMessage diag(double host_time);

  const ReferenceState& reference() const { return ref_; }
  double device_time() const { return device_time_; }
  double input_deadzone() const;
  const BridgeConfig& config() const { return config_; }
  const DeviceParams& device_params() const { return device_; }
  const wire::ParserDiagnostics& parser_diagnostics() const { return parser_.diagnostics(); }
  const BridgeCounters& counters() const { return counters_; }
  bool link_up() const { return link_up_; }

 private:
  void on_telemetry(const wire::Frame& frame, double host_time, Output& out);
  void on_params(const BusMessage& msg, Output& out);
  double feedback_torque() const;
  BusMessage event(const std::string& name, nlohmann::json extra) const;

  BridgeConfig config_;
  DeviceParams device_;
  bool deadzone_follows_device_;

  wire::FrameParser parser_;
  std::vector<wire::Frame> frames_;
  std::uint8_t seq_ = 0;

  bool have_sample_ = false;
  std::uint32_t last_t_us_ = 0;
  double device_time_ = 0.0;
  double next_publish_ = 0.0;
  ReferenceState ref_;
  bool link_up_ = false;

  bool have_robot_ = false;
  double f_contact_ = 0.0;
  double robot_rx_time_ = 0.0;

  double min_offset_ = std::numeric_limits<double>::infinity();
  std::vector<double> latency_;

  BridgeCounters counters_;
};

}  // namespace hatpic
