// Device firmware twin: the fixed-rate feedback loop and the serial link task.
//
// The control task reads the latest host feedback and operator torque from
// mailboxes, renders the re-centering and interaction torques, adds the
// hard-stop spring, integrates the admittance law and pushes one sample per
// tick into a drop-oldest telemetry queue. The link task paces telemetry frames
// out and parses inbound feedback/config frames into the mailboxes. Both can be
// driven tick-by-tick (simulated clock) or from their own threads.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <random>
#include <stop_token>
#include <string>
#include <vector>

#include "hatpic/channel.hpp"
#include "hatpic/clock.hpp"
#include "hatpic/core.hpp"
#include "hatpic/protocol.hpp"
#include "hatpic/transport.hpp"

namespace hatpic {

struct ServoModel {
  double theta_max = 1.0;         // hard-stop position, rad
  double k_stop = 200.0;          // hard-stop stiffness, N*m/rad
  double position_quantum = 0.0;  // encoder resolution, rad (0 = off)
  double torque_quantum = 0.0;    // command resolution, N*m (0 = off)

  void validate(const StiffnessProfile& profile) const;
};

/// Virtual spring at the travel limits: -k_stop * overshoot * sign(theta).
double hard_stop_torque(double theta, const ServoModel& servo);

/// Rounds to the nearest multiple of `quantum`; identity when quantum is 0.
double quantize_to(double value, double quantum);

enum class OperatorKind { step, sine, chirp, hold, external };

std::optional<OperatorKind> operator_kind_from(const std::string& name);
const char* to_string(OperatorKind kind);

/// One piece of the operator's hand torque. Positive torque pushes the knob
/// towards +theta.
///
///   step      amplitude while start <= t < stop
///   hold      amplitude for the whole run
///   sine      amplitude * sin(2 pi f (t - start)) inside the window
///   chirp     linear sweep from 0 Hz to `frequency` across the window
///   external  live torque posted through the operator mailbox, inside the window
struct OperatorSegment {
  OperatorKind kind = OperatorKind::hold;
  double amplitude = 0.0;  // N*m
  double frequency = 0.0;  // Hz
  double start = 0.0;      // s
  double stop = std::numeric_limits<double>::infinity();
};

struct OperatorInput {
  std::vector<OperatorSegment> segments;
  double noise_std = 0.0;  // torque sensor noise, N*m

  void validate() const;
  bool uses_external() const;
  /// Hand torque at time t from the scripted segments; `external` is the
  /// latest live value and is added for every active external segment.
  double hand_torque(double t, double external = 0.0) const;
};

struct FirmwareConfig {
  AdmittanceParams admittance;
  StiffnessProfile stiffness;
  ServoModel servo;
  OperatorInput operator_input;
  double initial_theta = 0.0;
  double initial_omega = 0.0;
  double telemetry_rate = 500.0;     // Hz
  double feedback_timeout = 0.1;     // s of zero-order hold before decay
  double feedback_decay = 0.2;       // s to fade a stale feedback torque to zero
  std::uint64_t seed = 0;
  std::size_t telemetry_capacity = 64;

  void validate() const;
};

/// Parameters the host may change at run time over a config-set frame.
struct DeviceParams {
  StiffnessProfile stiffness;
  double d_adm = 0.0;
  double m_adm = 0.0;
  double tau_max = 0.0;
  double theta_max = 0.0;
  double k_stop = 0.0;
};

wire::ConfigPayload to_payload(const DeviceParams& p);
DeviceParams from_payload(const wire::ConfigPayload& p);

/// Everything one control tick computed. `sample` is what the device reports:
/// the encoder-quantized angle after the step.
struct TickRecord {
  JoystickState input;  // true state entering the tick, tau_operator included
  JoystickState sample;
  double hand_torque = 0.0;
  double tau_rec = 0.0;
  double tau_ext = 0.0;
  double tau_total = 0.0;  // clamped feedback, before actuator quantization
  double tau_stop = 0.0;
};

struct ControlSummary {
  std::uint64_t ticks = 0;
  std::uint64_t overruns = 0;       // ticks whose processing took longer than dt
  std::uint64_t late_wakeups = 0;   // ticks started more than dt after their slot
  std::uint64_t discarded_feedback = 0;
  std::uint64_t configs_applied = 0;
  std::uint64_t configs_rejected = 0;
  double max_abs_tau_total = 0.0;
};

struct LinkStats {
  std::uint64_t frames_sent = 0;
  std::uint64_t frames_dropped = 0;  // evicted from the outbound queue
  std::uint64_t samples_consumed = 0;
  std::uint64_t feedback_frames = 0;
  std::uint64_t config_frames = 0;
  wire::ParserDiagnostics parser;
};

class FirmwareEmulator {
 public:
  explicit FirmwareEmulator(FirmwareConfig config);

  FirmwareEmulator(const FirmwareEmulator&) = delete;
  FirmwareEmulator& operator=(const FirmwareEmulator&) = delete;

  // -- control task ---------------------------------------------------------

  /// Runs one control step.
  TickRecord tick();

  /// Fixed-rate loop on `clock` until stopped or `max_ticks` ran (0 = no
  /// limit). Every record is also pushed to `trace` when one is attached.
  ControlSummary run_control_loop(Clock& clock, std::stop_token stop, std::uint64_t max_ticks = 0);

  ControlSummary summary() const;
  JoystickState true_state() const { return state_; }
  const FirmwareConfig& config() const { return config_; }

  void attach_trace(DropOldestQueue<TickRecord>* trace) { trace_ = trace; }

  // -- mailboxes (any thread) -------------------------------------------------

  void post_feedback(double tau_ext) { feedback_.post(tau_ext); }
  void post_operator_torque(double tau) { operator_.post(tau); }
  void post_config(const DeviceParams& params) { config_in_.post(params); }

  DropOldestQueue<JoystickState>& telemetry() { return telemetry_; }
  Mailbox<wire::ConfigStatus>& config_acks() { return config_acks_; }

  // Live counters, readable from other threads.
  std::uint64_t ticks_done() const { return ticks_done_.load(std::memory_order_relaxed); }
  std::uint64_t overruns() const { return overruns_.load(std::memory_order_relaxed); }

 private:
  double feedback_torque(double t);
  void apply_pending_config();

  FirmwareConfig config_;
  JoystickState state_;
  std::uint64_t tick_index_ = 0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};

  Mailbox<double> feedback_;
  Mailbox<double> operator_;
  Mailbox<DeviceParams> config_in_;
  Mailbox<wire::ConfigStatus> config_acks_;
  DropOldestQueue<JoystickState> telemetry_;
  DropOldestQueue<TickRecord>* trace_ = nullptr;

  std::uint64_t feedback_seen_ = 0;
  std::uint64_t config_seen_ = 0;
  bool have_feedback_ = false;
  double held_feedback_ = 0.0;
  double feedback_rx_t_ = 0.0;

  ControlSummary summary_;
  std::atomic<std::uint64_t> ticks_done_{0};
  std::atomic<std::uint64_t> overruns_{0};
};

/// The second firmware task: paces telemetry frames out at `rate` and feeds
/// inbound frames to the emulator's mailboxes.
class TelemetryLink {
 public:
  TelemetryLink(FirmwareEmulator& device, double rate, std::size_t outbound_capacity = 64);

  /// One service pass: drains inbound bytes (waiting at most `rx_wait`),
  /// sends any pending config-ack, emits one telemetry frame per telemetry
  /// period of queued samples (by sample time), and flushes what the
  /// transport accepts without blocking. `now` only paces `run`.
  void service(ByteStream& stream, double now,
               std::chrono::milliseconds rx_wait = std::chrono::milliseconds(0));

  /// Runs `service` on `clock` until stopped. Sleeps between sends.
  void run(ByteStream& stream, Clock& clock, std::stop_token stop);

  /// Drains inbound bytes, waiting at most `wait` for the first chunk.
  void receive(ByteStream& stream, std::chrono::milliseconds wait);

  LinkStats stats() const;
  std::uint8_t next_seq() const { return seq_; }

  // Byte totals; only meaningful on the thread driving the link.
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }

 private:
  void enqueue(const wire::Frame& frame);
  void flush(ByteStream& stream);
  void handle(const wire::Frame& frame);

  FirmwareEmulator& device_;
  double rate_;
  std::size_t capacity_;
  std::uint8_t seq_ = 0;
  std::uint64_t ack_seen_ = 0;

  wire::FrameParser parser_;
  std::vector<wire::Frame> inbound_;
  std::deque<std::vector<std::uint8_t>> outbound_;
  std::vector<std::uint8_t> partial_;
  std::size_t partial_off_ = 0;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
  std::vector<JoystickState> samples_;
  std::int64_t last_slot_ = -1;

  mutable std::mutex stats_mu_;
  LinkStats stats_;
};

}  // namespace hatpic
