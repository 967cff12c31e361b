// Headless closed-loop run: firmware -> wire -> bridge -> robot -> bridge ->
// wire -> firmware, stepped one control tick at a time on a single thread.
// With the simulated clock the result depends only on the scenario.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hatpic/firmware.hpp"
#include "hatpic/message.hpp"
#include "hatpic/robot.hpp"
#include "hatpic/scenario.hpp"

namespace hatpic {

/// One control tick: the state entering the tick and the torques computed
/// from it, plus the host and robot side after the tick.
struct TraceRow {
  double t = 0.0;
  double theta = 0.0;
  double omega = 0.0;
  double tau_operator = 0.0;
  double tau_fb_rec = 0.0;
  double tau_fb_ext = 0.0;
  double tau_fb_total = 0.0;
  double v_ref = 0.0;
  double p_ref = 0.0;
  double p = 0.0;
  double f_contact = 0.0;
};

inline constexpr const char* kTraceColumns =
    "t,theta,omega,tau_operator,tau_fb_rec,tau_fb_ext,tau_fb_total,v_ref,p_ref,p,f_contact";

/// CSV trace: `#` metadata lines, a column header, then one %.17g row per tick.
/// The `# generated:` line is the only part that differs between identical runs.
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& meta);
  void write(const TraceRow& row);
  void flush();

 private:
  std::ostream& out_;
};

TraceRow trace_row(const TickRecord& rec, const ReferenceState& ref, const RobotState& robot);

struct SimOptions {
  std::string transport = "inproc";
  bool realtime = false;
  std::optional<double> duration;  // overrides the scenario
  /// Every device->host byte, for `decode` and `replay --capture`.
  std::ostream* capture = nullptr;
  std::function<void(const TraceRow&)> on_row;
  std::function<void(const BusMessage&)> on_message;
};

struct SimSummary {
  std::uint64_t ticks = 0;
  double duration = 0.0;
  double steady_theta = 0.0;  // mean over the last 10 % of the run
  double final_theta = 0.0;
  double max_abs_tau_total = 0.0;
  double steady_tau_total = 0.0;
  double steady_f_contact = 0.0;
  double final_p = 0.0;
  double final_p_ref = 0.0;
  std::uint64_t overruns = 0;
  std::uint64_t late_wakeups = 0;
  std::uint64_t telemetry_frames = 0;
  std::uint64_t feedback_frames = 0;
  std::uint64_t resyncs = 0;
  std::uint64_t crc_failures = 0;
  std::uint64_t device_resyncs = 0;
};

/// Throws TransportError when the link cannot be opened or stalls.
SimSummary run_simulation(const Scenario& scenario, const SimOptions& options = {});

std::string format_summary(const SimSummary& s);

/// Feeds a device->host capture through a bridge configured from `scenario`
/// and returns the robot/ref messages it publishes. The result does not
/// depend on `chunk`.
std::vector<BusMessage> replay_capture(const Scenario& scenario, std::span<const std::uint8_t> bytes,
                                       std::size_t chunk = 4096);

}  // namespace hatpic
