// The real-time stack behind `hatpicctl serve`: firmware control and link
// threads, the bridge server, and a robot node talking to the bridge over the
// bus like any external client would.

#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <ostream>
#include <stop_token>
#include <string>
#include <thread>

#include "hatpic/bridge_server.hpp"
#include "hatpic/bus.hpp"
#include "hatpic/channel.hpp"
#include "hatpic/firmware.hpp"
#include "hatpic/robot.hpp"
#include "hatpic/scenario.hpp"
#include "hatpic/simulation.hpp"

namespace hatpic {

/// Robot process body: SUB robot/ref, step the tracker at `rate`, publish
/// robot/state every step.
class RobotNode {
 public:
  RobotNode(std::string bus_addr, WorldConfig world, RobotState initial, double rate);
  ~RobotNode();

  /// Connects and subscribes; throws std::runtime_error on failure.
  void start();
  void stop();

  RobotState state() const;
  ReferenceState reference() const;

 private:
  void loop(std::stop_token stop);

  std::string addr_;
  WorldConfig world_;
  double rate_;
  std::unique_ptr<BusClient> client_;

  mutable std::mutex mu_;
  RobotState state_;
  ReferenceState ref_;
  std::jthread thread_;
};

struct LiveOptions {
  std::filesystem::path static_dir;
  std::ostream* trace = nullptr;  // CSV rows, flushed on stop
  std::string trace_source;       // metadata only
};

class LiveStack {
 public:
  LiveStack(Scenario scenario, LiveOptions options);
  ~LiveStack();

  /// Throws BindError when a listen address is taken, TransportError when the
  /// device link cannot be opened.
  void start();
  /// Stops every thread and flushes the trace. Idempotent.
  void stop();

  std::uint16_t bus_port() const { return bridge_->bus_port(); }
  std::uint16_t ws_port() const { return bridge_->ws_port(); }

  std::uint64_t ticks() const { return firmware_->ticks_done(); }
  std::uint64_t overruns() const { return firmware_->overruns(); }

 private:
  void trace_loop(std::stop_token stop);
  void drain_trace();

  Scenario scenario_;
  LiveOptions options_;

  std::unique_ptr<FirmwareEmulator> firmware_;
  std::unique_ptr<TelemetryLink> link_;
  TransportPair transport_;
  std::unique_ptr<BridgeServer> bridge_;
  std::unique_ptr<RobotNode> robot_;

  DropOldestQueue<TickRecord> trace_queue_{16384};
  std::unique_ptr<TraceWriter> writer_;
  std::vector<TickRecord> trace_batch_;

  std::jthread control_thread_;
  std::jthread link_thread_;
  std::jthread trace_thread_;
  bool stopped_ = false;
};

}  // namespace hatpic
