// Live driver bridge: BridgeCore behind a device-link thread, the topic bus
// and the console WebSocket.

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <stop_token>
#include <thread>

#include "hatpic/bridge.hpp"
#include "hatpic/bus.hpp"
#include "hatpic/transport.hpp"
#include "hatpic/websocket.hpp"

namespace hatpic {

struct BridgeServerOptions {
  /// Opens (or re-opens) the host end of the device link. Throwing
  /// TransportError means "not reachable yet"; the bridge retries with backoff.
  std::function<std::unique_ptr<ByteStream>()> connect;
  /// Live operator torque from the console, for a firmware running in-process.
  std::function<void(double)> on_operator_torque;
  /// Adds fields to each periodic bridge/diag message.
  std::function<void(nlohmann::json&)> diag_extra;
  std::filesystem::path static_dir;
  BusOptions bus;
};

class BridgeServer {
 public:
  BridgeServer(BridgeConfig config, DeviceParams device, BridgeServerOptions options);
  ~BridgeServer();

  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  /// Binds the bus and WebSocket listeners (BindError on failure) and starts
  /// the device-link thread.
  void start();
  void stop();

  std::uint16_t bus_port() const;
  std::uint16_t ws_port() const;

  BridgeCounters counters() const;
  BusServer& bus() { return *bus_; }

 private:
  void device_loop(std::stop_token stop);
  void on_inbound(const BusMessage& msg, bool from_console);
  // Caller holds mu_.
  void dispatch(BridgeCore::Output& out);

  BridgeConfig config_;
  BridgeServerOptions options_;

  mutable std::mutex mu_;
  BridgeCore core_;
  BridgeCore::Output out_;
  std::unique_ptr<ByteStream> device_;
  bool write_failed_ = false;

  std::unique_ptr<BusServer> bus_;
  std::unique_ptr<WsServer> ws_;
  std::jthread link_;
};

}  // namespace hatpic
