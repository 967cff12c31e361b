// WebSocket endpoint for the operator console, plus a plain HTTP GET handler
// for its static assets. Text frames carry the same JSON lines as the bus.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "hatpic/message.hpp"

namespace hatpic {

class WsServer {
 public:
  using Handler = std::function<void(const BusMessage&)>;

  /// Binds immediately; throws BindError (see bus.hpp) if that fails.
  /// `static_dir` may be empty, in which case plain GETs get a 404.
  WsServer(std::string listen_addr, std::filesystem::path static_dir, Handler on_inbound);
  ~WsServer();

  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  void start();
  void stop();

  std::uint16_t port() const { return port_; }

  /// Queues `msg` for every connected client. Slow clients drop their oldest
  /// queued messages rather than stalling the caller.
  void broadcast(const BusMessage& msg);

  std::size_t client_count() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
  std::uint16_t port_ = 0;
};

}  // namespace hatpic
