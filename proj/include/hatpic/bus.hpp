// Topic bus: newline-delimited JSON over TCP.
//
// A client subscribes with `SUB <pattern>\n` (acknowledged with a bus/ack
// message) and may publish by sending any BusMessage line. Subscribers only see
// messages published after their subscription. A subscriber whose outbound
// queue overflows is disconnected; others are unaffected.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hatpic/message.hpp"

namespace hatpic {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BusOptions {
  std::size_t queue_limit = 1024;  // messages per subscriber
  int send_buffer = 0;             // SO_SNDBUF for client sockets, 0 = system default
};

struct BusStats {
  std::uint64_t connections = 0;
  std::uint64_t slow_disconnects = 0;
  std::uint64_t malformed = 0;
  std::uint64_t published = 0;
};

class BusServer {
 public:
  using Handler = std::function<void(const BusMessage&)>;

  /// `on_inbound` sees every well-formed message a client publishes.
  BusServer(std::string listen_addr, Handler on_inbound, BusOptions options = {});
  ~BusServer();

  BusServer(const BusServer&) = delete;
  BusServer& operator=(const BusServer&) = delete;

  /// Binds and starts accepting. Throws BindError if the address is taken.
  void start();
  void stop();

  std::uint16_t port() const { return port_; }

  /// Fans out to every matching subscriber. Thread-safe.
  void publish(const BusMessage& msg);

  BusStats stats() const;
  std::size_t subscriber_count() const;

 private:
  struct Connection;

  void accept_loop(std::stop_token stop);
  void reader(Connection* conn);
  void writer(Connection* conn);
  void deliver(const std::string& topic, const std::string& line);
  void reap();

  std::string addr_;
  Handler on_inbound_;
  BusOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::jthread acceptor_;

  mutable std::mutex mu_;
  std::list<std::shared_ptr<Connection>> conns_;

  std::atomic<std::uint64_t> connections_{0};
  std::atomic<std::uint64_t> slow_disconnects_{0};
  std::atomic<std::uint64_t> malformed_{0};
  std::atomic<std::uint64_t> published_{0};
};

/// Blocking line client for the bus; used by the robot node, tools and tests.
class BusClient {
 public:
  /// Connects to "host:port". Throws std::runtime_error on failure.
  explicit BusClient(const std::string& addr);
  ~BusClient();

  BusClient(const BusClient&) = delete;
  BusClient& operator=(const BusClient&) = delete;

  /// Sends `SUB pattern` and waits for the acknowledgement.
  void subscribe(const std::string& pattern,
                 std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
  void publish(const BusMessage& msg);
  void send_raw(const std::string& line);

  /// Next message, or nullopt on timeout. Throws std::runtime_error once the
  /// server has closed the connection.
  std::optional<BusMessage> next(std::chrono::milliseconds timeout);
  std::optional<std::string> next_line(std::chrono::milliseconds timeout);

  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace hatpic
