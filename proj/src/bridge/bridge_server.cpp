#include "hatpic/bridge_server.hpp"

#include <algorithm>
#include <array>
#include <chrono>

#include <spdlog/spdlog.h>

namespace hatpic {

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point epoch) {
  return std::chrono::duration<double>(SteadyClock::now() - epoch).count();
}

}  // namespace

BridgeServer::BridgeServer(BridgeConfig config, DeviceParams device, BridgeServerOptions options)
    : config_(config), options_(std::move(options)), core_(std::move(config), device) {}

BridgeServer::~BridgeServer() { stop(); }

void BridgeServer::start() {
  bus_ = std::make_unique<BusServer>(
      config_.bus, [this](const BusMessage& m) { on_inbound(m, false); }, options_.bus);
  ws_ = std::make_unique<WsServer>(config_.ws, options_.static_dir,
                                   [this](const BusMessage& m) { on_inbound(m, true); });
  bus_->start();
  ws_->start();
  link_ = std::jthread([this](std::stop_token st) { device_loop(st); });
  spdlog::info("bridge: bus on port {}, websocket on port {}", bus_->port(), ws_->port());
}

void BridgeServer::stop() {
  if (link_.joinable()) {
    link_.request_stop();
    link_.join();
  }
  if (ws_) ws_->stop();
  if (bus_) bus_->stop();
  std::lock_guard lock(mu_);
  if (device_) device_->close();
}

std::uint16_t BridgeServer::bus_port() const { return bus_ ? bus_->port() : 0; }
std::uint16_t BridgeServer::ws_port() const { return ws_ ? ws_->port() : 0; }

BridgeCounters BridgeServer::counters() const {
  std::lock_guard lock(mu_);
  return core_.counters();
}

void BridgeServer::on_inbound(const BusMessage& msg, bool from_console) {
  if (from_console) {
    bus_->publish(msg);
  } else {
    ws_->broadcast(msg);
  }
  std::lock_guard lock(mu_);
  out_.clear();
  core_.on_bus_message(msg, out_);
  if (out_.operator_torque && options_.on_operator_torque) options_.on_operator_torque(*out_.operator_torque);
  dispatch(out_);
}

void BridgeServer::dispatch(BridgeCore::Output& out) {
  for (const auto& m : out.messages) {
    bus_->publish(m);
    ws_->broadcast(m);
  }
  if (!out.device_bytes.empty() && device_ && !write_failed_) {
    try {
      write_all(*device_, out.device_bytes, std::chrono::milliseconds(50));
    } catch (const TransportError& e) {
      // The link thread owns device_; let it tear the stream down.
      spdlog::warn("bridge: device write failed: {}", e.what());
      write_failed_ = true;
    }
  }
}

void BridgeServer::device_loop(std::stop_token stop) {
  const auto epoch = SteadyClock::now();
  std::array<std::uint8_t, 4096> buf{};
  auto backoff = std::chrono::milliseconds(100);
  double last_rx = 0.0;
  double next_diag = 1.0;
  BridgeCore::Output out;

  while (!stop.stop_requested()) {
    const double now = seconds_since(epoch);

    if (now >= next_diag) {
      next_diag += 1.0;
      std::lock_guard lock(mu_);
      auto m = core_.diag(now);
      if (options_.diag_extra) options_.diag_extra(m.body);
      bus_->publish(m);
      ws_->broadcast(m);
    }

    bool have_device;
    {
      std::lock_guard lock(mu_);
      have_device = device_ != nullptr;
    }
    if (!have_device) {
      std::unique_ptr<ByteStream> s;
      try {
        s = options_.connect ? options_.connect() : nullptr;
      } catch (const TransportError& e) {
        spdlog::debug("bridge: device not reachable: {}", e.what());
      }
      if (!s) {
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, std::chrono::milliseconds(2000));
        continue;
      }
      spdlog::info("bridge: device link up on {}", s->describe());
      backoff = std::chrono::milliseconds(100);
      last_rx = seconds_since(epoch);
      std::lock_guard lock(mu_);
      device_ = std::move(s);
    }

    // Only this thread replaces device_, so reading through it unlocked is safe.
    std::size_t n = 0;
    bool lost = false;
    try {
      n = device_->read_some(buf, std::chrono::milliseconds(10));
    } catch (const TransportError& e) {
      spdlog::warn("bridge: device link lost: {}", e.what());
      lost = true;
    }

    std::lock_guard lock(mu_);
    lost = lost || write_failed_;
    write_failed_ = false;
    out.clear();
    const double t = seconds_since(epoch);
    if (n > 0) {
      last_rx = t;
      core_.on_device_bytes(std::span(buf.data(), n), t, out);
    } else if (lost || t - last_rx > config_.link_timeout) {
      core_.on_link_lost(out);
    }
    if (lost && device_) {
      device_->close();
      device_.reset();
    }
    dispatch(out);
  }
}

}  // namespace hatpic
