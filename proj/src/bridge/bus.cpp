#include "hatpic/bus.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>

#include "hatpic/transport.hpp"

namespace hatpic {

namespace {

int open_listener(const std::string& addr, std::uint16_t& port_out) {
  const auto [host, port] = split_host_port(addr);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw BindError("cannot resolve " + addr);
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  const int fd = ::socket(res->ai_family, SOCK_STREAM, 0);
  if (fd < 0) throw BindError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) < 0 || ::listen(fd, 16) < 0) {
    const std::string msg = "bind " + addr + ": " + std::strerror(errno);
    ::close(fd);
    throw BindError(msg);
  }
  sockaddr_storage bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_out = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                         : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
  return fd;
}

bool send_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

std::string reply(std::string_view topic, nlohmann::json body) {
  return BusMessage{std::string(topic), 0.0, std::move(body)}.to_line();
}

}  // namespace

struct BusServer::Connection {
  int fd = -1;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> queue;
  std::vector<std::string> patterns;
  bool dead = false;
  std::atomic<int> finished{0};
  std::thread reader;
  std::thread writer;

  // Caller holds mu.
  void kill() {
    if (!dead) {
      dead = true;
      ::shutdown(fd, SHUT_RDWR);
    }
    cv.notify_all();
  }
};

BusServer::BusServer(std::string listen_addr, Handler on_inbound, BusOptions options)
    : addr_(std::move(listen_addr)), on_inbound_(std::move(on_inbound)), options_(options) {}

BusServer::~BusServer() { stop(); }

void BusServer::start() {
  listen_fd_ = open_listener(addr_, port_);
  acceptor_ = std::jthread([this](std::stop_token st) { accept_loop(st); });
}

void BusServer::stop() {
  if (acceptor_.joinable()) {
    acceptor_.request_stop();
    acceptor_.join();
  }
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::list<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(mu_);
    conns.swap(conns_);
  }
  for (auto& c : conns) {
    {
      std::lock_guard lock(c->mu);
      c->kill();
    }
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
}

void BusServer::accept_loop(std::stop_token stop) {
  while (!stop.stop_requested()) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 100);
    reap();
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    if (options_.send_buffer > 0) {
      ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &options_.send_buffer, sizeof options_.send_buffer);
    }
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    {
      std::lock_guard lock(mu_);
      conns_.push_back(conn);
    }
    ++connections_;
    Connection* raw = conn.get();
    conn->reader = std::thread([this, raw] { reader(raw); });
    conn->writer = std::thread([this, raw] { writer(raw); });
  }
}

void BusServer::reap() {
  std::list<std::shared_ptr<Connection>> done;
  {
    std::lock_guard lock(mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->finished.load() == 2) {
        done.push_back(*it);
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : done) {
    c->reader.join();
    c->writer.join();
    ::close(c->fd);
  }
}

void BusServer::reader(Connection* conn) {
  std::string buffer;
  char chunk[4096];
  auto enqueue_reply = [&](std::string line) {
    std::lock_guard lock(conn->mu);
    if (conn->dead) return;
    conn->queue.push_back(std::move(line));
    conn->cv.notify_all();
  };

  while (true) {
    const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));

    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;

      if (line.rfind("SUB", 0) == 0) {
        const auto rest = line.size() > 3 && line[3] == ' ' ? line.substr(4) : std::string();
        if (rest.empty() || rest.find_first_of(" \t") != std::string::npos) {
          ++malformed_;
          enqueue_reply(reply(topics::bus_error, {{"error", "expected 'SUB <topic-pattern>'"}}));
          continue;
        }
        {
          std::lock_guard lock(conn->mu);
          conn->patterns.push_back(rest);
        }
        enqueue_reply(reply(topics::bus_ack, {{"pattern", rest}}));
        continue;
      }

      BusMessage msg;
      try {
        msg = BusMessage::parse(line);
      } catch (const MessageError& e) {
        ++malformed_;
        enqueue_reply(reply(topics::bus_error, {{"error", e.what()}}));
        continue;
      }
      deliver(msg.topic, msg.to_line());
      if (on_inbound_) on_inbound_(msg);
    }
    if (buffer.size() > (1 << 20)) {
      ++malformed_;
      break;
    }
  }

  {
    std::lock_guard lock(conn->mu);
    conn->kill();
  }
  conn->finished.fetch_add(1);
}

void BusServer::writer(Connection* conn) {
  while (true) {
    std::string line;
    {
      std::unique_lock lock(conn->mu);
      conn->cv.wait(lock, [&] { return conn->dead || !conn->queue.empty(); });
      if (conn->dead) break;
      line = std::move(conn->queue.front());
      conn->queue.pop_front();
    }
    if (!send_all(conn->fd, line)) {
      std::lock_guard lock(conn->mu);
      conn->kill();
      break;
    }
  }
  conn->finished.fetch_add(1);
}

void BusServer::deliver(const std::string& topic, const std::string& line) {
  std::lock_guard lock(mu_);
  for (auto& c : conns_) {
    std::lock_guard clock(c->mu);
    if (c->dead) continue;
    bool match = false;
    for (const auto& p : c->patterns) {
      if (topic_matches(p, topic)) {
        match = true;
        break;
      }
    }
    if (!match) continue;
    if (c->queue.size() >= options_.queue_limit) {
      ++slow_disconnects_;
      c->queue.clear();
      c->kill();
      continue;
    }
    c->queue.push_back(line);
    c->cv.notify_all();
  }
}

void BusServer::publish(const BusMessage& msg) {
  ++published_;
  deliver(msg.topic, msg.to_line());
}

BusStats BusServer::stats() const {
  return {connections_.load(), slow_disconnects_.load(), malformed_.load(), published_.load()};
}

std::size_t BusServer::subscriber_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& c : conns_) {
    std::lock_guard clock(c->mu);
    if (!c->dead && !c->patterns.empty()) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------

BusClient::BusClient(const std::string& addr) {
  const auto [host, port] = split_host_port(addr);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw std::runtime_error("bus: cannot resolve " + addr);
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  fd_ = ::socket(res->ai_family, SOCK_STREAM, 0);
  if (fd_ < 0 || ::connect(fd_, res->ai_addr, res->ai_addrlen) < 0) {
    const std::string msg = "bus: connect " + addr + ": " + std::strerror(errno);
    close();
    throw std::runtime_error(msg);
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

BusClient::~BusClient() { close(); }

void BusClient::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void BusClient::send_raw(const std::string& line) {
  if (fd_ < 0 || !send_all(fd_, line)) throw std::runtime_error("bus: send failed");
}

void BusClient::publish(const BusMessage& msg) { send_raw(msg.to_line()); }

void BusClient::subscribe(const std::string& pattern, std::chrono::milliseconds timeout) {
  send_raw("SUB " + pattern + "\n");
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    auto msg = next(std::max(left, std::chrono::milliseconds(1)));
    if (!msg) continue;
    if (msg->topic == topics::bus_ack) return;
    if (msg->topic == topics::bus_error) {
      throw std::runtime_error("bus: subscribe rejected: " + msg->body.value("error", std::string()));
    }
  }
  throw std::runtime_error("bus: no acknowledgement for SUB " + pattern);
}

std::optional<std::string> BusClient::next_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    if (fd_ < 0) throw std::runtime_error("bus: connection closed");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::max<long>(left.count(), 0)));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) return std::nullopt;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) {
      close();
      throw std::runtime_error("bus: connection closed");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<BusMessage> BusClient::next(std::chrono::milliseconds timeout) {
  auto line = next_line(timeout);
  if (!line) return std::nullopt;
  return BusMessage::parse(*line);
}

}  // namespace hatpic
