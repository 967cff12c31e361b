#include "hatpic/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace hatpic {

namespace {

std::string errno_text(const std::string& what) {
  return what + ": " + std::strerror(errno);
}

// ---------------------------------------------------------------------------
// inproc

struct PipeHalf {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> bytes;
  bool closed = false;
};

constexpr std::size_t kPipeCapacity = 1 << 20;

class InprocStream final : public ByteStream {
 public:
  InprocStream(std::shared_ptr<PipeHalf> rx, std::shared_ptr<PipeHalf> tx, std::string name)
      : rx_(std::move(rx)), tx_(std::move(tx)), name_(std::move(name)) {}
  ~InprocStream() override { close(); }

  std::size_t write_some(std::span<const std::uint8_t> bytes) override {
    std::size_t n = 0;
    {
      std::lock_guard lock(tx_->mu);
      if (tx_->closed) throw TransportError("inproc pipe closed");
      n = std::min(bytes.size(), kPipeCapacity - tx_->bytes.size());
      tx_->bytes.insert(tx_->bytes.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    }
    if (n > 0) tx_->cv.notify_one();
    return n;
  }

  std::size_t read_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) override {
    std::unique_lock lock(rx_->mu);
    rx_->cv.wait_for(lock, timeout, [&] { return !rx_->bytes.empty() || rx_->closed; });
    if (rx_->bytes.empty()) {
      if (rx_->closed) throw TransportError("inproc pipe closed");
      return 0;
    }
    const std::size_t n = std::min(buf.size(), rx_->bytes.size());
    std::copy_n(rx_->bytes.begin(), n, buf.begin());
    rx_->bytes.erase(rx_->bytes.begin(), rx_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
  }

  void close() override {
    for (auto* half : {rx_.get(), tx_.get()}) {
      {
        std::lock_guard lock(half->mu);
        half->closed = true;
      }
      half->cv.notify_all();
    }
  }

  std::string describe() const override { return name_; }

 private:
  std::shared_ptr<PipeHalf> rx_;
  std::shared_ptr<PipeHalf> tx_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// file-descriptor backed (TCP socket or pty)

class FdStream final : public ByteStream {
 public:
  FdStream(int fd, std::string name) : fd_(fd), name_(std::move(name)) {
    const int flags = ::fcntl(fd_, F_GETFL, 0);
    ::fcntl(fd_, F_SETFL, flags | O_NONBLOCK);
  }
  ~FdStream() override { close(); }

  std::size_t write_some(std::span<const std::uint8_t> bytes) override {
    if (fd_ < 0) throw TransportError(name_ + ": closed");
    if (bytes.empty()) return 0;
    const ssize_t n = send_or_write(fd_, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return 0;
      throw TransportError(errno_text(name_ + ": write"));
    }
    return static_cast<std::size_t>(n);
  }

  std::size_t read_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) override {
    if (fd_ < 0) throw TransportError(name_ + ": closed");
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready < 0) {
      if (errno == EINTR) return 0;
      throw TransportError(errno_text(name_ + ": poll"));
    }
    if (ready == 0) return 0;
    const ssize_t n = ::read(fd_, buf.data(), buf.size());
    if (n == 0) throw TransportError(name_ + ": peer closed");
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) return 0;
      throw TransportError(errno_text(name_ + ": read"));
    }
    return static_cast<std::size_t>(n);
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  std::string describe() const override { return name_; }

 private:
  // MSG_NOSIGNAL keeps a dead TCP peer from raising SIGPIPE; ptys are not
  // sockets and go through write().
  static ssize_t send_or_write(int fd, const void* data, std::size_t len) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) return ::write(fd, data, len);
    return n;
  }

  int fd_;
  std::string name_;
};

TransportPair open_inproc() {
  auto a = std::make_shared<PipeHalf>();
  auto b = std::make_shared<PipeHalf>();
  return {std::make_unique<InprocStream>(a, b, "inproc(device)"),
          std::make_unique<InprocStream>(b, a, "inproc(host)")};
}

TransportPair open_tcp(const std::string& addr) {
  const auto [host, port] = split_host_port(addr);

  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) {
    throw TransportError("tcp: cannot resolve " + host);
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

  const int listener = ::socket(res->ai_family, SOCK_STREAM, 0);
  if (listener < 0) throw TransportError(errno_text("tcp: socket"));
  const int one = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listener, res->ai_addr, res->ai_addrlen) < 0 || ::listen(listener, 1) < 0) {
    const auto msg = errno_text("tcp: bind " + addr);
    ::close(listener);
    throw TransportError(msg);
  }

  sockaddr_storage bound{};
  socklen_t bound_len = sizeof bound;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&bound), &bound_len);

  const int client = ::socket(bound.ss_family, SOCK_STREAM, 0);
  if (client < 0 || ::connect(client, reinterpret_cast<sockaddr*>(&bound), bound_len) < 0) {
    const auto msg = errno_text("tcp: connect " + addr);
    if (client >= 0) ::close(client);
    ::close(listener);
    throw TransportError(msg);
  }
  const int server = ::accept(listener, nullptr, nullptr);
  ::close(listener);
  if (server < 0) {
    ::close(client);
    throw TransportError(errno_text("tcp: accept"));
  }
  for (int fd : {client, server}) {
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  return {std::make_unique<FdStream>(server, "tcp(device " + addr + ")"),
          std::make_unique<FdStream>(client, "tcp(host " + addr + ")")};
}

TransportPair open_pty() {
  const int master = ::posix_openpt(O_RDWR | O_NOCTTY);
  if (master < 0) throw TransportError(errno_text("pty: posix_openpt"));
  if (::grantpt(master) < 0 || ::unlockpt(master) < 0) {
    const auto msg = errno_text("pty: grant/unlock");
    ::close(master);
    throw TransportError(msg);
  }
  const char* name = ::ptsname(master);
  if (!name) {
    ::close(master);
    throw TransportError("pty: ptsname failed");
  }
  const std::string slave_name = name;
  const int slave = ::open(slave_name.c_str(), O_RDWR | O_NOCTTY);
  if (slave < 0) {
    const auto msg = errno_text("pty: open " + slave_name);
    ::close(master);
    throw TransportError(msg);
  }
  // Raw 8-bit link on both sides, as a serial port would be configured.
  for (int fd : {slave, master}) {
    termios tio{};
    if (::tcgetattr(fd, &tio) == 0) {
      ::cfmakeraw(&tio);
      ::tcsetattr(fd, TCSANOW, &tio);
    }
  }
  return {std::make_unique<FdStream>(master, "pty(device)"),
          std::make_unique<FdStream>(slave, "pty(host " + slave_name + ")")};
}

}  // namespace

std::pair<std::string, std::uint16_t> split_host_port(const std::string& addr) {
  std::string host;
  std::string port;
  if (!addr.empty() && addr.front() == '[') {
    const auto close = addr.find(']');
    if (close == std::string::npos || close + 1 >= addr.size() || addr[close + 1] != ':') {
      throw std::invalid_argument("bad address '" + addr + "'");
    }
    host = addr.substr(1, close - 1);
    port = addr.substr(close + 2);
  } else {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("bad address '" + addr + "', want host:port");
    host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  if (host.empty() || port.empty()) throw std::invalid_argument("bad address '" + addr + "'");
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(port, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in '" + addr + "'");
  }
  if (used != port.size() || value > 65535) throw std::invalid_argument("bad port in '" + addr + "'");
  return {host, static_cast<std::uint16_t>(value)};
}

TransportPair open_transport(const std::string& spec) {
  if (spec == "inproc") return open_inproc();
  if (spec == "pty") return open_pty();
  if (spec.rfind("tcp:", 0) == 0) return open_tcp(spec.substr(4));
  throw std::invalid_argument("unknown transport '" + spec + "' (inproc | tcp:host:port | pty)");
}

void write_all(ByteStream& s, std::span<const std::uint8_t> bytes, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (!bytes.empty()) {
    const std::size_t n = s.write_some(bytes);
    bytes = bytes.subspan(n);
    if (bytes.empty()) break;
    if (std::chrono::steady_clock::now() > deadline) {
      throw TransportError(s.describe() + ": write timed out");
    }
    if (n == 0) ::usleep(100);
  }
}

std::vector<std::uint8_t> read_exact(ByteStream& s, std::size_t n, std::chrono::milliseconds timeout) {
  std::vector<std::uint8_t> out(n);
  std::size_t got = 0;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (got < n) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() < 0) throw TransportError(s.describe() + ": read timed out");
    got += s.read_some(std::span(out).subspan(got), std::max(left, std::chrono::milliseconds(1)));
  }
  return out;
}

}  // namespace hatpic
