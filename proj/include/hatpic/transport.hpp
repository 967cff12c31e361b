// Byte-stream transports for the device link.
//
//   inproc           in-process duplex pipe
//   tcp:HOST:PORT    loopback/remote TCP; the device end listens
//   pty              pseudo-terminal; the device holds the master side and the
//                    host opens the slave as if it were a serial port

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hatpic {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteStream {
 public:
  virtual ~ByteStream() = default;

  /// Never blocks. Returns how many bytes were accepted (possibly 0).
  virtual std::size_t write_some(std::span<const std::uint8_t> bytes) = 0;

  /// Waits up to `timeout` for data. Returns 0 on timeout; throws
  /// TransportError once the peer is gone.
  virtual std::size_t read_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) = 0;

  virtual void close() = 0;
  virtual std::string describe() const = 0;
};

struct TransportPair {
  std::unique_ptr<ByteStream> device;
  std::unique_ptr<ByteStream> host;
};

/// Builds both ends of a link from a configuration string. Throws
/// TransportError for unknown modes or when the link cannot be set up, and
/// std::invalid_argument for a malformed spec.
TransportPair open_transport(const std::string& spec);

/// Writes everything or throws TransportError after `timeout`.
void write_all(ByteStream& s, std::span<const std::uint8_t> bytes,
               std::chrono::milliseconds timeout = std::chrono::milliseconds(1000));

/// Reads exactly `n` bytes or throws TransportError after `timeout`.
std::vector<std::uint8_t> read_exact(ByteStream& s, std::size_t n,
                                     std::chrono::milliseconds timeout = std::chrono::milliseconds(1000));

/// Splits "host:port"; accepts "[v6]:port" too. Throws std::invalid_argument.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& addr);

}  // namespace hatpic
