// Bus message: one line of UTF-8 JSON, `{"topic": ..., "t": ..., "body": {...}}`.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace hatpic {

namespace topics {
inline constexpr std::string_view joystick_state = "joystick/state";
inline constexpr std::string_view robot_ref = "robot/ref";
inline constexpr std::string_view robot_state = "robot/state";
inline constexpr std::string_view bridge_diag = "bridge/diag";
inline constexpr std::string_view operator_torque = "operator/torque";
inline constexpr std::string_view operator_params = "operator/params";
inline constexpr std::string_view bus_ack = "bus/ack";
inline constexpr std::string_view bus_error = "bus/error";
}  // namespace topics

class MessageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BusMessage {
  std::string topic;
  double t = 0.0;
  nlohmann::json body = nlohmann::json::object();

  /// Serialized line including the trailing '\n'. Throws MessageError when a
  /// number in the body is not finite.
  std::string to_line() const;

  /// Parses one line (trailing newline optional). Throws MessageError.
  static BusMessage parse(std::string_view line);

  /// Numeric body field; throws MessageError when missing or not finite.
  double number(const char* key) const;
};

/// Shell-style topic pattern match ('*', '?', character classes).
bool topic_matches(std::string_view pattern, std::string_view topic);

}  // namespace hatpic
