// Scenario files: TOML, `schema = 1`. See scenarios/*.toml and the README for
// the key reference. Unknown keys are errors so typos do not silently fall
// back to defaults.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "hatpic/bridge.hpp"
#include "hatpic/firmware.hpp"
#include "hatpic/robot.hpp"

namespace hatpic {

/// Parse or validation failure. The message names the offending key as
/// "section.key: rule" (or "file:line: ..." for syntax errors).
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Scenario {
  int schema = 1;
  double duration = 5.0;  // s
  std::uint64_t seed = 0;
  FirmwareConfig firmware;
  WorldConfig world;
  RobotState robot_initial;
  double robot_state_rate = 500.0;  // Hz, robot/state publications
  BridgeConfig bridge;

  /// Throws ScenarioError.
  void validate() const;

  DeviceParams device_params() const;
};

Scenario parse_scenario(std::string_view text, const std::string& source = "<string>");
Scenario load_scenario(const std::filesystem::path& path);

}  // namespace hatpic
