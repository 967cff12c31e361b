// Shared helpers for the unit tests and the acceptance binary.

#pragma once

#include <random>
#include <string>

#include "hatpic/protocol.hpp"

namespace testing_support {

/// A schema-valid frame of random type, sequence and payload bytes.
inline hatpic::wire::Frame random_frame(std::mt19937_64& rng) {
  using namespace hatpic::wire;
  static constexpr FrameType kTypes[] = {FrameType::telemetry, FrameType::feedback, FrameType::config_set,
                                         FrameType::config_ack};
  Frame f;
  f.type = kTypes[rng() % 4];
  f.seq = static_cast<std::uint8_t>(rng());
  f.payload.resize(*payload_size(static_cast<std::uint8_t>(f.type)));
  for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
  return f;
}

inline std::string scenario_path(const std::string& name) { return std::string(HATPIC_SOURCE_DIR) + "/scenarios/" + name; }

}  // namespace testing_support
