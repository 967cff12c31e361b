#include "hatpic/robot.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hatpic {

void WorldConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw std::invalid_argument(std::string(field) + ": " + rule);
  };
  require(std::isfinite(bandwidth) && bandwidth > 0.0, "bandwidth", "must be > 0");
  require(!std::isnan(wall), "wall", "must not be NaN");
  require(std::isfinite(k_wall) && k_wall >= 0.0, "k_wall", "must be >= 0");
  require(std::isfinite(b_wall) && b_wall >= 0.0, "b_wall", "must be >= 0");
  require(!std::isnan(k_virtual) && k_virtual > 0.0, "k_virtual", "must be > 0");
  require(!std::isnan(v_limit) && v_limit > 0.0, "v_limit", "must be > 0");
}

double contact_force(double p, double v, const WorldConfig& world) {
  if (!(p > world.wall)) return 0.0;
  return world.k_wall * (p - world.wall) + world.b_wall * std::max(v, 0.0);
}

RobotState step_robot(const RobotState& state, double p_ref, const WorldConfig& world, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt: must be > 0");

  const double tracking = std::clamp(world.bandwidth * (p_ref - state.p), -world.v_limit, world.v_limit);
  RobotState next;
  next.v = tracking - state.f_contact / world.k_virtual;
  next.p = state.p + dt * next.v;
  next.f_contact = contact_force(next.p, next.v, world);
  return next;
}

}  // namespace hatpic
