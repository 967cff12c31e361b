// 1-DoF robot along x_W tracking the position reference, with a one-sided
// spring-damper wall as its environment.

#pragma once

#include <limits>

namespace hatpic {

struct RobotState {
  double p = 0.0;          // m
  double v = 0.0;          // m/s
  double f_contact = 0.0;  // N, >= 0, zero off the wall

  bool operator==(const RobotState&) const = default;
};

struct WorldConfig {
  double bandwidth = 10.0;  // 1/s
  double wall = std::numeric_limits<double>::infinity();  // m
  double k_wall = 500.0;    // N/m
  double b_wall = 5.0;      // N*s/m
  /// Contact admittance: the tracking velocity is reduced by f_contact / k_virtual.
  double k_virtual = 100.0;  // N*s/m
  /// Tracking speed limit, m/s.
  double v_limit = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// Wall force at position p moving at v.
double contact_force(double p, double v, const WorldConfig& world);

/// One step of the kinematic tracker:
///
///   v = sat(bw * (p_ref - p), v_limit) - f_contact / k_virtual
///   p += dt * v
///
/// with f_contact taken from the current state. The returned force is
/// re-evaluated at the new position so it is zero whenever p is off the wall.
RobotState step_robot(const RobotState& state, double p_ref, const WorldConfig& world, double dt);

}  // namespace hatpic
