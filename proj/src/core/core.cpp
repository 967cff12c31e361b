#include "hatpic/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hatpic {

namespace {

void require(bool ok, const char* field, const char* rule) {
  if (!ok) {
    throw std::invalid_argument(std::string(field) + ": " + rule);
  }
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::domain_error(std::string(what) + " is not finite");
  }
}

}  // namespace

void AdmittanceParams::validate() const {
  require(std::isfinite(d_adm) && d_adm > 0.0, "d_adm", "must be > 0");
  require(std::isfinite(m_adm) && m_adm > 0.0, "m_adm", "must be > 0");
  require(std::isfinite(tau_max) && tau_max > 0.0, "tau_max", "must be > 0");
  require(std::isfinite(dt) && dt > 0.0, "dt", "must be > 0");
  require(dt <= kMaxControlStep, "dt", "must be <= 2.5 ms (loop rate >= 400 Hz)");
}

void StiffnessProfile::validate() const {
  require(std::isfinite(theta0), "theta0", "must be finite");
  require(std::isfinite(q_dz) && q_dz >= 0.0, "q_dz", "must be >= 0");
  require(std::isfinite(n) && n > q_dz, "n", "must be > q_dz");
  require(std::isfinite(k_min) && k_min >= 0.0, "k_min", "must be >= 0");
  require(std::isfinite(k_max) && k_max >= k_min, "k_max", "must be >= k_min");
}

double recentering_stiffness(double theta, const StiffnessProfile& profile) {
  require_finite(theta, "theta");
  const double d = std::abs(theta - profile.theta0);
  if (d < profile.q_dz) {
    return 0.0;
  }
  if (d <= profile.n) {
    return profile.k_max;
  }
  const double delta_k = profile.k_max - profile.k_min;
  const double k_t = profile.k_min + delta_k * (1.0 - (d - profile.n) / profile.n);
  // The fall-off crosses K_min at 2N and would go negative beyond it.
  return std::clamp(k_t, profile.k_min, profile.k_max);
}

double recentering_torque(double theta, const StiffnessProfile& profile) {
  return -recentering_stiffness(theta, profile) * theta;
}

double total_feedback(double tau_rec, double tau_ext, double tau_max) {
  return std::clamp(tau_rec + tau_ext, -tau_max, tau_max);
}

JoystickState step_dynamics(const JoystickState& state, double tau_fb_total,
                            const AdmittanceParams& params) {
  require_finite(state.theta, "theta");
  require_finite(state.omega, "omega");
  require_finite(state.tau_operator, "tau_operator");
  require_finite(state.t, "t");
  require_finite(tau_fb_total, "tau_fb_total");

  const double dt = params.dt;
  const double drive = -state.tau_operator + tau_fb_total;
  JoystickState next = state;
  next.omega = (params.d_adm * state.omega + dt * drive) / (params.d_adm + dt * params.m_adm);
  next.theta = state.theta + dt * next.omega;
  next.t = state.t + dt;
  return next;
}

double velocity_reference(double theta, double v_max, double input_deadzone) {
  const double input = std::abs(theta) < input_deadzone ? 0.0 : theta;
  return 0.5 * v_max * input;
}

ReferenceState integrate_reference(const ReferenceState& ref, double v_new, double dt) {
  ReferenceState next = ref;
  next.p_ref = ref.p_ref + dt * (ref.v_ref + v_new) / 2.0;
  next.v_ref = v_new;
  return next;
}

}  // namespace hatpic
