// Single-axis haptic joystick model: admittance dynamics, re-centering
// stiffness with deadzone and notch, feedback torque composition and the
// translational reference generator.
//
// Everything in here is a pure function of its arguments. No clocks, no I/O.

#pragma once

namespace hatpic {

/// One sample of the knob: orientation of the handle frame with respect to the
/// case frame, its rate, and the interaction torque entering the admittance law.
///
/// `tau_operator` carries the interaction torque with its admittance-law sign:
/// a positive value drives omega negative. A hand pushing the knob towards
/// +theta therefore shows up as a negative `tau_operator`.
struct JoystickState {
  double theta = 0.0;         // rad
  double omega = 0.0;         // rad/s
  double tau_operator = 0.0;  // N*m
  double t = 0.0;             // s

  bool operator==(const JoystickState&) const = default;
};

/// Slowest allowed integration step (400 Hz tactile bandwidth).
inline constexpr double kMaxControlStep = 2.5e-3;

/// Actuator torque ceiling of the smart servo, N*m.
inline constexpr double kActuatorTorqueLimit = 0.44;

struct AdmittanceParams {
  double d_adm = 0.01;                     // inertia, N*m*s^2/rad
  double m_adm = 0.1;                      // damping, N*m*s/rad
  double tau_max = kActuatorTorqueLimit;   // N*m
  double dt = 1e-3;                        // s

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct StiffnessProfile {
  double theta0 = 0.0;  // rad
  double q_dz = 0.05;   // deadzone half-width, rad
  double n = 0.3;       // notch range, rad
  double k_min = 0.2;   // N*m/rad
  double k_max = 1.0;   // N*m/rad

  void validate() const;
};

struct ReferenceState {
  double v_ref = 0.0;  // m/s
  double p_ref = 0.0;  // m
  double v_max = 1.0;  // m/s
};

/// Re-centering gain K_rec(theta).
///
/// Zero inside the deadzone, K_max across the notch band, and beyond the notch
/// the linear fall-off K_min + (K_max - K_min) * (1 - (|d| - N) / N), floored at
/// K_min. The result always lies in [0, K_max]. Throws std::domain_error on a
/// non-finite theta.
double recentering_stiffness(double theta, const StiffnessProfile& profile);

/// tau_rec = -K_rec(theta) * theta.
double recentering_torque(double theta, const StiffnessProfile& profile);

/// Sum of re-centering and interaction feedback, saturated at +/- tau_max.
double total_feedback(double tau_rec, double tau_ext, double tau_max);

/// Advances D*domega + M*omega = -tau + tau_fb_total by one step of params.dt
/// with semi-implicit Euler (implicit in the damping term, theta updated with
/// the new rate).
JoystickState step_dynamics(const JoystickState& state, double tau_fb_total,
                            const AdmittanceParams& params);

/// v_ref = (v_max / 2) * theta, with |theta| < input_deadzone mapped to zero.
double velocity_reference(double theta, double v_max, double input_deadzone);

/// Trapezoidal update of the position reference.
ReferenceState integrate_reference(const ReferenceState& ref, double v_new, double dt);

}  // namespace hatpic
