#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <algorithm>

#include "hatpic/core.hpp"
#include "oracles.hpp"

using namespace hatpic;

namespace {

StiffnessProfile reference_profile() { return {0.0, 0.05, 0.3, 0.2, 1.0}; }

double energy(const JoystickState& s, double d, double k) { return 0.5 * d * s.omega * s.omega + 0.5 * k * s.theta * s.theta; }

}  // namespace

TEST_SUITE("core") {

TEST_CASE("stiffness branches") {
  const auto p = reference_profile();
  CHECK(recentering_stiffness(0.02, p) == 0.0);
  CHECK(recentering_stiffness(0.10, p) == 1.0);
  CHECK(recentering_stiffness(0.45, p) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(recentering_stiffness(0.45, p) == doctest::Approx(oracle::stiffness(0.45, 0, 0.05, 0.3, 0.2, 1.0)));
  // Raw fall-off is -0.6 here; the floor holds it at k_min.
  CHECK(recentering_stiffness(0.90, p) == 0.2);
  CHECK(recentering_stiffness(-0.90, p) == 0.2);
  CHECK(recentering_stiffness(0.30, p) == 1.0);
  CHECK(recentering_stiffness(0.05, p) == 1.0);
}

TEST_CASE("stiffness follows the oracle across the travel") {
  const auto p = reference_profile();
  for (double th = -1.5; th <= 1.5; th += 1e-3) {
    CHECK(recentering_stiffness(th, p) ==
          doctest::Approx(oracle::stiffness(th, p.theta0, p.q_dz, p.n, p.k_min, p.k_max)).epsilon(1e-12));
  }
}

TEST_CASE("offset centre shifts the notch but not the torque arm") {
  StiffnessProfile p = reference_profile();
  p.theta0 = 0.1;
  CHECK(recentering_stiffness(0.12, p) == 0.0);
  CHECK(recentering_stiffness(0.2, p) == 1.0);
  // The torque uses theta itself, not theta - theta0.
  CHECK(recentering_torque(0.2, p) == doctest::Approx(-0.2));
}

TEST_CASE("non-finite angle is a domain error") {
  const auto p = reference_profile();
  CHECK_THROWS_AS(recentering_stiffness(std::nan(""), p), std::domain_error);
  CHECK_THROWS_AS(recentering_torque(std::numeric_limits<double>::infinity(), p), std::domain_error);
}

TEST_CASE("re-centering torque") {
  const auto p = reference_profile();
  CHECK(recentering_torque(0.0, p) == 0.0);
  CHECK(recentering_torque(0.10, p) == doctest::Approx(-0.10).epsilon(1e-15));
  CHECK(recentering_torque(-0.10, p) == doctest::Approx(0.10).epsilon(1e-15));
}

TEST_CASE("total feedback clamps once") {
  CHECK(total_feedback(0.1, 0.2, 0.44) == doctest::Approx(0.3));
  CHECK(total_feedback(0.3, 0.3, 0.44) == 0.44);
  CHECK(total_feedback(-0.5, 0.0, 0.44) == -0.44);
  CHECK(total_feedback(1e300, 1e300, 0.44) == 0.44);
  CHECK(total_feedback(-1e300, -1e300, 0.44) == -0.44);
}

TEST_CASE("parameter validation") {
  AdmittanceParams a;
  CHECK_NOTHROW(a.validate());
  a.dt = 0.0026;
  CHECK_THROWS_WITH_AS(a.validate(), doctest::Contains("dt"), std::invalid_argument);
  a = {};
  a.d_adm = 0.0;
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);
  a = {};
  a.tau_max = -1.0;
  CHECK_THROWS_AS(a.validate(), std::invalid_argument);

  StiffnessProfile s = reference_profile();
  CHECK_NOTHROW(s.validate());
  s.q_dz = 0.3;
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("n:"), std::invalid_argument);
  s = reference_profile();
  s.k_min = 2.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = reference_profile();
  s.q_dz = -0.01;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("equilibrium is a fixed point") {
  AdmittanceParams a;
  JoystickState s{0.37, 0.0, 0.0, 0.0};
  const auto n = step_dynamics(s, 0.0, a);
  CHECK(n.omega == 0.0);
  CHECK(n.theta == 0.37);
  CHECK(n.t == doctest::Approx(a.dt));
}

TEST_CASE("constant drive reaches omega = drive / M") {
  AdmittanceParams a;  // D 0.01, M 0.1
  JoystickState s;
  double prev = -1.0;
  int steps = 0;
  while (std::fabs(s.omega - prev) >= 1e-9 && steps < 1000000) {
    prev = s.omega;
    s = step_dynamics(s, 0.05, a);
    ++steps;
  }
  CHECK(s.omega == doctest::Approx(0.5).epsilon(1e-6));

  const auto truth = oracle::brute_force(0.01, 0.1, 0.0, 0.0, 2.0, 1e-6, 2000000,
                                         [](double, double, double) { return 0.05; });
  CHECK(truth.back().omega == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("free decay follows exp(-M t / D)") {
  AdmittanceParams a;
  JoystickState s{0.0, 1.0, 0.0, 0.0};
  for (int i = 0; i < 100; ++i) s = step_dynamics(s, 0.0, a);
  // Implicit decay over 100 steps of dt*M/D = 0.01: (1.01)^-100 vs e^-1.
  CHECK(s.omega == doctest::Approx(std::exp(-1.0)).epsilon(6e-3));

  a.dt = 1e-5;
  s = {0.0, 1.0, 0.0, 0.0};
  for (int i = 0; i < 10000; ++i) s = step_dynamics(s, 0.0, a);
  CHECK(s.omega == doctest::Approx(std::exp(-1.0)).epsilon(1e-4));
}

TEST_CASE("operator torque enters with the opposite sign") {
  AdmittanceParams a;
  JoystickState s;
  s.tau_operator = 0.05;  // interaction torque; a hand pushing toward -theta
  for (int i = 0; i < 5000; ++i) s = step_dynamics(s, 0.0, a);
  CHECK(s.omega == doctest::Approx(-0.5).epsilon(1e-6));
}

TEST_CASE("non-finite dynamics input is a domain error") {
  AdmittanceParams a;
  JoystickState s;
  CHECK_THROWS_AS(step_dynamics(s, std::nan(""), a), std::domain_error);
  s.omega = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(step_dynamics(s, 0.0, a), std::domain_error);
}

TEST_CASE("velocity reference") {
  CHECK(velocity_reference(0.5, 2.0, 0.0) == 0.5);
  CHECK(velocity_reference(0.0, 3.0, 0.0) == 0.0);
  CHECK(velocity_reference(0.03, 2.0, 0.05) == 0.0);
  CHECK(velocity_reference(-0.03, 2.0, 0.05) == 0.0);
  CHECK(velocity_reference(0.05, 2.0, 0.05) == 0.05);
  CHECK(velocity_reference(-1.0, 2.0, 0.05) == -1.0);
}

TEST_CASE("reference integration") {
  ReferenceState seeded{1.0, 0.0, 2.0};
  for (int i = 0; i < 100; ++i) seeded = integrate_reference(seeded, 1.0, 0.01);
  CHECK(seeded.p_ref == doctest::Approx(1.0).epsilon(1e-12));

  ReferenceState z{0.0, 0.25, 2.0};
  for (int i = 0; i < 50; ++i) z = integrate_reference(z, 0.0, 0.01);
  CHECK(z.p_ref == 0.25);

  ReferenceState ramp{0.0, 0.0, 2.0};
  for (int i = 1; i <= 1000; ++i) ramp = integrate_reference(ramp, i * 0.001, 0.001);
  CHECK(ramp.p_ref == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(ramp.v_ref == doctest::Approx(1.0));
}

// -- properties -----------------------------------------------------------------

TEST_CASE("property: deadzone gives exactly zero torque") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    StiffnessProfile p = reference_profile();
    p.theta0 = std::uniform_real_distribution<>(-0.2, 0.2)(rng);
    p.q_dz = std::uniform_real_distribution<>(0.001, 0.2)(rng);
    p.n = p.q_dz + 0.1;
    std::uniform_real_distribution<> in(-p.q_dz, p.q_dz);
    for (int i = 0; i < 1000; ++i) {
      double th = p.theta0 + in(rng);
      if (std::fabs(th - p.theta0) >= p.q_dz) continue;
      REQUIRE(recentering_torque(th, p) == 0.0);
    }
  }
}

TEST_CASE("property: continuity at the notch edge, jump at the deadzone edge") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    StiffnessProfile p;
    p.q_dz = std::uniform_real_distribution<>(0.0, 0.2)(rng);
    p.n = p.q_dz + std::uniform_real_distribution<>(0.01, 0.5)(rng);
    p.k_min = std::uniform_real_distribution<>(0.0, 2.0)(rng);
    p.k_max = p.k_min + std::uniform_real_distribution<>(0.0, 3.0)(rng);
    const double eps = 1e-9;
    REQUIRE(std::fabs(recentering_stiffness(p.n - eps, p) - recentering_stiffness(p.n + eps, p)) < 1e-6);
    REQUIRE(std::fabs(recentering_stiffness(p.n + eps, p) - p.k_max) < 1e-6);
    if (p.q_dz > eps) {
      const double jump = recentering_stiffness(p.q_dz, p) - recentering_stiffness(p.q_dz - eps, p);
      REQUIRE(jump == p.k_max);
    }
  }
}

TEST_CASE("property: odd symmetry about zero") {
  std::mt19937_64 rng(13);
  const auto p = reference_profile();
  std::uniform_real_distribution<> th(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = th(rng);
    REQUIRE(recentering_torque(-x, p) == -recentering_torque(x, p));
  }
}

TEST_CASE("property: clamp bound") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<> mag(-300.0, 300.0);
  std::uniform_real_distribution<> lim(1e-6, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = std::copysign(std::pow(10.0, std::fabs(mag(rng))), mag(rng));
    const double b = std::copysign(std::pow(10.0, std::fabs(mag(rng))), mag(rng));
    const double m = lim(rng);
    const double out = total_feedback(std::isfinite(a) ? a : 1e300, std::isfinite(b) ? b : -1e300, m);
    REQUIRE(std::fabs(out) <= m);
  }
}

TEST_CASE("property: steady-state rate after ten time constants") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    AdmittanceParams a;
    a.d_adm = std::uniform_real_distribution<>(0.002, 0.05)(rng);
    a.m_adm = std::uniform_real_distribution<>(0.02, 0.5)(rng);
    a.dt = std::min(1e-3, a.d_adm / (10.0 * a.m_adm));
    const double tau = std::uniform_real_distribution<>(-0.6, 0.6)(rng);
    double fb = std::uniform_real_distribution<>(-0.44, 0.44)(rng);
    if (std::fabs(fb - tau) < 0.01) fb = tau + 0.05;
    JoystickState s;
    s.tau_operator = tau;
    const auto steps = static_cast<int>(std::ceil(10.0 * a.d_adm / a.m_adm / a.dt));
    for (int i = 0; i < steps; ++i) s = step_dynamics(s, fb, a);
    const double expected = (-tau + fb) / a.m_adm;
    REQUIRE(std::fabs(s.omega - expected) <= 1e-3 * std::fabs(expected));
  }
}

TEST_CASE("property: first-order convergence against a fine oracle") {
  const auto p = reference_profile();
  auto run = [&](double dt) {
    AdmittanceParams a;
    a.dt = dt;
    JoystickState s{0.4, 0.0, 0.0, 0.0};
    std::vector<JoystickState> traj{s};
    const auto steps = static_cast<int>(std::llround(1.0 / dt));
    for (int i = 0; i < steps; ++i) {
      s = step_dynamics(s, total_feedback(recentering_torque(s.theta, p), 0.0, a.tau_max), a);
      traj.push_back(s);
    }
    return traj;
  };
  auto drive = [&](double th, double, double) {
    return std::clamp(-oracle::stiffness(th, 0, 0.05, 0.3, 0.2, 1.0) * th, -0.44, 0.44);
  };
  const auto truth = oracle::brute_force(0.01, 0.1, 0.4, 0.0, 1.0, 1e-6, 500, drive);  // every 0.5 ms

  auto max_err = [&](double dt) {
    const auto traj = run(dt);
    const auto stride = static_cast<std::size_t>(std::llround(dt / 0.5e-3));
    double e = 0.0;
    for (std::size_t i = 0; i < traj.size(); ++i) e = std::max(e, std::fabs(traj[i].theta - truth[i * stride].theta));
    return e;
  };
  const double e1 = max_err(1e-3);
  const double e05 = max_err(0.5e-3);
  CHECK(e05 <= 0.6 * e1);
  CHECK(e1 < 1e-2);
}

TEST_CASE("property: discrete energy never grows for a linear spring when dt <= 2M/K") {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 200; ++trial) {
    AdmittanceParams a;
    a.d_adm = std::uniform_real_distribution<>(0.002, 0.05)(rng);
    a.m_adm = std::uniform_real_distribution<>(0.02, 0.5)(rng);
    StiffnessProfile p{0.0, 0.0, 100.0, 0.0, std::uniform_real_distribution<>(0.1, 5.0)(rng)};
    a.dt = std::min({kMaxControlStep, a.d_adm / (10.0 * a.m_adm), 2.0 * a.m_adm / p.k_max});
    JoystickState s{std::uniform_real_distribution<>(-1.0, 1.0)(rng), std::uniform_real_distribution<>(-5.0, 5.0)(rng),
                    0.0, 0.0};
    double e = energy(s, a.d_adm, p.k_max);
    for (int i = 0; i < 2000; ++i) {
      s = step_dynamics(s, recentering_torque(s.theta, p), a);
      const double next = energy(s, a.d_adm, p.k_max);
      REQUIRE(next <= e * (1.0 + 1e-12) + 1e-300);
      e = next;
    }
  }
}

TEST_CASE("dt <= D/(10M) alone does not bound the energy for a stiff spring") {
  // D/(10M) = 0.01 s, 2M/K = 0.002 s: the step sits between the two bounds.
  AdmittanceParams a{0.1, 0.001, 1e9, 0.0025};
  StiffnessProfile p{0.0, 0.0, 100.0, 0.0, 1.0};
  p.k_max = 1.0;
  a.dt = 0.0025;
  a.m_adm = 0.001;
  a.d_adm = 0.1;
  p.k_max = 2.0 * a.m_adm / 0.0015;  // 2M/K = 1.5 ms < dt
  JoystickState s{0.1, 0.0, 0.0, 0.0};
  double e = energy(s, a.d_adm, p.k_max);
  bool grew = false;
  for (int i = 0; i < 2000 && !grew; ++i) {
    s = step_dynamics(s, recentering_torque(s.theta, p), a);
    const double next = energy(s, a.d_adm, p.k_max);
    grew = next > e * (1.0 + 1e-12);
    e = next;
  }
  CHECK(grew);
}

TEST_CASE("property: reference integral matches an independent trapezoid sum bit for bit") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<> v(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double dt = std::uniform_real_distribution<>(1e-4, 1e-2)(rng);
    ReferenceState r{0.0, 0.0, 2.0};
    double prev = 0.0, sum = 0.0;
    for (int i = 0; i < 2000; ++i) {
      const double x = v(rng);
      r = integrate_reference(r, x, dt);
      sum = sum + dt * (prev + x) / 2.0;
      prev = x;
      REQUIRE(r.p_ref == sum);
    }
  }
}

}  // TEST_SUITE
