#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "platoon/vehicle_model.hpp"

using namespace platoon;

namespace {

// Independent evaluation of the engine-speed map from the raw constants.
double rpm(double v, double z, double zf = 3.39, double r = 0.3554) { return 30.0 * v * z * zf / (r * std::numbers::pi); }

const std::vector<double> kZ{4.484, 2.872, 1.842, 1.414, 1.0, 0.742};

std::vector<Gear> enumerate_gears(double v) {
  std::vector<Gear> out;
  for (int j = 0; j < 6; ++j) {
    const double w = rpm(v, kZ[static_cast<std::size_t>(j)]);
    if (w >= 900.0 - 1e-6 && w <= 3000.0 + 1e-6) out.push_back(j + 1);
  }
  return out;
}

}  // namespace

TEST(VehicleModel, VelocityBoundsFromEngineSpeed) {
  VehicleParams prm;
  EXPECT_NEAR(prm.v_min(), 2.204, 1e-3);
  EXPECT_NEAR(prm.v_max(), 44.388, 1e-3);
}

TEST(VehicleModel, EngineSpeedExamples) {
  VehicleParams prm;
  EXPECT_NEAR(engine_speed(prm, 2.204, 1), 900.0, 0.5);
  EXPECT_NEAR(engine_speed(prm, 44.388, 6), 3000.0, 0.5);
  EXPECT_NEAR(engine_speed(prm, 20.0, 5), 1821.7, 0.05);
  EXPECT_NEAR(engine_speed(prm, 20.0, 5), rpm(20.0, 1.0), 1e-9);
  EXPECT_THROW((void)engine_speed(prm, 20.0, 0), std::domain_error);
  EXPECT_THROW((void)engine_speed(prm, 20.0, 7), std::domain_error);
}

TEST(VehicleModel, EngineSpeedLinearAndIncreasingInRatio) {
  VehicleParams prm;
  for (Gear j = 1; j <= 6; ++j) {
    EXPECT_NEAR(engine_speed(prm, 10.0, j) * 2.0, engine_speed(prm, 20.0, j), 1e-9);
    if (j > 1) EXPECT_LT(engine_speed(prm, 10.0, j), engine_speed(prm, 10.0, j - 1));
  }
}

TEST(VehicleModel, FeasibleGearExamples) {
  VehicleParams prm;
  EXPECT_EQ(feasible_gears(prm, 20.0), (std::vector<Gear>{4, 5, 6}));
  EXPECT_EQ(feasible_gears(prm, 10.0), (std::vector<Gear>{2, 3, 4, 5}));
  EXPECT_EQ(feasible_gears(prm, prm.v_min()), (std::vector<Gear>{1}));
  EXPECT_THROW((void)feasible_gears(prm, 1.0), std::domain_error);
  EXPECT_THROW((void)feasible_gears(prm, 50.0), std::domain_error);
}

TEST(VehicleModel, FeasibleGearsMatchEnumerationAndAreContiguous) {
  VehicleParams prm;
  for (int i = 0; i <= 2000; ++i) {
    const double v = prm.v_min() + (prm.v_max() - prm.v_min()) * i / 2000.0;
    const auto g = feasible_gears(prm, v);
    ASSERT_FALSE(g.empty());
    for (std::size_t k = 1; k < g.size(); ++k) EXPECT_EQ(g[k], g[k - 1] + 1) << "v=" << v;
    // Away from the gear-range endpoints the brute-force enumeration is exact.
    bool near_edge = false;
    for (double z : kZ)
      near_edge = near_edge || std::abs(rpm(v, z) - 900.0) < 1e-3 || std::abs(rpm(v, z) - 3000.0) < 1e-3;
    if (!near_edge) EXPECT_EQ(g, enumerate_gears(v)) << "v=" << v;
  }
}

TEST(VehicleModel, GearVelocityRangeEndpointsAndInverse) {
  VehicleParams prm;
  EXPECT_NEAR(gear_velocity_range(prm, 1).lo, 2.204, 1e-3);
  EXPECT_NEAR(gear_velocity_range(prm, 6).hi, 44.388, 1e-3);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uv(prm.v_min(), prm.v_max());
  std::uniform_int_distribution<int> uj(1, 6);
  for (int i = 0; i < 1000; ++i) {
    const double v = uv(rng);
    const Gear j = uj(rng);
    const auto g = feasible_gears(prm, v);
    const bool in_phi = std::find(g.begin(), g.end(), j) != g.end();
    EXPECT_EQ(in_phi, gear_velocity_range(prm, j).contains(v, 1e-9));
  }
  for (Gear j = 1; j <= 6; ++j) {
    const Interval r = gear_velocity_range(prm, j);
    for (double v : {r.lo, 0.5 * (r.lo + r.hi), r.hi}) {
      const auto g = feasible_gears(prm, v);
      EXPECT_NE(std::find(g.begin(), g.end(), j), g.end()) << "gear " << j << " v " << v;
    }
  }
}

TEST(VehicleModel, FrictionForce) {
  VehicleParams prm;
  EXPECT_NEAR(friction_force(prm), 0.015 * 2000 * 9.81, 1e-9);
  EXPECT_NEAR(friction_force(prm), 294.3, 1e-9);
  prm.rolling = 0.0;
  EXPECT_NEAR(friction_force(prm), 0.0, 1e-12);
  prm.grade = std::numbers::pi / 2;
  EXPECT_NEAR(friction_force(prm), prm.mass * prm.gravity, 1e-9);
}

TEST(VehicleModel, StepDynamicsExamples) {
  VehicleParams prm;
  const VehicleState a = step_dynamics(prm, {0, 20}, {100, 0, 5});
  EXPECT_DOUBLE_EQ(a.p, 20.0);
  EXPECT_NEAR(a.v, 20.2484, 1e-4);
  const VehicleState b = step_dynamics(prm, {0, 20}, {47.93, 0, 5});
  EXPECT_NEAR(b.v, 20.0, 1e-3);
  // Equilibrium torque from the closed form leaves the velocity unchanged.
  for (Gear j = 4; j <= 6; ++j) {
    const double v = 20.0, F = 150.0;
    const double T = (prm.drag * v * v + F + friction_force(prm)) * prm.wheel_radius / (kZ[j - 1] * prm.final_drive);
    EXPECT_NEAR(step_dynamics(prm, {3.0, v}, {T, F, j}).v, v, 1e-10);
  }
}

TEST(VehicleModel, PositionUpdateIsExact) {
  VehicleParams prm;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const VehicleState x{1000 * u(rng), prm.v_min() + u(rng) * (prm.v_max() - prm.v_min())};
    const PowertrainInput in{15 + 285 * u(rng), 9000 * u(rng), 1 + static_cast<int>(6 * u(rng)) % 6};
    EXPECT_EQ(step_dynamics(prm, x, in).p, x.p + prm.dt * x.v);
  }
}

TEST(VehicleModel, VelocityJacobianMatchesFiniteDifferences) {
  VehicleParams prm;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) {
    const VehicleState x{0.0, 3 + 40 * u(rng)};
    const PowertrainInput in{15 + 285 * u(rng), 9000 * u(rng), 1 + i % 6};
    const VelocityJacobian J = step_velocity_jacobian(prm, x, in);
    const double h = 1e-5;
    auto vplus = [&](double v, double T, double F) { return step_dynamics(prm, {0, v}, {T, F, in.j}).v; };
    const double fd_v = (vplus(x.v + h, in.T, in.F) - vplus(x.v - h, in.T, in.F)) / (2 * h);
    const double fd_T = (vplus(x.v, in.T + h, in.F) - vplus(x.v, in.T - h, in.F)) / (2 * h);
    const double fd_F = (vplus(x.v, in.T, in.F + h) - vplus(x.v, in.T, in.F - h)) / (2 * h);
    EXPECT_LE(std::abs(J.dv - fd_v) / std::max(1e-12, std::abs(fd_v)), 1e-6);
    EXPECT_LE(std::abs(J.dT - fd_T) / std::max(1e-12, std::abs(fd_T)), 1e-6);
    EXPECT_LE(std::abs(J.dF - fd_F) / std::max(1e-12, std::abs(fd_F)), 1e-6);
  }
}

TEST(VehicleModel, FuelStageCost) {
  VehicleParams prm;
  EXPECT_NEAR(fuel_stage_cost(prm, 20, 100, 5), 11.745, 1e-3);
  const double w = rpm(20, 1.0);
  EXPECT_NEAR(fuel_stage_cost(prm, 20, 100, 5), 0.04981 + 0.001897 * w + 4.5232e-5 * w * 100, 1e-12);
  for (Gear j = 1; j <= 6; ++j)
    EXPECT_LE(fuel_stage_cost(prm, 12, 50, j), fuel_stage_cost(prm, 12, 51, j));
  prm.fuel = {0, 0, 0};
  EXPECT_EQ(fuel_stage_cost(prm, 20, 100, 5), 0.0);
}

TEST(VehicleModel, TrackingStageCost) {
  const Eigen::Matrix2d Q = Eigen::Vector2d(1.0, 0.1).asDiagonal();
  EXPECT_NEAR(tracking_stage_cost({0, 20}, {5, 22}, Q), 25.4, 1e-12);
  EXPECT_EQ(tracking_stage_cost({3, 4}, {3, 4}, Q), 0.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 10);
  for (int i = 0; i < 100; ++i) EXPECT_GE(tracking_stage_cost({n(rng), n(rng)}, {n(rng), n(rng)}, Q), 0.0);
}

TEST(VehicleModel, EquilibriumConditionTableOne) {
  VehicleParams prm;
  const EquilibriumReport rep = verify_equilibrium_condition(prm);
  EXPECT_TRUE(rep.pass);
  ASSERT_EQ(rep.checks.size(), 12u);
  for (const auto& c : rep.checks) {
    EXPECT_TRUE(c.ok);
    // Closed form with zero brake wherever the torque lies inside its bounds.
    const double T = (prm.drag * c.velocity * c.velocity + friction_force(prm)) * prm.wheel_radius /
                     (kZ[static_cast<std::size_t>(c.gear - 1)] * prm.final_drive);
    if (T >= prm.torque_min) EXPECT_NEAR(c.torque, T, 1e-9);
  }
  const auto& top = rep.checks.back();
  EXPECT_EQ(top.gear, 6);
  EXPECT_TRUE(top.upper_endpoint);
  EXPECT_NEAR(top.torque, 154.9, 0.05);
  EXPECT_EQ(top.brake, 0.0);
}

TEST(VehicleModel, EquilibriumConditionFailures) {
  VehicleParams weak;
  weak.torque_max = 1.0;
  weak.torque_min = 0.0;
  weak.finalize();
  EXPECT_FALSE(verify_equilibrium_condition(weak).pass);

  // Steep downhill: the required force is negative, and without brakes the
  // minimum torque cannot be cancelled.
  VehicleParams downhill;
  downhill.grade = -0.2;
  downhill.brake_max = 0.0;
  downhill.finalize();
  const EquilibriumReport rep = verify_equilibrium_condition(downhill);
  EXPECT_FALSE(rep.pass);
  EXPECT_NE(rep.str().find("FAIL"), std::string::npos);
}

TEST(VehicleModel, ParamsValidation) {
  VehicleParams p;
  p.gear_ratios = {2.0, 2.0};
  EXPECT_THROW(p.finalize(), std::invalid_argument);
  p.gear_ratios = {3.0};
  EXPECT_THROW(p.finalize(), std::invalid_argument);
  VehicleParams q;
  q.torque_min = 400;
  EXPECT_THROW(q.finalize(), std::invalid_argument);
}

TEST(VehicleModel, JsonRoundTrip) {
  VehicleParams p;
  p.mass = 1500;
  p.grade = 0.01;
  const VehicleParams q = vehicle_params_from_json(to_json(p));
  EXPECT_EQ(q.mass, 1500);
  EXPECT_EQ(q.grade, 0.01);
  EXPECT_EQ(q.gear_ratios, p.gear_ratios);
  EXPECT_THROW((void)vehicle_params_from_json({{"masss", 1}}), std::invalid_argument);
}
