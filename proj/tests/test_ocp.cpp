#include <gtest/gtest.h>

#include <random>

#include "platoon/gear_heuristics.hpp"
#include "platoon/nlp_solver.hpp"
#include "platoon/ocp.hpp"

using namespace platoon;

namespace {

DesiredTrajectory cruise(double p0, double v, int N) {
  DesiredTrajectory d;
  for (int t = 0; t <= N; ++t) d.push_back({p0 + v * t, v});
  return d;
}

std::vector<double> positions(double p0, double v, int N) {
  std::vector<double> p;
  for (int t = 0; t <= N; ++t) p.push_back(p0 + v * t);
  return p;
}

GearSchedule constant(Gear g, int N) { return GearSchedule(std::vector<Gear>(static_cast<std::size_t>(N), g)); }

}  // namespace

TEST(Ocp, DimensionsWithBothNeighbours) {
  VehicleParams prm;
  NeighborPlans nb{positions(50, 20, 4), positions(-50, 20, 4)};
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 20}, constant(5, 4), cruise(0, 20, 4), nb, {});
  EXPECT_EQ(ocp.num_state_vars(), 10);
  EXPECT_EQ(ocp.num_input_vars(), 8);
  EXPECT_EQ(ocp.num_slack_vars(), 10);
  EXPECT_EQ(OcpTranscription(ocp).num_variables(), 28);
}

TEST(Ocp, LeaderHasNoAheadSlack) {
  VehicleParams prm;
  NeighborPlans nb;
  nb.behind = positions(-50, 20, 4);
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 20}, constant(5, 4), cruise(0, 20, 4), nb, {});
  EXPECT_FALSE(ocp.has_ahead());
  EXPECT_EQ(ocp.num_slack_vars(), 5);
  const OcpSolution s = solve(ocp);
  ASSERT_TRUE(s.solved());
  for (double v : s.slack_ahead) EXPECT_EQ(v, 0.0);
}

TEST(Ocp, SingleVehicleDimensions) {
  VehicleParams prm;
  const SingleVehicleOcp ocp = build_single_vehicle_ocp(prm, {0, 20}, constant(5, 4), cruise(0, 20, 4), {});
  EXPECT_EQ(ocp.num_state_vars(), 10);
  EXPECT_EQ(ocp.num_input_vars(), 8);
  EXPECT_EQ(ocp.num_slack_vars(), 0);
}

TEST(Ocp, GearSkipIsInfeasibleByConstruction) {
  VehicleParams prm;
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 10}, GearSchedule{3, 5, 5, 5}, cruise(0, 10, 4), {}, {});
  EXPECT_TRUE(ocp.infeasible_by_construction());
  const OcpSolution s = solve(ocp);
  EXPECT_FALSE(s.solved());
  EXPECT_EQ(s.objective, kInfCost);
}

TEST(Ocp, LengthMismatchThrows) {
  VehicleParams prm;
  EXPECT_THROW((void)build_fixed_gear_ocp(prm, {0, 20}, constant(5, 4), cruise(0, 20, 3), {}, {}),
               std::invalid_argument);
  EXPECT_THROW((void)build_fixed_gear_ocp(prm, {0, 20}, constant(5, 1), cruise(0, 20, 1), {}, {}),
               std::invalid_argument);
  NeighborPlans nb{positions(0, 1, 2), std::nullopt};
  EXPECT_THROW((void)build_fixed_gear_ocp(prm, {0, 20}, constant(5, 4), cruise(0, 20, 4), nb, {}),
               std::invalid_argument);
}

TEST(Ocp, SingleVehicleMatchesFixedGearWithoutNeighbours) {
  VehicleParams prm;
  const auto d = cruise(3, 18, 5);
  const FixedGearOcp a = build_fixed_gear_ocp(prm, {0, 20}, constant(5, 5), d, {}, {});
  const SingleVehicleOcp b = build_single_vehicle_ocp(prm, {0, 20}, constant(5, 5), d, {});
  const OcpTrajectory g = default_guess(a);
  EXPECT_EQ(evaluate_objective(a, g), evaluate_objective(b, g));
  const OcpSolution sa = solve(a), sb = solve(b);
  ASSERT_TRUE(sa.solved());
  EXPECT_EQ(sa.objective, sb.objective);
}

TEST(Ocp, AllGearFiveAtTwentyIsFeasible) {
  VehicleParams prm;
  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, 20}, constant(5, 6), cruise(0, 22, 6), {}));
  EXPECT_TRUE(s.solved()) << s.message;
}

TEST(Ocp, ObjectivePureFuelAtZeroError) {
  VehicleParams prm;
  const int N = 3;
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 20}, constant(5, N), cruise(0, 20, N), {}, {});
  OcpTrajectory c;
  c.states = cruise(0, 20, N);
  c.inputs.assign(N, {60.0, 0.0});
  c.slack_ahead.assign(N + 1, 0.0);
  c.slack_behind.assign(N + 1, 0.0);
  double fuel = 0;
  for (int t = 0; t < N; ++t) fuel += fuel_stage_cost(prm, 20, 60, 5);
  EXPECT_DOUBLE_EQ(evaluate_objective(ocp, c), fuel);
}

TEST(Ocp, ObjectiveTrackingAndSlackTerms) {
  VehicleParams prm;
  const int N = 2;
  NeighborPlans nb{positions(100, 20, N), std::nullopt};
  DesiredTrajectory d = cruise(5, 20, N);
  d[0] = {5, 22};
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 20}, constant(5, N), d, nb, {});
  OcpTrajectory c;
  c.states = cruise(0, 20, N);
  for (int t = 1; t <= N; ++t) c.states[static_cast<std::size_t>(t)].p += 5;  // only tau=0 is off target
  c.inputs.assign(N, {100.0, 0.0});
  c.slack_ahead.assign(N + 1, 0.0);
  c.slack_behind.assign(N + 1, 0.0);
  const double base = evaluate_objective(ocp, c);
  // One stage at (v=20, T=100, j=5) plus beta * 25.4 from the tau=0 error.
  EXPECT_NEAR(base, 2 * fuel_stage_cost(prm, 20, 100, 5) + 0.01 * 25.4, 1e-12);
  EXPECT_NEAR(fuel_stage_cost(prm, 20, 100, 5) + 0.01 * 25.4, 11.999, 1e-3);
  c.slack_ahead[1] = 1.0;
  EXPECT_NEAR(evaluate_objective(ocp, c) - base, 1000.0, 1e-9);
  c.inputs.pop_back();
  EXPECT_THROW((void)evaluate_objective(ocp, c), std::invalid_argument);
}

TEST(Ocp, ShiftSolution) {
  OcpTrajectory prev;
  for (int t = 0; t <= 4; ++t) prev.states.push_back({10.0 * t, 10.0 + t});
  for (int t = 0; t < 4; ++t) prev.inputs.push_back({50.0 + t, 1.0 * t});
  const VehicleState measured{9.5, 10.7};
  const ShiftedSolution s = shift_solution(prev, measured);
  ASSERT_EQ(s.states.size(), 4u);
  ASSERT_EQ(s.inputs.size(), 4u);
  EXPECT_EQ(s.states[0], measured);
  EXPECT_EQ(s.states[1], prev.states[2]);
  EXPECT_EQ(s.states[3], prev.states[4]);
  EXPECT_EQ(s.inputs[0], prev.inputs[1]);
  EXPECT_EQ(s.inputs[2], prev.inputs[3]);
  EXPECT_EQ(s.inputs[3], prev.inputs[3]);

  OcpTrajectory still;
  still.states.assign(5, {0, 12});
  still.inputs.assign(4, {40, 0});
  const ShiftedSolution t = shift_solution(still, {0, 12});
  for (const auto& x : t.states) EXPECT_EQ(x, (VehicleState{0, 12}));
  for (const auto& u : t.inputs) EXPECT_EQ(u, (ContinuousInput{40, 0}));
}

TEST(Ocp, ShiftGearSchedule) {
  EXPECT_EQ(shift_gear_schedule(GearSchedule{2, 3, 3, 4}), (GearSchedule{3, 3, 4, 4}));
  EXPECT_EQ(shift_gear_schedule(GearSchedule{5, 5, 5}), (GearSchedule{5, 5, 5}));
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    GearSchedule s;
    s.gears.push_back(1 + static_cast<int>(rng() % 6));
    for (int t = 1; t < 6; ++t) s.gears.push_back(std::clamp(s.gears.back() + static_cast<int>(rng() % 3) - 1, 1, 6));
    ASSERT_TRUE(s.respects_shift_rate());
    EXPECT_TRUE(shift_gear_schedule(s).respects_shift_rate());
  }
}

TEST(Ocp, SolvedObjectiveMatchesTranscription) {
  VehicleParams prm;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uv(5, 28);
  int solved = 0;
  for (int i = 0; i < 20; ++i) {
    const VehicleState x{0, uv(rng)};
    const FixedGearOcp ocp = build_fixed_gear_ocp(prm, x, constant_schedule(prm, x, GearSelector::high, 6),
                                                  cruise(2, uv(rng), 6), {}, {});
    const OcpSolution s = solve(ocp);
    if (!s.solved()) continue;
    ++solved;
    const OcpTranscription tr(ocp);
    EXPECT_NEAR(tr.objective(tr.pack(s)), s.objective, 1e-8 * std::abs(s.objective));
  }
  EXPECT_EQ(solved, 20);
}

TEST(Ocp, ConstantSchedulesAlwaysSolve) {
  VehicleParams prm;
  ASSERT_TRUE(verify_equilibrium_condition(prm).pass);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> uv(prm.v_min(), prm.v_max()), ur(5, 28);
  for (int i = 0; i < 25; ++i) {
    const VehicleState x{0, uv(rng)};
    for (GearSelector sel : kAllSelectors) {
      const OcpSolution s = solve(build_single_vehicle_ocp(prm, x, constant_schedule(prm, x, sel, 8),
                                                           cruise(0, ur(rng), 8), {}));
      EXPECT_TRUE(s.solved()) << "v=" << x.v << " " << to_string(sel) << ": " << s.message;
    }
  }
}

TEST(Ocp, FarNeighboursNeedNoSlack) {
  VehicleParams prm;
  NeighborPlans nb{positions(500, 20, 6), positions(-500, 20, 6)};
  const OcpSolution s =
      solve(build_fixed_gear_ocp(prm, {0, 20}, constant(5, 6), cruise(0, 20, 6), nb, {}));
  ASSERT_TRUE(s.solved());
  EXPECT_LE(s.slack_sum(), 1e-6);
}

TEST(Ocp, CloseNeighbourUsesSlack) {
  VehicleParams prm;
  // Vehicle ahead stopped 5 m in front: the safety distance cannot be kept.
  NeighborPlans nb{std::vector<double>(7, 5.0), std::nullopt};
  const OcpSolution s = solve(build_fixed_gear_ocp(prm, {0, 20}, constant(5, 6), cruise(0, 20, 6), nb, {}));
  ASSERT_TRUE(s.solved()) << s.message;
  EXPECT_GT(s.slack_sum(), 1.0);
}

TEST(Ocp, PreviousTorqueLimitsFirstInput) {
  VehicleParams prm;
  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, 20}, constant(5, 4), cruise(50, 28, 4), {}, 20.0));
  ASSERT_TRUE(s.solved());
  EXPECT_LE(s.inputs[0].T, 20.0 + prm.torque_rate_max * prm.dt + 1e-6);
}

TEST(Ocp, JsonSnapshot) {
  VehicleParams prm;
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, {0, 20}, constant(5, 3), cruise(0, 20, 3), {}, {});
  const auto j = to_json(ocp);
  EXPECT_EQ(j.at("N"), 3);
  EXPECT_TRUE(j.contains("vehicle"));
  const auto js = to_json(solve(ocp));
  EXPECT_TRUE(js.contains("objective"));
}
