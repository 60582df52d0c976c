#include <gtest/gtest.h>

#include <random>

#include "platoon/gear_heuristics.hpp"
#include "platoon/minlp_oracle.hpp"

using namespace platoon;

namespace {

DesiredTrajectory cruise(double p0, double v, int N) {
  DesiredTrajectory d;
  for (int t = 0; t <= N; ++t) d.push_back({p0 + v * t, v});
  return d;
}

OracleProblem instance(std::mt19937_64& rng, int N) {
  std::uniform_real_distribution<double> uv(6, 27), dv(-3, 3);
  OracleProblem op;
  op.x0 = {0, uv(rng)};
  op.desired = cruise(0, std::clamp(op.x0.v + dv(rng), 5.0, 28.0), N);
  op.j_prev = select_gear(op.params, op.x0.v, GearSelector::mid);
  return op;
}

double constant_cost(const OracleProblem& op, GearSelector s) {
  const GearSchedule g = constant_schedule(op.params, op.x0, s, op.N());
  return solve(build_fixed_gear_ocp(op.params, op.x0, g, op.desired, op.neighbors, op.weights, op.previous_torque))
      .objective;
}

}  // namespace

TEST(MinlpOracle, ReachableInterval) {
  VehicleParams prm;
  const Interval a = reachable_velocity_interval(prm, 20, 1);
  EXPECT_DOUBLE_EQ(a.lo, 17);
  EXPECT_DOUBLE_EQ(a.hi, 23);
  const Interval b = reachable_velocity_interval(prm, 20, 100);
  EXPECT_DOUBLE_EQ(b.lo, prm.v_min());
  EXPECT_DOUBLE_EQ(b.hi, prm.v_max());
  const Interval c = reachable_velocity_interval(prm, 20, 0);
  EXPECT_DOUBLE_EQ(c.lo, 20);
  EXPECT_DOUBLE_EQ(c.hi, 20);
}

TEST(MinlpOracle, PruneExamples) {
  VehicleParams prm;
  BnbNode n;
  n.gears = {5, 6};
  n.depth = 1;
  n.reachable = reachable_velocity_interval(prm, 5, 1);
  EXPECT_GT(gear_velocity_range(prm, 6).lo, n.reachable.hi);
  EXPECT_TRUE(prune(prm, n, kInfCost));

  BnbNode root;
  root.gears = {5};
  root.reachable = {20, 20};
  root.lower_bound = 3.0;
  EXPECT_FALSE(prune(prm, root, kInfCost));
  EXPECT_TRUE(prune(prm, root, 3.0));
}

TEST(MinlpOracle, TwoStepTreeHasThreeLeaves) {
  OracleProblem op;
  op.x0 = {0, 20};
  op.desired = cruise(0, 20, 2);
  op.j_prev = 5;
  const OracleResult r = solve_minlp(op);
  ASSERT_TRUE(r.feasible);
  EXPECT_LE(r.stats.leaves_solved, 3);
  EXPECT_EQ(r.schedule[0], 5);
}

TEST(MinlpOracle, CruiseNoWorseThanConstants) {
  OracleProblem op;
  op.x0 = {0, 20};
  op.desired = cruise(0, 20, 5);
  op.j_prev = 5;
  OracleOptions opt;
  opt.first_gear = FirstGearRule::free;
  const OracleResult r = solve_minlp(op, opt);
  ASSERT_TRUE(r.feasible);
  for (GearSelector s : kAllSelectors) EXPECT_LE(r.cost(), constant_cost(op, s) + 1e-6) << to_string(s);
}

TEST(MinlpOracle, ResolveReproducesCost) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 5; ++i) {
    const OracleProblem op = instance(rng, 4);
    const OracleResult r = solve_minlp(op);
    ASSERT_TRUE(r.feasible);
    EXPECT_TRUE(r.schedule.respects_shift_rate());
    EXPECT_EQ(r.schedule[0], op.j_prev);
    const OcpSolution s =
        solve(build_fixed_gear_ocp(op.params, op.x0, r.schedule, op.desired, op.neighbors, op.weights, std::nullopt));
    EXPECT_NEAR(s.objective, r.cost(), 1e-6);
  }
}

TEST(MinlpOracle, PruningNeverChangesOptimum) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const OracleProblem op = instance(rng, 4);
    OracleOptions with;
    OracleOptions without;
    without.prune_bound = false;
    without.prune_infeasible = false;
    const OracleResult a = solve_minlp(op, with);
    const OracleResult b = solve_minlp(op, without);
    ASSERT_EQ(a.feasible, b.feasible);
    if (!a.feasible) continue;
    EXPECT_NEAR(a.cost(), b.cost(), 1e-6) << i;
    EXPECT_EQ(b.stats.leaves_solved, count_shift_sequences(6, 4, {op.j_prev}));
    EXPECT_LE(a.stats.leaves_solved, b.stats.leaves_solved);
  }
}

TEST(MinlpOracle, LeafCountMatchesPathEnumeration) {
  // Direct enumeration of all base-3 increment strings.
  for (Gear root = 1; root <= 6; ++root)
    for (int N = 1; N <= 6; ++N) {
      long n = 0;
      long total = 1;
      for (int k = 1; k < N; ++k) total *= 3;
      for (long code = 0; code < total; ++code) {
        long c = code;
        int g = root;
        bool ok = true;
        for (int k = 1; k < N; ++k) {
          g += static_cast<int>(c % 3) - 1;
          c /= 3;
          ok = ok && g >= 1 && g <= 6;
        }
        n += ok;
      }
      EXPECT_EQ(count_shift_sequences(6, N, {root}), n) << root << " " << N;
    }
  EXPECT_EQ(count_shift_sequences(6, 3, {1, 2, 3, 4, 5, 6}), 6 * 9 - 2 * 5);
}

TEST(MinlpOracle, HorizonGuardAndInfeasibility) {
  OracleProblem op;
  op.x0 = {0, 20};
  op.desired = cruise(0, 20, 9);
  op.j_prev = 5;
  EXPECT_THROW((void)solve_minlp(op), std::invalid_argument);

  // Five m/s cannot be driven in top gear and no shift reaches a feasible gear
  // in one step.
  OracleProblem bad;
  bad.x0 = {0, 5};
  bad.desired = cruise(0, 5, 2);
  bad.j_prev = 6;
  const OracleResult r = solve_minlp(bad);
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.cost(), kInfCost);
}

TEST(MinlpOracle, WallBudgetReportsTimeout) {
  std::mt19937_64 rng(2);
  OracleProblem op = instance(rng, 6);
  OracleOptions opt;
  opt.first_gear = FirstGearRule::free;
  opt.max_wall_seconds = 1e-9;
  const OracleResult r = solve_minlp(op, opt);
  EXPECT_TRUE(r.stats.timed_out);
}
