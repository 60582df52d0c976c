#include <gtest/gtest.h>

#include <random>

#include "platoon/gear_heuristics.hpp"

using namespace platoon;

namespace {

DesiredTrajectory cruise(double p0, double v, int N) {
  DesiredTrajectory d;
  for (int t = 0; t <= N; ++t) d.push_back({p0 + v * t, v});
  return d;
}

bool in_phi(const VehicleParams& prm, double v, Gear j) {
  const auto phi = feasible_gears(prm, v);
  return std::find(phi.begin(), phi.end(), j) != phi.end();
}

}  // namespace

TEST(GearHeuristics, SelectGearExamples) {
  VehicleParams prm;
  EXPECT_EQ(select_gear(prm, 20, GearSelector::low), 4);
  EXPECT_EQ(select_gear(prm, 20, GearSelector::high), 6);
  EXPECT_EQ(select_gear(prm, 20, GearSelector::mid), 5);
  EXPECT_EQ(select_gear(prm, 10, GearSelector::high), 5);
  EXPECT_EQ(select_gear(prm, 10, GearSelector::mid), 3);
  for (GearSelector s : kAllSelectors) EXPECT_EQ(select_gear(prm, prm.v_min(), s), 1);
}

TEST(GearHeuristics, LiteralMidIsAnOffset) {
  VehicleParams prm;
  // Phi(20) = {4,5,6}: the literal formula gives floor(2/2) = 1, outside Phi.
  EXPECT_EQ(select_gear(prm, 20, GearSelector::mid, true), 1);
  EXPECT_FALSE(in_phi(prm, 20, select_gear(prm, 20, GearSelector::mid, true)));
}

TEST(GearHeuristics, SelectorsOrderedAndFeasible) {
  VehicleParams prm;
  for (int i = 0; i <= 1000; ++i) {
    const double v = prm.v_min() + (prm.v_max() - prm.v_min()) * i / 1000.0;
    const Gear lo = select_gear(prm, v, GearSelector::low), mid = select_gear(prm, v, GearSelector::mid),
               hi = select_gear(prm, v, GearSelector::high);
    EXPECT_LE(lo, mid);
    EXPECT_LE(mid, hi);
    for (Gear g : {lo, mid, hi}) EXPECT_TRUE(in_phi(prm, v, g)) << v;
  }
}

TEST(GearHeuristics, ConstantSchedule) {
  VehicleParams prm;
  EXPECT_EQ(constant_schedule(prm, {0, 20}, GearSelector::high, 4), (GearSchedule{6, 6, 6, 6}));
  for (GearSelector s : kAllSelectors) EXPECT_TRUE(constant_schedule(prm, {0, 13}, s, 7).respects_shift_rate());
}

TEST(GearHeuristics, ShiftedScheduleExamples) {
  VehicleParams prm;
  EXPECT_EQ(hs_schedule(prm, GearSchedule{4, 4, 5, 5}, 20), (GearSchedule{4, 5, 5, 6}));
  EXPECT_EQ(hs_schedule(prm, GearSchedule{5, 5, 5, 5}, 20), (GearSchedule{5, 5, 5, 6}));
  EXPECT_EQ(hs_schedule(prm, GearSchedule{6, 6, 6, 6}, 20), (GearSchedule{6, 6, 6, 6}));
  // The terminal jump 4 -> 6 is clipped to 5.
  EXPECT_EQ(hs_schedule(prm, GearSchedule{4, 4, 4, 4}, 20), (GearSchedule{4, 4, 4, 5}));
}

TEST(GearHeuristics, ShiftedScheduleKeepsShiftRate) {
  VehicleParams prm;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uv(prm.v_min(), prm.v_max());
  for (int i = 0; i < 1000; ++i) {
    GearSchedule s;
    s.gears.push_back(1 + static_cast<int>(rng() % 6));
    for (int t = 1; t < 6; ++t) s.gears.push_back(std::clamp(s.gears.back() + static_cast<int>(rng() % 3) - 1, 1, 6));
    const GearSchedule h = hs_schedule(prm, s, uv(rng));
    EXPECT_TRUE(h.respects_shift_rate());
    EXPECT_TRUE(h.in_range(6));
    EXPECT_EQ(h.size(), s.size());
  }
}

TEST(GearHeuristics, MaxTractionAndSplit) {
  VehicleParams prm;
  EXPECT_NEAR(max_traction_force(prm, 20), 300 * 1.414 * 3.39 / 0.3554, 1e-9);
  EXPECT_NEAR(max_traction_force(prm, 20), 4046.3, 0.1);
  const ContinuousInput neg = split_lumped_force(prm, -1000, 5);
  EXPECT_EQ(neg.T, 15.0);
  EXPECT_NEAR(neg.F, 15 * 1.0 * 3.39 / 0.3554 + 1000, 1e-9);
  EXPECT_NEAR(neg.F, 1143.1, 0.05);
  const ContinuousInput pos = split_lumped_force(prm, 800, 5);
  EXPECT_EQ(pos.F, 0.0);
  EXPECT_NEAR(pos.T * prm.traction_gain(5), 800, 1e-9);
  EXPECT_NEAR(min_lumped_force(prm), 15 * 4.484 * 3.39 / 0.3554 - 9000, 1e-9);
}

TEST(GearHeuristics, HdHoldsCruise) {
  VehicleParams prm;
  const HdResult r = hd_control(prm, {0, 20}, cruise(0, 20, 6), {}, {}, 6, std::nullopt);
  ASSERT_TRUE(r.ok) << r.message;
  EXPECT_EQ(r.input.j, 6);
  // Lumped force close to the resistance at 20 m/s.
  EXPECT_NEAR(r.lumped_force, prm.drag * 400 + friction_force(prm), 20.0);
  EXPECT_EQ(r.input.F, 0.0);
}

TEST(GearHeuristics, HdGearAlwaysEngineSpeedFeasible) {
  VehicleParams prm;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uv(5, 28), dv(-4, 4);
  for (int i = 0; i < 30; ++i) {
    const VehicleState x{0, uv(rng)};
    const Gear prev = select_gear(prm, x.v, GearSelector::low);
    const HdResult r = hd_control(prm, x, cruise(0, std::clamp(x.v + dv(rng), 5.0, 28.0), 6), {}, {}, prev, 60.0);
    ASSERT_TRUE(r.ok) << r.message;
    EXPECT_TRUE(in_phi(prm, x.v, r.input.j));
    EXPECT_LE(std::abs(r.input.j - prev), 1);
    EXPECT_LE(std::abs(r.input.T - 60.0), prm.torque_rate_max * prm.dt + 1e-9);
    EXPECT_GE(r.input.T, prm.torque_min);
    EXPECT_LE(r.input.T, prm.torque_max);
  }
}

TEST(GearHeuristics, HdAcceleratesTowardFasterReference) {
  VehicleParams prm;
  const HdResult r = hd_control(prm, {0, 12}, cruise(0, 20, 6), {}, {}, std::nullopt, std::nullopt);
  ASSERT_TRUE(r.ok);
  EXPECT_GT(r.lumped_force, prm.drag * 144 + friction_force(prm));
  EXPECT_GT(step_dynamics(prm, {0, 12}, r.input).v, 12.0);
}
