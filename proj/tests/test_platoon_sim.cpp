#include <gtest/gtest.h>

#include "platoon/platoon_sim.hpp"

using namespace platoon;

namespace {

PlatoonConfig cfg_for(ControllerType c, int M, int N = 5) {
  PlatoonConfig cfg;
  cfg.M = M;
  cfg.N = N;
  cfg.controllers = {c};
  cfg.initial_velocity = 18.0;
  return cfg;
}

}  // namespace

TEST(PlatoonSim, RelativeCost) {
  EXPECT_DOUBLE_EQ(delta_J(103, 100), 3.0);
  EXPECT_DOUBLE_EQ(delta_J(100, 100), 0.0);
  EXPECT_DOUBLE_EQ(delta_J(90, 100), -10.0);
  EXPECT_THROW((void)delta_J(1, 0), std::invalid_argument);
}

TEST(PlatoonSim, MetricAccumulator) {
  MetricAccumulator m(2, 0.01);
  EXPECT_NEAR(m.add({11.745, 0.0}, {25.4, 0.0}), 11.999, 1e-12);
  m.add({1.0, 2.0}, {100.0, 0.0});
  EXPECT_NEAR(m.J(), 11.999 + 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(m.fuel[1], 2.0);
  EXPECT_DOUBLE_EQ(m.tracking[0], 125.4);
  EXPECT_EQ(m.increments.size(), 2u);
}

TEST(PlatoonSim, ControllerNames) {
  EXPECT_EQ(controller_from_string("hc"), ControllerType::hc);
  EXPECT_EQ(controller_from_string("LC-2"), ControllerType::lc);
  EXPECT_EQ(controller_from_string("oracle"), ControllerType::oracle);
  try {
    (void)controller_from_string("XYZ");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("ORACLE, HC, HS, HD, LC"), std::string::npos);
  }
}

TEST(PlatoonSim, ConfigValidation) {
  PlatoonConfig c;
  c.M = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PlatoonConfig{};
  c.spacing = 5.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PlatoonConfig{};
  c.controllers = {ControllerType::lc};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = PlatoonConfig{};
  c.M = 3;
  c.controllers = {ControllerType::hc, ControllerType::hd};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(PlatoonSim, SingleVehicleReducesToLocalControl) {
  const PlatoonConfig cfg = cfg_for(ControllerType::hc, 1);
  PlatoonSim sim(cfg, 3);
  const StepLog log = sim.step();
  ReferenceGenerator ref(3, {0, 0});
  ref.reset({0, 18.0});
  const DesiredTrajectory w = ref.window(cfg.N);
  EXPECT_EQ(log.reference, w.front());
  double best = kInfCost;
  for (GearSelector s : kAllSelectors) {
    const OcpSolution r = solve(build_single_vehicle_ocp(cfg.params, {0, 18.0},
                                                         constant_schedule(cfg.params, {0, 18.0}, s, cfg.N), w, {}));
    if (r.solved()) best = std::min(best, r.objective);
  }
  ASSERT_EQ(log.vehicles.size(), 1u);
  EXPECT_NEAR(log.vehicles[0].cost, best, 1e-5);
  EXPECT_EQ(log.vehicles[0].slack, 0.0);
}

TEST(PlatoonSim, BootstrapPlanCruisesFromCurrentState) {
  const PlatoonConfig cfg = cfg_for(ControllerType::hc, 3);
  PlatoonSim sim(cfg, 2);
  for (int i = 1; i < 3; ++i) {
    const VehicleMemory& m = sim.vehicles()[static_cast<std::size_t>(i)];
    const std::vector<double> p = behind_positions(m, cfg.params.dt);
    ASSERT_EQ(p.size(), static_cast<std::size_t>(cfg.N + 1));
    for (int t = 0; t <= cfg.N; ++t) EXPECT_NEAR(p[static_cast<std::size_t>(t)], m.x.p + cfg.params.dt * m.x.v * t, 1e-9);
  }
  // Equal speeds at the desired spacing need no gap slack on the first step.
  const StepLog log = sim.step();
  for (const VehicleLog& v : log.vehicles) EXPECT_LT(v.slack, 1e-6) << v.vehicle;
}

TEST(PlatoonSim, EpisodeMetricAndGaps) {
  const EpisodeResult r = run_episode(cfg_for(ControllerType::hc, 3), 5, 40);
  double sum = 0.0;
  for (const StepLog& s : r.logs) {
    double inc = 0.0;
    for (const VehicleLog& v : s.vehicles) {
      inc += v.fuel + 0.01 * v.tracking;
      if (v.vehicle > 0 && v.slack == 0.0) EXPECT_GE(v.gap, 10.0 - 1e-6) << s.k;
    }
    EXPECT_NEAR(inc, s.increment, 1e-9);
    sum += s.increment;
  }
  EXPECT_NEAR(sum, r.metrics.J(), 1e-9);
  EXPECT_EQ(r.logs.size(), 40u);
  EXPECT_EQ(r.metrics.fuel.size(), 3u);
}

TEST(PlatoonSim, MetricAdditivityAndDeterminism) {
  const PlatoonConfig cfg = cfg_for(ControllerType::hs, 2);
  const EpisodeResult a = run_episode(cfg, 9, 30), b = run_episode(cfg, 9, 30);
  EXPECT_EQ(episode_csv(a), episode_csv(b));
  const EpisodeResult head = run_episode(cfg, 9, 12);
  PlatoonSim sim(cfg, 9);
  for (int k = 0; k < 12; ++k) (void)sim.step();
  const double J12 = sim.metrics().J();
  for (int k = 12; k < 30; ++k) (void)sim.step();
  EXPECT_DOUBLE_EQ(J12, head.metrics.J());
  double tail = 0.0;
  for (std::size_t k = 12; k < 30; ++k) tail += a.logs[k].increment;
  EXPECT_NEAR(head.metrics.J() + tail, sim.metrics().J(), 1e-9 * sim.metrics().J());
  EXPECT_DOUBLE_EQ(sim.metrics().J(), a.metrics.J());
}

TEST(PlatoonSim, LearnedControllerFallsBackToHeuristic) {
  // A zero network ties every score, so the policy always down-shifts; from
  // top gear at speed this becomes infeasible and the heuristic must win.
  auto net = std::make_shared<RnnModel>(RnnConfig{CellType::gru, 1, 4, kFeatureDim});
  PlatoonConfig cfg = cfg_for(ControllerType::lc, 1);
  cfg.initial_velocity = 25.0;
  cfg.policy = net;
  const EpisodeResult r = run_episode(cfg, 2, 5);
  bool heuristic = false;
  for (const StepLog& s : r.logs) {
    const VehicleLog& v = s.vehicles[0];
    EXPECT_TRUE(std::isfinite(v.cost));
    if (v.source == GearSource::policy) EXPECT_LE(v.policy_cost, v.heuristic_cost);
    if (v.source == GearSource::heuristic) {
      heuristic = true;
      EXPECT_TRUE(!std::isfinite(v.policy_cost) || v.policy_cost > v.heuristic_cost);
    }
  }
  EXPECT_TRUE(heuristic);
}

TEST(PlatoonSim, EvaluateAgainstBaseline) {
  const PlatoonConfig cfg = cfg_for(ControllerType::hc, 1, 4);
  const std::vector<EvaluationEntry> entries{{"HC", ControllerType::hc, nullptr}, {"HS", ControllerType::hs, nullptr}};
  int episodes = 0;
  const EvaluationResult res =
      evaluate(cfg, entries, {1, 2}, 10, "HC", [&](const auto&, std::uint64_t, const EpisodeResult&) { ++episodes; });
  EXPECT_EQ(episodes, 4);
  for (double d : res.delta[res.index("HC")]) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(res.delta_stats("HS").count, 2u);
  EXPECT_NEAR(res.delta[1][0], delta_J(res.J[1][0], res.J[0][0]), 1e-12);
  EXPECT_THROW((void)evaluate(cfg, entries, {1}, 2, "LC"), std::out_of_range);
}

TEST(PlatoonSim, SummaryStats) {
  const SummaryStats s = summarize({3, 1, 2, 4});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.max, 4);
  EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2}, 0.9), 1.9);
}
