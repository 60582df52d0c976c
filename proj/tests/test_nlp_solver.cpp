#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "platoon/gear_heuristics.hpp"
#include "platoon/nlp_solver.hpp"

using namespace platoon;

namespace {

DesiredTrajectory cruise(double p0, double v, int N) {
  DesiredTrajectory d;
  for (int t = 0; t <= N; ++t) d.push_back({p0 + v * t, v});
  return d;
}

GearSchedule constant(Gear g, int N) { return GearSchedule(std::vector<Gear>(static_cast<std::size_t>(N), g)); }

/// Brute-force optimum of the N=2 problem at v0=20, gear 5, cruising target.
/// The first input is gridded at 0.1 Nm x 1 N. For each candidate the second
/// stage is gridded in torque at 0.1 Nm with zero brake: any pair (T1, F1 > 0)
/// with T1 - F1/k >= T_min is dominated by (T1 - F1/k, 0), which yields the
/// same state at lower fuel.
ContinuousInput grid_first_input(const VehicleParams& prm, const OcpWeights& w, const DesiredTrajectory& d) {
  const double v0 = 20.0;
  double best = 1e300;
  ContinuousInput arg;
  auto track = [&](double p, double v, int t) {
    const double ep = p - d[static_cast<std::size_t>(t)].p, ev = v - d[static_cast<std::size_t>(t)].v;
    return w.Q(0, 0) * ep * ep + w.Q(1, 1) * ev * ev;
  };
  const Interval box = gear_velocity_range(prm, 5);
  for (int iF = 0; iF <= 30; ++iF) {
    const double F0 = iF;
    for (int iT = 0; iT <= 2850; ++iT) {
      const double T0 = 15.0 + 0.1 * iT;
      const VehicleState x1 = step_dynamics(prm, {0, v0}, {T0, F0, 5});
      if (std::abs(x1.v - v0) > prm.accel_max || !box.contains(x1.v)) continue;
      const double head = w.beta * (track(0, v0, 0) + track(x1.p, x1.v, 1)) + fuel_stage_cost(prm, v0, T0, 5);
      if (head >= best) continue;
      double tail = 1e300;
      const double lo = std::max(15.0, T0 - 100.0), hi = std::min(300.0, T0 + 100.0);
      for (double T1 = lo; T1 <= hi + 1e-9; T1 += 0.1) {
        const VehicleState x2 = step_dynamics(prm, x1, {T1, 0.0, 5});
        if (std::abs(x2.v - x1.v) > prm.accel_max || !box.contains(x2.v)) continue;
        tail = std::min(tail, w.beta * track(x2.p, x2.v, 2) + fuel_stage_cost(prm, x1.v, T1, 5));
      }
      if (head + tail < best) {
        best = head + tail;
        arg = {T0, F0};
      }
    }
  }
  return arg;
}

}  // namespace

TEST(NlpSolver, MatchesGridSearchOnTwoStepProblem) {
  VehicleParams prm;
  OcpWeights w;
  // A strong velocity weight makes the optimum an interior torque.
  w.beta = 100.0;
  const auto d = cruise(0, 20, 2);
  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, 20}, constant(5, 2), d, w));
  ASSERT_TRUE(s.solved()) << s.message;
  const ContinuousInput g = grid_first_input(prm, w, d);
  EXPECT_NEAR(s.inputs[0].T, g.T, 0.5);
  EXPECT_NEAR(s.inputs[0].F, g.F, 1.0);
}

TEST(NlpSolver, EquilibriumInstance) {
  // With a constant fuel rate, holding the current velocity is optimal; the
  // objective is N * c1 * dt and the closed-form point is stationary.
  VehicleParams prm;
  prm.fuel = {0.05, 0.0, 0.0};
  const int N = 5;
  const FixedGearOcp ocp = build_single_vehicle_ocp(prm, {0, 20}, constant(5, N), cruise(0, 20, N), {});
  const OcpSolution s = solve(ocp);
  ASSERT_TRUE(s.solved());
  EXPECT_NEAR(s.objective, N * 0.05, 1e-4);

  const double Teq = (prm.drag * 400 + friction_force(prm)) / prm.traction_gain(5);
  OcpTrajectory eq;
  eq.states = cruise(0, 20, N);
  eq.inputs.assign(N, {Teq, 0.0});
  eq.slack_ahead.assign(N + 1, 0.0);
  eq.slack_behind.assign(N + 1, 0.0);
  const OcpTranscription tr(ocp);
  nlp::PrimalDual zero;
  zero.y = Eigen::VectorXd::Zero(tr.num_equalities());
  zero.w = Eigen::VectorXd::Zero(tr.inequality_matrix().rows());
  zero.z_lower = Eigen::VectorXd::Zero(tr.num_variables());
  zero.z_upper = Eigen::VectorXd::Zero(tr.num_variables());
  EXPECT_LE(kkt_residual(ocp, eq, zero), 1e-8);
  EXPECT_NEAR(evaluate_objective(ocp, eq), N * 0.05, 1e-12);
}

TEST(NlpSolver, GearSkipReportedInfeasible) {
  VehicleParams prm;
  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, 10}, GearSchedule{2, 4, 4}, cruise(0, 10, 3), {}));
  EXPECT_FALSE(s.solved());
  EXPECT_NE(s.message.find("skips"), std::string::npos);
}

TEST(NlpSolver, KktResidualWithinToleranceAndGrowsUnderPerturbation) {
  VehicleParams prm;
  const FixedGearOcp ocp = build_single_vehicle_ocp(prm, {0, 15}, constant(4, 6), cruise(0, 18, 6), {});
  const OcpSolution s = solve(ocp);
  ASSERT_TRUE(s.solved());
  EXPECT_LE(s.kkt_residual, 1e-6);
  EXPECT_LE(kkt_residual(ocp, s), 1e-6);
  OcpTrajectory bent = s;
  bent.inputs[2].T += 1e-2;
  EXPECT_GT(kkt_residual(ocp, bent, s.multipliers), kkt_residual(ocp, s));
}

TEST(NlpSolver, MultiStartNeverWorseAndDeterministic) {
  VehicleParams prm;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uv(5, 28);
  SolverConfig cfg;
  cfg.seed = 17;
  for (int i = 0; i < 50; ++i) {
    const VehicleState x{0, uv(rng)};
    const FixedGearOcp ocp = build_single_vehicle_ocp(prm, x, constant_schedule(prm, x, GearSelector::mid, 5),
                                                      cruise(0, uv(rng), 5), {});
    const OcpSolution one = multi_start_solve(ocp, 1, std::nullopt, cfg);
    const OcpSolution four = multi_start_solve(ocp, 4, std::nullopt, cfg);
    ASSERT_TRUE(one.solved());
    EXPECT_LE(four.objective, one.objective);
    if (i < 5) {
      const OcpSolution again = multi_start_solve(ocp, 4, std::nullopt, cfg);
      EXPECT_EQ(again.objective, four.objective);
      EXPECT_EQ(again.inputs, four.inputs);
    }
  }
}

TEST(NlpSolver, SingleStartEqualsWarmSolve) {
  VehicleParams prm;
  const FixedGearOcp ocp = build_single_vehicle_ocp(prm, {0, 20}, constant(5, 6), cruise(0, 21, 6), {});
  const OcpTrajectory warm = guided_rollout(ocp, std::vector<double>(7, 21.0));
  const OcpSolution a = multi_start_solve(ocp, 1, warm);
  const OcpSolution b = solve(ocp, warm);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(a.inputs, b.inputs);
}

TEST(NlpSolver, NeverWorseThanInitialRollout) {
  VehicleParams prm;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uv(5, 28);
  std::uniform_int_distribution<int> un(2, 8);
  for (int i = 0; i < 100; ++i) {
    const VehicleState x{0, uv(rng)};
    const int N = un(rng);
    const FixedGearOcp ocp = build_single_vehicle_ocp(prm, x, constant_schedule(prm, x, GearSelector::high, N),
                                                      cruise(1, uv(rng), N), {});
    const OcpSolution s = solve(ocp);
    ASSERT_TRUE(s.solved()) << s.message;
    const OcpTrajectory g = default_guess(ocp);
    ASSERT_LE(constraint_violation(ocp, g), 1e-9);
    EXPECT_LE(s.objective, evaluate_objective(ocp, g) + 1e-9);
  }
}

TEST(NlpSolver, QuadraticSanityAgainstLeastSquares) {
  // Without drag, friction and fuel the dynamics are linear and the velocity
  // profile is a free linear least-squares variable.
  VehicleParams prm;
  prm.drag = 0.0;
  prm.rolling = 0.0;
  prm.fuel = {0, 0, 0};
  prm.finalize();
  const int N = 6;
  const double v0 = 20.0;
  DesiredTrajectory d;
  for (int t = 0; t <= N; ++t) d.push_back({20.0 * t + 0.3 * std::sin(t), 20.0 + 0.1 * std::cos(1.3 * t)});
  OcpWeights w;

  // Unknowns v1..vN; p_t = sum_{s<t} v_s.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * N, N);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2 * N);
  const double sp = std::sqrt(w.Q(0, 0)), sv = std::sqrt(w.Q(1, 1));
  for (int t = 1; t <= N; ++t) {
    const int r = 2 * (t - 1);
    double known = v0;  // v0 contributes to every p_t
    for (int s = 1; s < t; ++s) A(r, s - 1) = sp;
    b[r] = sp * (d[static_cast<std::size_t>(t)].p - known);
    A(r + 1, t - 1) = sv;
    b[r + 1] = sv * d[static_cast<std::size_t>(t)].v;
  }
  const Eigen::VectorXd v = A.colPivHouseholderQr().solve(b);
  // The reference is gentle enough that no input bound or rate limit is
  // active at the least-squares optimum.
  const double k = prm.traction_gain(5);
  std::vector<double> T;
  for (int t = 0; t < N; ++t) {
    const double W = prm.mass * (v[t] - (t == 0 ? v0 : v[t - 1])) / prm.dt;
    T.push_back(std::max(prm.torque_min, W / k));
    ASSERT_GT(W, prm.torque_min * k - prm.brake_max);
    ASSERT_LT(W, prm.torque_max * k);
  }
  for (int t = 1; t < N; ++t) ASSERT_LT(std::abs(T[t] - T[t - 1]), prm.torque_rate_max * prm.dt);

  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, v0}, constant(5, N), d, w));
  ASSERT_TRUE(s.solved()) << s.message;
  for (int t = 1; t <= N; ++t) EXPECT_NEAR(s.states[static_cast<std::size_t>(t)].v, v[t - 1], 1e-6) << t;
}

TEST(NlpSolver, ConfigValidation) {
  SolverConfig c;
  c.kkt_tolerance = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  SolverConfig m;
  m.multi_start = 0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  VehicleParams prm;
  const FixedGearOcp ocp = build_single_vehicle_ocp(prm, {0, 20}, constant(5, 3), cruise(0, 20, 3), {});
  EXPECT_THROW((void)multi_start_solve(ocp, 0), std::invalid_argument);
}

TEST(NlpSolver, IterationTrace) {
  VehicleParams prm;
  std::ostringstream os;
  SolverConfig c;
  c.trace = &os;
  const OcpSolution s = solve(build_single_vehicle_ocp(prm, {0, 20}, constant(5, 3), cruise(0, 20, 3), {}), c);
  ASSERT_TRUE(s.solved());
  EXPECT_NE(os.str().find("objective"), std::string::npos);
}
