#pragma once

// Local solution of fixed-gear OCPs with multi-start.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "platoon/nlp/interior_point.hpp"
#include "platoon/ocp.hpp"

namespace platoon {

struct SolverConfig {
  int max_iterations = 200;
  double kkt_tolerance = 1e-6;
  double constraint_tolerance = 1e-6;
  double internal_tolerance = 1e-9;
  int multi_start = 1;
  std::uint64_t seed = 0;
  double perturbation = 0.2;  // fraction of the velocity range for extra starts
  std::ostream* trace = nullptr;

  void validate() const {
    if (!(kkt_tolerance > 0 && constraint_tolerance > 0 && internal_tolerance > 0))
      throw std::invalid_argument("solver tolerances must be positive");
    if (multi_start < 1) throw std::invalid_argument("multi-start count must be at least 1");
    if (max_iterations < 1) throw std::invalid_argument("iteration limit must be positive");
  }
};

/// Infinity norm of the Lagrangian gradient, complementarity products and
/// constraint violation, at the solution's stored multipliers.
[[nodiscard]] inline double kkt_residual(const FixedGearOcp& ocp, const OcpTrajectory& traj,
                                         const nlp::PrimalDual& multipliers) {
  const OcpTranscription tr(ocp);
  nlp::PrimalDual pd = multipliers;
  pd.x = tr.pack(traj);
  return nlp::kkt_error(tr, pd).max();
}

[[nodiscard]] inline double kkt_residual(const FixedGearOcp& ocp, const OcpSolution& sol) {
  return kkt_residual(ocp, sol, sol.multipliers);
}

[[nodiscard]] inline OcpSolution infeasible_solution(const FixedGearOcp& ocp, std::string why) {
  OcpSolution s;
  s.status = OcpStatus::infeasible;
  s.schedule = ocp.schedule;
  s.message = std::move(why);
  return s;
}

[[nodiscard]] inline OcpSolution solve(const FixedGearOcp& ocp, const std::optional<OcpTrajectory>& guess,
                                       const SolverConfig& cfg = {}) {
  cfg.validate();
  if (ocp.infeasible_by_construction()) return infeasible_solution(ocp, ocp.infeasible_reason);
  const OcpTranscription tr(ocp);
  const OcpTrajectory start = guess ? *guess : default_guess(ocp);

  nlp::IpmOptions opt;
  opt.max_iterations = cfg.max_iterations;
  opt.tolerance = cfg.internal_tolerance;
  opt.acceptable_tolerance = std::min(cfg.kkt_tolerance, cfg.constraint_tolerance);
  opt.feasibility_tolerance = cfg.constraint_tolerance;
  opt.trace = cfg.trace;
  const nlp::IpmResult r = nlp::solve_interior_point(tr, tr.pack(start), opt);

  OcpSolution s;
  s.schedule = ocp.schedule;
  s.iterations = r.iterations;
  s.multipliers = r.point;
  static_cast<OcpTrajectory&>(s) = tr.unpack(r.point.x);
  if (r.status != nlp::IpmStatus::converged) {
    s.status = OcpStatus::infeasible;
    s.message = std::string("interior point: ") + nlp::to_string(r.status);
    return s;
  }
  s.kkt_residual = nlp::kkt_error(tr, r.point).max();
  s.max_violation = constraint_violation(ocp, s);
  if (s.kkt_residual > cfg.kkt_tolerance || s.max_violation > cfg.constraint_tolerance) {
    s.status = OcpStatus::infeasible;
    s.message = "converged point failed the accuracy check";
    return s;
  }
  s.status = OcpStatus::solved;
  s.objective = evaluate_objective(ocp, s);
  return s;
}

[[nodiscard]] inline OcpSolution solve(const FixedGearOcp& ocp, const SolverConfig& cfg = {}) {
  return solve(ocp, std::nullopt, cfg);
}

/// Initial guesses for multi-start: the warm start (or the default rollout),
/// then rollouts towards uniformly perturbed velocity profiles.
[[nodiscard]] inline std::vector<OcpTrajectory> multi_start_guesses(const FixedGearOcp& ocp, int k,
                                                                    const std::optional<OcpTrajectory>& warm,
                                                                    std::uint64_t seed, double perturbation) {
  std::vector<OcpTrajectory> out;
  out.push_back(warm ? *warm : default_guess(ocp));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-perturbation, perturbation);
  const double range = ocp.params.v_max() - ocp.params.v_min();
  const OcpTrajectory base = default_guess(ocp);
  for (int i = 1; i < k; ++i) {
    std::vector<double> target(static_cast<std::size_t>(ocp.N + 1));
    for (int t = 0; t <= ocp.N; ++t) target[static_cast<std::size_t>(t)] = base.states[static_cast<std::size_t>(t)].v + u(rng) * range;
    out.push_back(guided_rollout(ocp, target));
  }
  return out;
}

/// Best solved result over k starts; first start wins ties.
[[nodiscard]] inline OcpSolution multi_start_solve(const FixedGearOcp& ocp, int k,
                                                   const std::optional<OcpTrajectory>& warm = std::nullopt,
                                                   const SolverConfig& cfg = {}) {
  if (k < 1) throw std::invalid_argument("multi-start count must be at least 1");
  if (ocp.infeasible_by_construction()) return infeasible_solution(ocp, ocp.infeasible_reason);
  OcpSolution best;
  bool have = false;
  std::string last_message;
  for (const OcpTrajectory& g : multi_start_guesses(ocp, k, warm, cfg.seed, cfg.perturbation)) {
    OcpSolution s = solve(ocp, g, cfg);
    if (!s.solved()) {
      last_message = s.message;
      continue;
    }
    if (!have || s.objective < best.objective) {
      best = std::move(s);
      have = true;
    }
  }
  if (!have) return infeasible_solution(ocp, "all starts failed; last: " + last_message);
  return best;
}

/// Builds and solves the fixed-gear OCP for one schedule, warm-started from the
/// shifted previous plan when one of matching length is given.
[[nodiscard]] inline OcpSolution solve_schedule(const VehicleParams& prm, const VehicleState& x0,
                                                const GearSchedule& schedule, const DesiredTrajectory& desired,
                                                const NeighborPlans& neighbors, const OcpWeights& weights,
                                                std::optional<double> previous_torque,
                                                const OcpTrajectory* previous_plan, int multi_start = 1,
                                                const SolverConfig& cfg = {}) {
  const FixedGearOcp ocp = build_fixed_gear_ocp(prm, x0, schedule, desired, neighbors, weights, previous_torque);
  std::optional<OcpTrajectory> warm;
  if (!ocp.infeasible_by_construction() && previous_plan &&
      previous_plan->inputs.size() == static_cast<std::size_t>(ocp.N))
    warm = shifted_guess(ocp, *previous_plan);
  return multi_start_solve(ocp, multi_start, warm, cfg);
}

}  // namespace platoon
