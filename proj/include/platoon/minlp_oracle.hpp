#pragma once

// Exact mixed-integer baseline: depth-first branch-and-bound over gear
// sequences with a fixed-gear NLP solved at every leaf.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/nlp_solver.hpp"
#include "platoon/ocp.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

/// How the first gear of the window relates to the previously applied gear.
///   fixed:    j(0) = j_prev
///   adjacent: |j(0) - j_prev| <= 1
///   free:     any gear
enum class FirstGearRule { fixed, adjacent, free };

inline const char* to_string(FirstGearRule r) {
  switch (r) {
    case FirstGearRule::fixed: return "fixed";
    case FirstGearRule::adjacent: return "adjacent";
    case FirstGearRule::free: return "free";
  }
  return "?";
}

[[nodiscard]] inline Interval reachable_velocity_interval(const VehicleParams& prm, double v0, int depth) {
  const double dv = depth * prm.accel_max * prm.dt;
  return {std::max(prm.v_min(), v0 - dv), std::min(prm.v_max(), v0 + dv)};
}

struct BnbNode {
  std::vector<Gear> gears;  // partial sequence j(0..depth)
  int depth = 0;
  Interval reachable;       // velocities admissible at the start of step `depth`
  double lower_bound = 0.0;
};

struct OracleProblem {
  VehicleParams params;
  VehicleState x0;
  DesiredTrajectory desired;  // N+1
  NeighborPlans neighbors;
  OcpWeights weights;
  std::optional<double> previous_torque;
  Gear j_prev = 1;

  [[nodiscard]] int N() const { return static_cast<int>(desired.size()) - 1; }
};

struct OracleOptions {
  FirstGearRule first_gear = FirstGearRule::fixed;
  bool prune_infeasible = true;
  bool prune_bound = true;
  int multi_start = 1;
  int max_horizon = 8;
  double max_wall_seconds = 0.0;  // 0 disables the budget
  SolverConfig solver;
};

struct OracleStats {
  long nodes_expanded = 0;
  long leaves_solved = 0;
  long leaves_feasible = 0;
  long pruned_infeasible = 0;
  long pruned_bound = 0;
  double wall_seconds = 0.0;
  bool timed_out = false;
};

struct OracleResult {
  bool feasible = false;
  GearSchedule schedule;
  OcpSolution solution;
  OracleStats stats;

  [[nodiscard]] double cost() const { return feasible ? solution.objective : kInfCost; }
};

namespace detail {

/// Admissible bound from fuel alone: every step burns at least the fuel of the
/// lowest engine speed reachable in its gear at minimum torque; the unassigned
/// tail is bounded with the engine-speed floor. Tracking and slack terms are
/// nonnegative and dropped.
inline double fuel_lower_bound(const OracleProblem& op, const std::vector<Interval>& reach,
                               const std::vector<Gear>& gears) {
  const VehicleParams& prm = op.params;
  const auto& c = prm.fuel;
  if (c[0] < 0 || c[1] < 0 || c[2] < 0) return -kInfCost;
  const double tmin0 = op.previous_torque ? std::max(prm.torque_min, *op.previous_torque - prm.torque_rate_max * prm.dt)
                                          : prm.torque_min;
  double lb = 0.0;
  for (std::size_t t = 0; t < gears.size(); ++t) {
    const double w = engine_speed(prm, std::max(reach[t].lo, prm.v_min()), gears[t]);
    const double T = t == 0 ? tmin0 : prm.torque_min;
    lb += prm.dt * (c[0] + c[1] * w + c[2] * w * T);
  }
  const auto rest = static_cast<double>(op.N() - static_cast<int>(gears.size()));
  lb += rest * prm.dt * (c[0] + (c[1] + c[2] * prm.torque_min) * prm.engine_speed_min);
  return lb;
}

}  // namespace detail

/// True when the node cannot lead to a feasible or improving leaf.
[[nodiscard]] inline bool prune(const VehicleParams& prm, const BnbNode& node, double incumbent) {
  const Interval w = gear_velocity_range(prm, node.gears.back());
  if (node.reachable.empty() || w.intersect(node.reachable).empty()) return true;
  return node.lower_bound >= incumbent;
}

class BranchAndBound {
 public:
  BranchAndBound(const OracleProblem& op, const OracleOptions& opt) : op_(op), opt_(opt) {}

  /// `previous_plan`, when given, is shifted by one step to warm-start every leaf.
  OracleResult run(const std::optional<OcpTrajectory>& previous_plan = std::nullopt) {
    const int N = op_.N();
    if (N < 2) throw std::invalid_argument("oracle horizon must be at least 2");
    if (N > opt_.max_horizon)
      throw std::invalid_argument("oracle horizon " + std::to_string(N) + " exceeds the enumeration guard " +
                                  std::to_string(opt_.max_horizon));
    warm_ = previous_plan;
    start_ = std::chrono::steady_clock::now();
    res_ = {};
    std::vector<Gear> roots;
    const int jm = op_.params.j_max();
    switch (opt_.first_gear) {
      case FirstGearRule::fixed: roots = {op_.j_prev}; break;
      case FirstGearRule::adjacent:
        for (Gear g : {op_.j_prev, op_.j_prev - 1, op_.j_prev + 1})
          if (g >= 1 && g <= jm) roots.push_back(g);
        break;
      case FirstGearRule::free:
        for (Gear g = 1; g <= jm; ++g) roots.push_back(g);
        break;
    }
    for (Gear g : roots) {
      BnbNode root;
      root.gears = {g};
      root.depth = 0;
      root.reachable = gear_allows(op_.params, op_.x0.v, g) ? Interval{op_.x0.v, op_.x0.v} : Interval{1.0, 0.0};
      std::vector<Interval> reach{root.reachable};
      expand(root, reach);
      if (res_.stats.timed_out) break;
    }
    res_.stats.wall_seconds = elapsed();
    return res_;
  }

 private:
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  double incumbent() const { return res_.feasible ? res_.solution.objective : kInfCost; }

  void expand(BnbNode& node, std::vector<Interval>& reach) {
    if (opt_.max_wall_seconds > 0 && elapsed() > opt_.max_wall_seconds) {
      res_.stats.timed_out = true;
      return;
    }
    ++res_.stats.nodes_expanded;
    node.lower_bound = opt_.prune_bound ? detail::fuel_lower_bound(op_, reach, node.gears) : -kInfCost;
    if (opt_.prune_infeasible || opt_.prune_bound) {
      const bool infeasible = node.reachable.empty();
      if (opt_.prune_infeasible && infeasible) {
        ++res_.stats.pruned_infeasible;
        return;
      }
      if (opt_.prune_bound && node.lower_bound >= incumbent()) {
        ++res_.stats.pruned_bound;
        return;
      }
    }
    const int N = op_.N();
    if (static_cast<int>(node.gears.size()) == N) {
      solve_leaf(node.gears);
      return;
    }
    const Gear last = node.gears.back();
    const double dv = op_.params.accel_max * op_.params.dt;
    for (Gear g : {last, last - 1, last + 1}) {
      if (g < 1 || g > op_.params.j_max()) continue;
      BnbNode child;
      child.gears = node.gears;
      child.gears.push_back(g);
      child.depth = node.depth + 1;
      // v(depth+1) must respect the engine speed of the step just finished and
      // of the step about to start.
      Interval r{node.reachable.lo - dv, node.reachable.hi + dv};
      r = r.intersect({op_.params.v_min(), op_.params.v_max()});
      r = r.intersect(gear_velocity_range(op_.params, last));
      r = r.intersect(gear_velocity_range(op_.params, g));
      child.reachable = r;
      reach.push_back(r);
      expand(child, reach);
      reach.pop_back();
      if (res_.stats.timed_out) return;
    }
  }

  void solve_leaf(const std::vector<Gear>& gears) {
    ++res_.stats.leaves_solved;
    GearSchedule s{gears};
    const FixedGearOcp ocp =
        build_fixed_gear_ocp(op_.params, op_.x0, s, op_.desired, op_.neighbors, op_.weights, op_.previous_torque);
    if (ocp.infeasible_by_construction()) return;
    std::optional<OcpTrajectory> warm;
    if (warm_ && warm_->inputs.size() == static_cast<std::size_t>(ocp.N)) warm = shifted_guess(ocp, *warm_);
    const OcpSolution sol = multi_start_solve(ocp, opt_.multi_start, warm, opt_.solver);
    if (!sol.solved()) return;
    ++res_.stats.leaves_feasible;
    const bool better = !res_.feasible || sol.objective < res_.solution.objective ||
                        (sol.objective == res_.solution.objective && s < res_.schedule);
    if (better) {
      res_.feasible = true;
      res_.schedule = s;
      res_.solution = sol;
    }
  }

  const OracleProblem& op_;
  OracleOptions opt_;
  std::optional<OcpTrajectory> warm_;
  std::chrono::steady_clock::time_point start_;
  OracleResult res_;
};

[[nodiscard]] inline OracleResult solve_minlp(const OracleProblem& op, const OracleOptions& opt = {},
                                              const std::optional<OcpTrajectory>& previous_plan = std::nullopt) {
  BranchAndBound bnb(op, opt);
  OracleResult r = bnb.run(previous_plan);
  if (!r.feasible) {
    r.solution.status = OcpStatus::infeasible;
    r.solution.objective = kInfCost;
    r.solution.message = "no feasible gear sequence";
  }
  return r;
}

/// Number of gear sequences of length N with |dj| <= 1 and entries in
/// [1, j_max], rooted at the given first gears. Counts paths directly.
[[nodiscard]] inline long count_shift_sequences(int j_max, int N, const std::vector<Gear>& roots) {
  std::vector<long> ways(static_cast<std::size_t>(j_max + 2), 0);
  for (Gear r : roots) ways[static_cast<std::size_t>(r)] += 1;
  for (int step = 1; step < N; ++step) {
    std::vector<long> next(ways.size(), 0);
    for (int g = 1; g <= j_max; ++g)
      for (int d = -1; d <= 1; ++d)
        if (g + d >= 1 && g + d <= j_max) next[static_cast<std::size_t>(g + d)] += ways[static_cast<std::size_t>(g)];
    ways = next;
  }
  long total = 0;
  for (int g = 1; g <= j_max; ++g) total += ways[static_cast<std::size_t>(g)];
  return total;
}

}  // namespace platoon
