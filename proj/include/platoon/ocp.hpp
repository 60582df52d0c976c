#pragma once

// Fixed-gear optimal control problems over an MPC window and their NLP
// transcription.
//
// Decision vector (positions are stored relative to the initial position):
//   [p(0..N), v(0..N), T(0..N-1), F(0..N-1), s_ahead(0..N)?, s_behind(0..N)?]

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "platoon/nlp/problem.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

inline constexpr double kInfCost = std::numeric_limits<double>::infinity();

struct ContinuousInput {
  double T = 0.0;
  double F = 0.0;
  bool operator==(const ContinuousInput&) const = default;
};

using DesiredTrajectory = std::vector<VehicleState>;

struct OcpWeights {
  double beta = 0.01;
  Eigen::Matrix2d Q = Eigen::Vector2d(1.0, 0.1).asDiagonal();
  double beta_pen = 1000.0;
  double safety_distance = 10.0;
};

/// Predicted positions of the vehicles ahead and behind, N+1 entries each.
struct NeighborPlans {
  std::optional<std::vector<double>> ahead;
  std::optional<std::vector<double>> behind;
};

struct FixedGearOcp {
  VehicleParams params;
  int N = 0;
  VehicleState x0;
  GearSchedule schedule;
  DesiredTrajectory desired;
  NeighborPlans neighbors;
  OcpWeights weights;
  std::optional<double> previous_torque;
  std::optional<Gear> previous_gear;
  bool strict_first_gear = false;

  // Filled by the builder.
  std::string infeasible_reason;
  std::vector<Interval> velocity_box;   // v(tau), tau = 0..N
  std::vector<Interval> reachable;      // exact reachable velocity sets
  Interval first_torque_box;

  [[nodiscard]] bool infeasible_by_construction() const { return !infeasible_reason.empty(); }
  [[nodiscard]] bool has_ahead() const { return neighbors.ahead.has_value(); }
  [[nodiscard]] bool has_behind() const { return neighbors.behind.has_value(); }
  [[nodiscard]] int num_state_vars() const { return 2 * (N + 1); }
  [[nodiscard]] int num_input_vars() const { return 2 * N; }
  [[nodiscard]] int num_slack_vars() const { return (has_ahead() ? N + 1 : 0) + (has_behind() ? N + 1 : 0); }
  [[nodiscard]] int num_variables() const { return num_state_vars() + num_input_vars() + num_slack_vars(); }
};

/// Single-vehicle problems are fixed-gear problems without neighbors.
using SingleVehicleOcp = FixedGearOcp;

/// States, inputs and slacks over one window. Absent slacks are stored as zeros.
struct OcpTrajectory {
  std::vector<VehicleState> states;     // N+1
  std::vector<ContinuousInput> inputs;  // N
  std::vector<double> slack_ahead;      // N+1
  std::vector<double> slack_behind;     // N+1
};

enum class OcpStatus { solved, infeasible };

struct OcpSolution : OcpTrajectory {
  OcpStatus status = OcpStatus::infeasible;
  double objective = kInfCost;
  double kkt_residual = kInfCost;
  double max_violation = kInfCost;
  int iterations = 0;
  std::string message;
  GearSchedule schedule;
  nlp::PrimalDual multipliers;  // in transcription units

  [[nodiscard]] bool solved() const { return status == OcpStatus::solved; }
  [[nodiscard]] double slack_sum() const {
    double s = 0.0;
    for (double v : slack_ahead) s += v;
    for (double v : slack_behind) s += v;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Building

namespace detail {

inline void check_lengths(const FixedGearOcp& ocp) {
  const auto n1 = static_cast<std::size_t>(ocp.N + 1);
  if (ocp.N < 2) throw std::invalid_argument("OCP horizon must be at least 2");
  if (ocp.schedule.size() != ocp.N) throw std::invalid_argument("gear schedule length must equal the horizon");
  if (ocp.desired.size() != n1) throw std::invalid_argument("desired trajectory must have N+1 entries");
  if (ocp.neighbors.ahead && ocp.neighbors.ahead->size() != n1)
    throw std::invalid_argument("position plan of the vehicle ahead must have N+1 entries");
  if (ocp.neighbors.behind && ocp.neighbors.behind->size() != n1)
    throw std::invalid_argument("position plan of the vehicle behind must have N+1 entries");
}

/// Velocity boxes from the engine-speed conditions at both ends of every step,
/// followed by forward propagation of the acceleration limit. A chain of
/// interval constraints is feasible iff every forward reachable set is nonempty.
inline void analyse_structure(FixedGearOcp& ocp) {
  const VehicleParams& prm = ocp.params;
  const auto& j = ocp.schedule.gears;
  ocp.infeasible_reason.clear();
  ocp.velocity_box.assign(static_cast<std::size_t>(ocp.N + 1), Interval{prm.v_min(), prm.v_max()});
  ocp.reachable.assign(static_cast<std::size_t>(ocp.N + 1), Interval{1.0, 0.0});

  if (!ocp.schedule.in_range(prm.j_max())) {
    ocp.infeasible_reason = "gear index out of range in " + ocp.schedule.str();
    return;
  }
  if (!ocp.schedule.respects_shift_rate()) {
    ocp.infeasible_reason = "gear schedule " + ocp.schedule.str() + " skips a gear";
    return;
  }
  if (ocp.strict_first_gear && ocp.previous_gear && std::abs(j.front() - *ocp.previous_gear) > 1) {
    ocp.infeasible_reason = "first gear too far from the applied gear";
    return;
  }
  const double tol = kVelocityTol * std::max(1.0, std::abs(ocp.x0.v));
  for (int t = 1; t <= ocp.N; ++t) {
    Interval box = ocp.velocity_box[static_cast<std::size_t>(t)];
    box = box.intersect(gear_velocity_range(prm, j[static_cast<std::size_t>(t - 1)]));
    if (t < ocp.N) box = box.intersect(gear_velocity_range(prm, j[static_cast<std::size_t>(t)]));
    ocp.velocity_box[static_cast<std::size_t>(t)] = box;
  }
  ocp.velocity_box[0] = {ocp.x0.v, ocp.x0.v};
  if (!gear_velocity_range(prm, j.front()).contains(ocp.x0.v, tol)) {
    ocp.infeasible_reason = "initial velocity outside the engine-speed range of gear " + std::to_string(j.front());
    return;
  }
  const double dv = prm.accel_max * prm.dt;
  Interval r{ocp.x0.v, ocp.x0.v};
  ocp.reachable[0] = r;
  for (int t = 1; t <= ocp.N; ++t) {
    r = Interval{r.lo - dv, r.hi + dv}.intersect(ocp.velocity_box[static_cast<std::size_t>(t)]);
    if (r.hi < r.lo - tol) {
      ocp.infeasible_reason = "engine-speed range unreachable at step " + std::to_string(t);
      return;
    }
    r.hi = std::max(r.hi, r.lo);
    ocp.reachable[static_cast<std::size_t>(t)] = r;
  }
  ocp.first_torque_box = {prm.torque_min, prm.torque_max};
  if (ocp.previous_torque) {
    const double dT = prm.torque_rate_max * prm.dt;
    ocp.first_torque_box = ocp.first_torque_box.intersect({*ocp.previous_torque - dT, *ocp.previous_torque + dT});
    if (ocp.first_torque_box.empty()) ocp.infeasible_reason = "previous torque incompatible with torque bounds";
  }
}

}  // namespace detail

[[nodiscard]] inline FixedGearOcp build_fixed_gear_ocp(const VehicleParams& prm, const VehicleState& x0,
                                                       const GearSchedule& schedule, const DesiredTrajectory& desired,
                                                       const NeighborPlans& neighbors, const OcpWeights& weights,
                                                       std::optional<double> previous_torque = std::nullopt) {
  FixedGearOcp ocp;
  ocp.params = prm;
  ocp.N = schedule.size();
  ocp.x0 = x0;
  ocp.schedule = schedule;
  ocp.desired = desired;
  ocp.neighbors = neighbors;
  ocp.weights = weights;
  ocp.previous_torque = previous_torque;
  detail::check_lengths(ocp);
  detail::analyse_structure(ocp);
  return ocp;
}

[[nodiscard]] inline SingleVehicleOcp build_single_vehicle_ocp(const VehicleParams& prm, const VehicleState& x0,
                                                               const GearSchedule& schedule,
                                                               const DesiredTrajectory& reference,
                                                               const OcpWeights& weights,
                                                               std::optional<double> previous_torque = std::nullopt) {
  return build_fixed_gear_ocp(prm, x0, schedule, reference, {}, weights, previous_torque);
}

/// Re-runs the structural analysis after fields were edited by hand.
inline void refresh(FixedGearOcp& ocp) {
  detail::check_lengths(ocp);
  detail::analyse_structure(ocp);
}

// ---------------------------------------------------------------------------
// Objective and constraint evaluation on plain trajectories

[[nodiscard]] inline double evaluate_objective(const FixedGearOcp& ocp, const OcpTrajectory& c) {
  const auto n1 = static_cast<std::size_t>(ocp.N + 1);
  if (c.states.size() != n1 || c.inputs.size() != n1 - 1)
    throw std::invalid_argument("candidate trajectory dimensions do not match the OCP");
  double track = 0.0;
  for (std::size_t t = 0; t < n1; ++t) track += tracking_stage_cost(c.states[t], ocp.desired[t], ocp.weights.Q);
  double fuel = 0.0;
  for (std::size_t t = 0; t + 1 < n1; ++t)
    fuel += fuel_stage_cost(ocp.params, c.states[t].v, c.inputs[t].T, ocp.schedule[static_cast<int>(t)]);
  double slack = 0.0;
  if (ocp.has_ahead())
    for (double s : c.slack_ahead) slack += s;
  if (ocp.has_behind())
    for (double s : c.slack_behind) slack += s;
  return ocp.weights.beta * track + fuel + ocp.weights.beta_pen * slack;
}

/// Largest violation of any hard constraint (slack-softened rows included with
/// their slacks).
[[nodiscard]] inline double constraint_violation(const FixedGearOcp& ocp, const OcpTrajectory& c) {
  const VehicleParams& prm = ocp.params;
  const int N = ocp.N;
  double viol = std::max(std::abs(c.states[0].p - ocp.x0.p), std::abs(c.states[0].v - ocp.x0.v));
  auto over = [&](double x, double lo, double hi) { viol = std::max({viol, lo - x, x - hi}); };
  for (int t = 0; t < N; ++t) {
    const auto& x = c.states[static_cast<std::size_t>(t)];
    const auto& u = c.inputs[static_cast<std::size_t>(t)];
    const Gear j = ocp.schedule[t];
    const VehicleState nx = step_dynamics(prm, x, {u.T, u.F, j});
    const auto& xn = c.states[static_cast<std::size_t>(t + 1)];
    viol = std::max({viol, std::abs(nx.p - xn.p), std::abs(nx.v - xn.v)});
    over(xn.v - x.v, -prm.accel_max * prm.dt, prm.accel_max * prm.dt);
    over(u.T, prm.torque_min, prm.torque_max);
    over(u.F, prm.brake_min, prm.brake_max);
    const Interval w = gear_velocity_range(prm, j);
    over(x.v, w.lo, w.hi);
    over(xn.v, w.lo, w.hi);
    if (t + 1 < N) {
      const double dT = c.inputs[static_cast<std::size_t>(t + 1)].T - u.T;
      over(dT, -prm.torque_rate_max * prm.dt, prm.torque_rate_max * prm.dt);
    }
  }
  if (ocp.previous_torque) over(c.inputs[0].T, ocp.first_torque_box.lo, ocp.first_torque_box.hi);
  const double d = ocp.weights.safety_distance;
  for (int t = 0; t <= N; ++t) {
    const double p = c.states[static_cast<std::size_t>(t)].p;
    if (ocp.has_ahead()) {
      const double s = c.slack_ahead[static_cast<std::size_t>(t)];
      viol = std::max({viol, -s, p - (*ocp.neighbors.ahead)[static_cast<std::size_t>(t)] + d - s});
    }
    if (ocp.has_behind()) {
      const double s = c.slack_behind[static_cast<std::size_t>(t)];
      viol = std::max({viol, -s, (*ocp.neighbors.behind)[static_cast<std::size_t>(t)] + d - p - s});
    }
  }
  return viol;
}

/// Dynamics-consistent rollout steering towards the given velocity profile
/// (N+1 entries, entry 0 ignored) while staying inside the reachable sets.
/// Slacks are set to the minimum the collision rows require.
[[nodiscard]] inline OcpTrajectory guided_rollout(const FixedGearOcp& ocp, const std::vector<double>& v_target) {
  const VehicleParams& prm = ocp.params;
  const int N = ocp.N;
  OcpTrajectory g;
  g.states.resize(static_cast<std::size_t>(N + 1));
  g.inputs.resize(static_cast<std::size_t>(N));
  g.states[0] = ocp.x0;
  const double Gf = friction_force(prm);
  double T_prev = ocp.previous_torque.value_or(kInfCost);
  for (int t = 0; t < N; ++t) {
    const auto& x = g.states[static_cast<std::size_t>(t)];
    const Gear j = std::clamp(ocp.schedule[t], 1, prm.j_max());
    double target = v_target[static_cast<std::size_t>(t + 1)];
    if (ocp.reachable.size() == static_cast<std::size_t>(N + 1)) {
      const Interval& r = ocp.reachable[static_cast<std::size_t>(t + 1)];
      if (!r.empty()) target = std::clamp(target, r.lo, r.hi);
    }
    const double dv = prm.accel_max * prm.dt;
    target = std::clamp(target, x.v - dv, x.v + dv);
    const double k = prm.traction_gain(j);
    const double W = prm.mass * (target - x.v) / prm.dt + prm.drag * x.v * x.v + Gf;
    double T = std::clamp(W / k, prm.torque_min, prm.torque_max);
    if (std::isfinite(T_prev)) {
      const double dT = prm.torque_rate_max * prm.dt;
      T = std::clamp(T, T_prev - dT, T_prev + dT);
    }
    const double F = std::clamp(T * k - W, prm.brake_min, prm.brake_max);
    g.inputs[static_cast<std::size_t>(t)] = {T, F};
    g.states[static_cast<std::size_t>(t + 1)] = step_dynamics(prm, x, {T, F, j});
    T_prev = T;
  }
  g.slack_ahead.assign(static_cast<std::size_t>(N + 1), 0.0);
  g.slack_behind.assign(static_cast<std::size_t>(N + 1), 0.0);
  const double d = ocp.weights.safety_distance;
  for (int t = 0; t <= N; ++t) {
    const double p = g.states[static_cast<std::size_t>(t)].p;
    if (ocp.has_ahead())
      g.slack_ahead[static_cast<std::size_t>(t)] =
          std::max(0.0, p - (*ocp.neighbors.ahead)[static_cast<std::size_t>(t)] + d);
    if (ocp.has_behind())
      g.slack_behind[static_cast<std::size_t>(t)] =
          std::max(0.0, (*ocp.neighbors.behind)[static_cast<std::size_t>(t)] + d - p);
  }
  return g;
}

/// Constant-velocity rollout at the initial speed, the default initial guess.
[[nodiscard]] inline OcpTrajectory default_guess(const FixedGearOcp& ocp) {
  return guided_rollout(ocp, std::vector<double>(static_cast<std::size_t>(ocp.N + 1), ocp.x0.v));
}

// ---------------------------------------------------------------------------
// Warm-start shifting

struct ShiftedSolution {
  std::vector<VehicleState> states;     // x(k), x*(2|k-1), ..., x*(N|k-1)
  std::vector<ContinuousInput> inputs;  // mu*(1|k-1), ..., mu*(N-1|k-1), mu*(N-1|k-1)
};

[[nodiscard]] inline ShiftedSolution shift_solution(const OcpTrajectory& prev, const VehicleState& measured) {
  const std::size_t N = prev.inputs.size();
  if (N < 1 || prev.states.size() != N + 1) throw std::invalid_argument("shift_solution: malformed trajectory");
  ShiftedSolution s;
  s.states.reserve(N);
  s.states.push_back(measured);
  for (std::size_t t = 2; t <= N; ++t) s.states.push_back(prev.states[t]);
  s.inputs.reserve(N);
  for (std::size_t t = 1; t < N; ++t) s.inputs.push_back(prev.inputs[t]);
  s.inputs.push_back(prev.inputs[N - 1]);
  return s;
}

[[nodiscard]] inline GearSchedule shift_gear_schedule(const GearSchedule& prev) {
  if (prev.gears.empty()) return prev;
  GearSchedule s;
  s.gears.assign(prev.gears.begin() + 1, prev.gears.end());
  s.gears.push_back(prev.gears.back());
  return s;
}

/// Shifted previous plan extended by one constant-input step, as a full
/// trajectory usable as an initial guess for the next window.
[[nodiscard]] inline OcpTrajectory shifted_guess(const FixedGearOcp& ocp, const OcpTrajectory& prev) {
  const ShiftedSolution sh = shift_solution(prev, ocp.x0);
  OcpTrajectory g;
  const auto N = static_cast<std::size_t>(ocp.N);
  g.states.resize(N + 1);
  g.inputs.resize(N);
  for (std::size_t t = 0; t < N; ++t) {
    g.states[t] = t < sh.states.size() ? sh.states[t] : sh.states.back();
    g.inputs[t] = t < sh.inputs.size() ? sh.inputs[t] : sh.inputs.back();
  }
  const Gear jl = std::clamp(ocp.schedule[ocp.N - 1], 1, ocp.params.j_max());
  g.states[N] = step_dynamics(ocp.params, g.states[N - 1], {g.inputs[N - 1].T, g.inputs[N - 1].F, jl});
  g.slack_ahead.assign(N + 1, 0.0);
  g.slack_behind.assign(N + 1, 0.0);
  const double d = ocp.weights.safety_distance;
  for (std::size_t t = 0; t <= N; ++t) {
    const double p = g.states[t].p;
    if (ocp.has_ahead()) g.slack_ahead[t] = std::max(0.0, p - (*ocp.neighbors.ahead)[t] + d);
    if (ocp.has_behind()) g.slack_behind[t] = std::max(0.0, (*ocp.neighbors.behind)[t] + d - p);
  }
  return g;
}

// ---------------------------------------------------------------------------
// NLP transcription

class OcpTranscription final : public nlp::SmoothProblem {
  using VectorXd = Eigen::VectorXd;
  using MatrixXd = Eigen::MatrixXd;

 public:
  explicit OcpTranscription(const FixedGearOcp& ocp) : ocp_(ocp) {
    if (ocp.infeasible_by_construction()) throw std::logic_error("transcribing a structurally infeasible OCP");
    const VehicleParams& prm = ocp.params;
    const int N = ocp.N;
    N_ = N;
    sa_ = ocp.has_ahead() ? 4 * N + 2 : -1;
    sb_ = ocp.has_behind() ? 4 * N + 2 + (ocp.has_ahead() ? N + 1 : 0) : -1;
    n_ = ocp.num_variables();
    p0_ = ocp.x0.p;
    k_.resize(static_cast<std::size_t>(N));
    s_.resize(static_cast<std::size_t>(N));
    for (int t = 0; t < N; ++t) {
      k_[static_cast<std::size_t>(t)] = prm.traction_gain(ocp.schedule[t]);
      s_[static_cast<std::size_t>(t)] = engine_speed_slope(prm, ocp.schedule[t]);
    }
    G_ = friction_force(prm);

    lo_ = VectorXd::Constant(n_, -nlp::kInf);
    hi_ = VectorXd::Constant(n_, nlp::kInf);
    for (int t = 1; t <= N; ++t) {
      lo_[iv(t)] = ocp.velocity_box[static_cast<std::size_t>(t)].lo;
      hi_[iv(t)] = ocp.velocity_box[static_cast<std::size_t>(t)].hi;
    }
    for (int t = 0; t < N; ++t) {
      lo_[iT(t)] = prm.torque_min;
      hi_[iT(t)] = prm.torque_max;
      lo_[iF(t)] = prm.brake_min;
      hi_[iF(t)] = prm.brake_max;
    }
    lo_[iT(0)] = ocp.first_torque_box.lo;
    hi_[iT(0)] = ocp.first_torque_box.hi;
    for (int t = 0; t <= N; ++t) {
      if (sa_ >= 0) lo_[sa_ + t] = 0.0;
      if (sb_ >= 0) lo_[sb_ + t] = 0.0;
    }

    const int rows = 2 * N + 2 * (N - 1) + (sa_ >= 0 ? N + 1 : 0) + (sb_ >= 0 ? N + 1 : 0);
    A_ = MatrixXd::Zero(rows, n_);
    b_ = VectorXd::Zero(rows);
    int r = 0;
    const double dv = prm.accel_max * prm.dt;
    for (int t = 0; t < N; ++t) {
      A_(r, iv(t + 1)) = 1.0;
      A_(r, iv(t)) = -1.0;
      b_[r++] = dv;
      A_(r, iv(t + 1)) = -1.0;
      A_(r, iv(t)) = 1.0;
      b_[r++] = dv;
    }
    const double dT = prm.torque_rate_max * prm.dt;
    for (int t = 0; t + 1 < N; ++t) {
      A_(r, iT(t + 1)) = 1.0;
      A_(r, iT(t)) = -1.0;
      b_[r++] = dT;
      A_(r, iT(t + 1)) = -1.0;
      A_(r, iT(t)) = 1.0;
      b_[r++] = dT;
    }
    const double d = ocp.weights.safety_distance;
    for (int t = 0; t <= N && sa_ >= 0; ++t) {
      A_(r, ip(t)) = 1.0;
      A_(r, sa_ + t) = -1.0;
      b_[r++] = (*ocp.neighbors.ahead)[static_cast<std::size_t>(t)] - p0_ - d;
    }
    for (int t = 0; t <= N && sb_ >= 0; ++t) {
      A_(r, ip(t)) = -1.0;
      A_(r, sb_ + t) = -1.0;
      b_[r++] = -((*ocp.neighbors.behind)[static_cast<std::size_t>(t)] - p0_ + d);
    }

    scale_ = VectorXd::Ones(n_);
    for (int t = 0; t <= N; ++t) {
      scale_[ip(t)] = std::max(10.0, prm.dt * N * std::max(1.0, ocp.x0.v));
      scale_[iv(t)] = 10.0;
    }
    for (int t = 0; t < N; ++t) {
      scale_[iT(t)] = 100.0;
      scale_[iF(t)] = 1000.0;
    }
  }

  [[nodiscard]] int N() const { return N_; }
  [[nodiscard]] int ip(int t) const { return t; }
  [[nodiscard]] int iv(int t) const { return N_ + 1 + t; }
  [[nodiscard]] int iT(int t) const { return 2 * (N_ + 1) + t; }
  [[nodiscard]] int iF(int t) const { return 2 * (N_ + 1) + N_ + t; }
  [[nodiscard]] int i_slack_ahead(int t) const { return sa_ < 0 ? -1 : sa_ + t; }
  [[nodiscard]] int i_slack_behind(int t) const { return sb_ < 0 ? -1 : sb_ + t; }

  // Rows: p(0), v(0), then per step the position and velocity dynamics.
  [[nodiscard]] int num_variables() const override { return n_; }
  [[nodiscard]] int num_equalities() const override { return 2 + 2 * N_; }
  [[nodiscard]] const VectorXd& lower_bounds() const override { return lo_; }
  [[nodiscard]] const VectorXd& upper_bounds() const override { return hi_; }
  [[nodiscard]] const MatrixXd& inequality_matrix() const override { return A_; }
  [[nodiscard]] const VectorXd& inequality_rhs() const override { return b_; }
  [[nodiscard]] VectorXd variable_scaling() const override { return scale_; }

  /// Only the velocity dynamics can be nonlinearly infeasible.
  [[nodiscard]] std::vector<int> elastic_rows() const override {
    std::vector<int> rows;
    for (int t = 0; t < N_; ++t) rows.push_back(3 + 2 * t);
    return rows;
  }

  [[nodiscard]] double objective(const VectorXd& z) const override {
    const OcpWeights& w = ocp_.weights;
    const auto& fuel = ocp_.params.fuel;
    const double dt = ocp_.params.dt;
    double f = 0.0;
    for (int t = 0; t <= N_; ++t) {
      const Eigen::Vector2d e(z[ip(t)] + p0_ - ocp_.desired[static_cast<std::size_t>(t)].p,
                              z[iv(t)] - ocp_.desired[static_cast<std::size_t>(t)].v);
      f += w.beta * e.dot(w.Q * e);
    }
    for (int t = 0; t < N_; ++t) {
      const double om = s_[static_cast<std::size_t>(t)] * z[iv(t)];
      f += dt * (fuel[0] + fuel[1] * om + fuel[2] * om * z[iT(t)]);
    }
    for (int t = 0; t <= N_; ++t) {
      if (sa_ >= 0) f += w.beta_pen * z[sa_ + t];
      if (sb_ >= 0) f += w.beta_pen * z[sb_ + t];
    }
    return f;
  }

  [[nodiscard]] VectorXd objective_gradient(const VectorXd& z) const override {
    const OcpWeights& w = ocp_.weights;
    const auto& fuel = ocp_.params.fuel;
    const double dt = ocp_.params.dt;
    VectorXd g = VectorXd::Zero(n_);
    const Eigen::Matrix2d Qs = w.Q + w.Q.transpose();
    for (int t = 0; t <= N_; ++t) {
      const Eigen::Vector2d e(z[ip(t)] + p0_ - ocp_.desired[static_cast<std::size_t>(t)].p,
                              z[iv(t)] - ocp_.desired[static_cast<std::size_t>(t)].v);
      const Eigen::Vector2d ge = w.beta * Qs * e;
      g[ip(t)] += ge[0];
      g[iv(t)] += ge[1];
    }
    for (int t = 0; t < N_; ++t) {
      const double s = s_[static_cast<std::size_t>(t)];
      g[iv(t)] += dt * (fuel[1] * s + fuel[2] * s * z[iT(t)]);
      g[iT(t)] += dt * fuel[2] * s * z[iv(t)];
    }
    for (int t = 0; t <= N_; ++t) {
      if (sa_ >= 0) g[sa_ + t] = w.beta_pen;
      if (sb_ >= 0) g[sb_ + t] = w.beta_pen;
    }
    return g;
  }

  [[nodiscard]] VectorXd equalities(const VectorXd& z) const override {
    const VehicleParams& prm = ocp_.params;
    VectorXd c(num_equalities());
    c[0] = z[ip(0)];
    c[1] = z[iv(0)] - ocp_.x0.v;
    for (int t = 0; t < N_; ++t) {
      const double v = z[iv(t)];
      c[2 + 2 * t] = z[ip(t + 1)] - z[ip(t)] - prm.dt * v;
      const double force = z[iT(t)] * k_[static_cast<std::size_t>(t)] - prm.drag * v * v - z[iF(t)] - G_;
      c[3 + 2 * t] = z[iv(t + 1)] - v - prm.dt / prm.mass * force;
    }
    return c;
  }

  [[nodiscard]] MatrixXd equality_jacobian(const VectorXd& z) const override {
    const VehicleParams& prm = ocp_.params;
    MatrixXd J = MatrixXd::Zero(num_equalities(), n_);
    J(0, ip(0)) = 1.0;
    J(1, iv(0)) = 1.0;
    const double s = prm.dt / prm.mass;
    for (int t = 0; t < N_; ++t) {
      const int rp = 2 + 2 * t;
      J(rp, ip(t + 1)) = 1.0;
      J(rp, ip(t)) = -1.0;
      J(rp, iv(t)) = -prm.dt;
      const int rv = rp + 1;
      J(rv, iv(t + 1)) = 1.0;
      J(rv, iv(t)) = -1.0 + 2.0 * s * prm.drag * z[iv(t)];
      J(rv, iT(t)) = -s * k_[static_cast<std::size_t>(t)];
      J(rv, iF(t)) = s;
    }
    return J;
  }

  [[nodiscard]] MatrixXd lagrangian_hessian(const VectorXd& z, const VectorXd& y) const override {
    (void)z;
    const OcpWeights& w = ocp_.weights;
    const VehicleParams& prm = ocp_.params;
    MatrixXd H = MatrixXd::Zero(n_, n_);
    const Eigen::Matrix2d Qs = w.beta * (w.Q + w.Q.transpose());
    for (int t = 0; t <= N_; ++t) {
      H(ip(t), ip(t)) += Qs(0, 0);
      H(ip(t), iv(t)) += Qs(0, 1);
      H(iv(t), ip(t)) += Qs(1, 0);
      H(iv(t), iv(t)) += Qs(1, 1);
    }
    for (int t = 0; t < N_; ++t) {
      const double cross = prm.dt * prm.fuel[2] * s_[static_cast<std::size_t>(t)];
      H(iv(t), iT(t)) += cross;
      H(iT(t), iv(t)) += cross;
      H(iv(t), iv(t)) += y[3 + 2 * t] * 2.0 * prm.dt / prm.mass * prm.drag;
    }
    return H;
  }

  [[nodiscard]] VectorXd pack(const OcpTrajectory& c) const {
    VectorXd z = VectorXd::Zero(n_);
    for (int t = 0; t <= N_; ++t) {
      z[ip(t)] = c.states[static_cast<std::size_t>(t)].p - p0_;
      z[iv(t)] = c.states[static_cast<std::size_t>(t)].v;
    }
    for (int t = 0; t < N_; ++t) {
      z[iT(t)] = c.inputs[static_cast<std::size_t>(t)].T;
      z[iF(t)] = c.inputs[static_cast<std::size_t>(t)].F;
    }
    for (int t = 0; t <= N_; ++t) {
      if (sa_ >= 0) z[sa_ + t] = c.slack_ahead.empty() ? 0.0 : c.slack_ahead[static_cast<std::size_t>(t)];
      if (sb_ >= 0) z[sb_ + t] = c.slack_behind.empty() ? 0.0 : c.slack_behind[static_cast<std::size_t>(t)];
    }
    return z;
  }

  [[nodiscard]] OcpTrajectory unpack(const VectorXd& z) const {
    OcpTrajectory c;
    c.states.resize(static_cast<std::size_t>(N_ + 1));
    c.inputs.resize(static_cast<std::size_t>(N_));
    c.slack_ahead.assign(static_cast<std::size_t>(N_ + 1), 0.0);
    c.slack_behind.assign(static_cast<std::size_t>(N_ + 1), 0.0);
    for (int t = 0; t <= N_; ++t) {
      c.states[static_cast<std::size_t>(t)] = {z[ip(t)] + p0_, z[iv(t)]};
      if (sa_ >= 0) c.slack_ahead[static_cast<std::size_t>(t)] = z[sa_ + t];
      if (sb_ >= 0) c.slack_behind[static_cast<std::size_t>(t)] = z[sb_ + t];
    }
    for (int t = 0; t < N_; ++t) c.inputs[static_cast<std::size_t>(t)] = {z[iT(t)], z[iF(t)]};
    return c;
  }

 private:
  const FixedGearOcp& ocp_;
  int N_ = 0;
  int n_ = 0;
  int sa_ = -1;
  int sb_ = -1;
  double p0_ = 0.0;
  double G_ = 0.0;
  std::vector<double> k_;
  std::vector<double> s_;
  VectorXd lo_, hi_, b_, scale_;
  MatrixXd A_;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json trajectory_to_json(const OcpTrajectory& c) {
  nlohmann::json j;
  for (const auto& x : c.states) j["p"].push_back(x.p), j["v"].push_back(x.v);
  for (const auto& u : c.inputs) j["T"].push_back(u.T), j["F"].push_back(u.F);
  j["slack_ahead"] = c.slack_ahead;
  j["slack_behind"] = c.slack_behind;
  return j;
}

inline nlohmann::json to_json(const FixedGearOcp& ocp) {
  nlohmann::json j;
  j["N"] = ocp.N;
  j["x0"] = {ocp.x0.p, ocp.x0.v};
  j["schedule"] = ocp.schedule.gears;
  for (const auto& x : ocp.desired) j["desired"].push_back({x.p, x.v});
  if (ocp.neighbors.ahead) j["ahead"] = *ocp.neighbors.ahead;
  if (ocp.neighbors.behind) j["behind"] = *ocp.neighbors.behind;
  j["weights"] = {{"beta", ocp.weights.beta},
                  {"Q", {ocp.weights.Q(0, 0), ocp.weights.Q(0, 1), ocp.weights.Q(1, 0), ocp.weights.Q(1, 1)}},
                  {"beta_pen", ocp.weights.beta_pen},
                  {"d", ocp.weights.safety_distance}};
  if (ocp.previous_torque) j["previous_torque"] = *ocp.previous_torque;
  j["infeasible_reason"] = ocp.infeasible_reason;
  j["vehicle"] = to_json(ocp.params);
  return j;
}

inline nlohmann::json to_json(const OcpSolution& s) {
  nlohmann::json j = trajectory_to_json(s);
  j["status"] = s.solved() ? "solved" : "infeasible";
  j["objective"] = s.solved() ? nlohmann::json(s.objective) : nlohmann::json("inf");
  j["kkt_residual"] = s.kkt_residual;
  j["iterations"] = s.iterations;
  j["schedule"] = s.schedule.gears;
  j["message"] = s.message;
  return j;
}

}  // namespace platoon
