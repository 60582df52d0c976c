#pragma once

// Rule-based gear-shift schedules and the decoupled lumped-force controller.

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/nlp/interior_point.hpp"
#include "platoon/nlp_solver.hpp"
#include "platoon/ocp.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

enum class GearSelector { low, high, mid };

inline const char* to_string(GearSelector s) {
  switch (s) {
    case GearSelector::low: return "low";
    case GearSelector::high: return "high";
    case GearSelector::mid: return "mid";
  }
  return "?";
}

inline constexpr GearSelector kAllSelectors[] = {GearSelector::low, GearSelector::high, GearSelector::mid};

/// Picks a gear from the feasible set at v. With literal_mid the middle
/// selector returns the raw half-width floor((high - low) / 2) (at least 1)
/// instead of low + floor((high - low) / 2).
[[nodiscard]] inline Gear select_gear(const VehicleParams& prm, double v, GearSelector sel, bool literal_mid = false) {
  const std::vector<Gear> phi = feasible_gears(prm, v);
  const Gear lo = phi.front();
  const Gear hi = phi.back();
  switch (sel) {
    case GearSelector::low: return lo;
    case GearSelector::high: return hi;
    case GearSelector::mid: return literal_mid ? std::max(1, (hi - lo) / 2) : lo + (hi - lo) / 2;
  }
  return lo;
}

[[nodiscard]] inline GearSchedule constant_schedule(const VehicleParams& prm, const VehicleState& x, GearSelector sel,
                                                    int N, bool literal_mid = false) {
  GearSchedule s;
  s.gears.assign(static_cast<std::size_t>(N), select_gear(prm, x.v, sel, literal_mid));
  return s;
}

/// Previous schedule shifted by one with the highest feasible gear at the
/// previous terminal velocity appended, kept within one gear of its predecessor.
[[nodiscard]] inline GearSchedule hs_schedule(const VehicleParams& prm, const GearSchedule& prev, double v_terminal) {
  if (prev.gears.empty()) throw std::invalid_argument("hs_schedule: empty previous schedule");
  GearSchedule s;
  s.gears.assign(prev.gears.begin() + 1, prev.gears.end());
  const Gear last = prev.gears.back();
  const double v = std::clamp(v_terminal, prm.v_min(), prm.v_max());
  const Gear g = select_gear(prm, v, GearSelector::high);
  s.gears.push_back(std::clamp(g, last - 1, last + 1));
  return s;
}

// ---------------------------------------------------------------------------
// Decoupled controller on lumped wheel force

/// Largest engine traction force available at velocity v over its feasible gears.
[[nodiscard]] inline double max_traction_force(const VehicleParams& prm, double v) {
  double best = -kInfCost;
  for (Gear j : feasible_gears(prm, v)) best = std::max(best, prm.torque_max * prm.traction_gain(j));
  return best;
}

[[nodiscard]] inline double min_lumped_force(const VehicleParams& prm) {
  return prm.torque_min * prm.traction_gain(1) - prm.brake_max;
}

/// Splits a lumped wheel force into engine torque and brake force at gear j.
[[nodiscard]] inline ContinuousInput split_lumped_force(const VehicleParams& prm, double W, Gear j) {
  const double k = prm.traction_gain(j);
  if (W < 0) return {prm.torque_min, prm.torque_min * k - W};
  return {W / k, 0.0};
}

/// Tracking problem in (p, v, W) with the simplified dynamics
/// v+ = v + dt/m (W - C v^2 - G) and no powertrain model.
class LumpedForceProblem final : public nlp::SmoothProblem {
  using VectorXd = Eigen::VectorXd;
  using MatrixXd = Eigen::MatrixXd;

 public:
  LumpedForceProblem(const VehicleParams& prm, const VehicleState& x0, const DesiredTrajectory& desired,
                     const NeighborPlans& nb, const OcpWeights& w, double slack_weight)
      : prm_(prm), x0_(x0), desired_(desired), w_(w), slack_weight_(slack_weight) {
    N_ = static_cast<int>(desired.size()) - 1;
    if (N_ < 2) throw std::invalid_argument("lumped-force problem needs N >= 2");
    const int N = N_;
    sa_ = nb.ahead ? 3 * N + 2 : -1;
    sb_ = nb.behind ? 3 * N + 2 + (nb.ahead ? N + 1 : 0) : -1;
    n_ = 3 * N + 2 + (nb.ahead ? N + 1 : 0) + (nb.behind ? N + 1 : 0);
    G_ = friction_force(prm);
    lo_ = VectorXd::Constant(n_, -nlp::kInf);
    hi_ = VectorXd::Constant(n_, nlp::kInf);
    for (int t = 1; t <= N; ++t) {
      lo_[iv(t)] = prm.v_min();
      hi_[iv(t)] = prm.v_max();
    }
    w_max_ = max_traction_force(prm, x0.v);
    for (int t = 0; t < N; ++t) {
      lo_[iW(t)] = min_lumped_force(prm);
      hi_[iW(t)] = w_max_;
    }
    for (int t = 0; t <= N; ++t) {
      if (sa_ >= 0) lo_[sa_ + t] = 0.0;
      if (sb_ >= 0) lo_[sb_ + t] = 0.0;
    }
    const int rows = 2 * N + (sa_ >= 0 ? N + 1 : 0) + (sb_ >= 0 ? N + 1 : 0);
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
    const double d = w.safety_distance;
    for (int t = 0; t <= N && sa_ >= 0; ++t) {
      A_(r, ip(t)) = 1.0;
      A_(r, sa_ + t) = -1.0;
      b_[r++] = (*nb.ahead)[static_cast<std::size_t>(t)] - x0.p - d;
    }
    for (int t = 0; t <= N && sb_ >= 0; ++t) {
      A_(r, ip(t)) = -1.0;
      A_(r, sb_ + t) = -1.0;
      b_[r++] = -((*nb.behind)[static_cast<std::size_t>(t)] - x0.p + d);
    }
    scale_ = VectorXd::Ones(n_);
    for (int t = 0; t <= N; ++t) {
      scale_[ip(t)] = std::max(10.0, prm.dt * N * std::max(1.0, x0.v));
      scale_[iv(t)] = 10.0;
    }
    for (int t = 0; t < N; ++t) scale_[iW(t)] = 1000.0;
  }

  [[nodiscard]] int ip(int t) const { return t; }
  [[nodiscard]] int iv(int t) const { return N_ + 1 + t; }
  [[nodiscard]] int iW(int t) const { return 2 * (N_ + 1) + t; }
  [[nodiscard]] double w_max() const { return w_max_; }

  [[nodiscard]] int num_variables() const override { return n_; }
  [[nodiscard]] int num_equalities() const override { return 2 + 2 * N_; }
  [[nodiscard]] const VectorXd& lower_bounds() const override { return lo_; }
  [[nodiscard]] const VectorXd& upper_bounds() const override { return hi_; }
  [[nodiscard]] const MatrixXd& inequality_matrix() const override { return A_; }
  [[nodiscard]] const VectorXd& inequality_rhs() const override { return b_; }
  [[nodiscard]] VectorXd variable_scaling() const override { return scale_; }
  [[nodiscard]] std::vector<int> elastic_rows() const override {
    std::vector<int> rows;
    for (int t = 0; t < N_; ++t) rows.push_back(3 + 2 * t);
    return rows;
  }

  [[nodiscard]] double objective(const VectorXd& z) const override {
    double f = 0.0;
    for (int t = 0; t <= N_; ++t) {
      const Eigen::Vector2d e = err(z, t);
      f += e.dot(w_.Q * e);
      if (sa_ >= 0) f += slack_weight_ * z[sa_ + t];
      if (sb_ >= 0) f += slack_weight_ * z[sb_ + t];
    }
    return f;
  }

  [[nodiscard]] VectorXd objective_gradient(const VectorXd& z) const override {
    VectorXd g = VectorXd::Zero(n_);
    const Eigen::Matrix2d Qs = w_.Q + w_.Q.transpose();
    for (int t = 0; t <= N_; ++t) {
      const Eigen::Vector2d ge = Qs * err(z, t);
      g[ip(t)] = ge[0];
      g[iv(t)] = ge[1];
      if (sa_ >= 0) g[sa_ + t] = slack_weight_;
      if (sb_ >= 0) g[sb_ + t] = slack_weight_;
    }
    return g;
  }

  [[nodiscard]] VectorXd equalities(const VectorXd& z) const override {
    VectorXd c(num_equalities());
    c[0] = z[ip(0)];
    c[1] = z[iv(0)] - x0_.v;
    for (int t = 0; t < N_; ++t) {
      const double v = z[iv(t)];
      c[2 + 2 * t] = z[ip(t + 1)] - z[ip(t)] - prm_.dt * v;
      c[3 + 2 * t] = z[iv(t + 1)] - v - prm_.dt / prm_.mass * (z[iW(t)] - prm_.drag * v * v - G_);
    }
    return c;
  }

  [[nodiscard]] MatrixXd equality_jacobian(const VectorXd& z) const override {
    MatrixXd J = MatrixXd::Zero(num_equalities(), n_);
    J(0, ip(0)) = 1.0;
    J(1, iv(0)) = 1.0;
    const double s = prm_.dt / prm_.mass;
    for (int t = 0; t < N_; ++t) {
      const int rp = 2 + 2 * t;
      J(rp, ip(t + 1)) = 1.0;
      J(rp, ip(t)) = -1.0;
      J(rp, iv(t)) = -prm_.dt;
      J(rp + 1, iv(t + 1)) = 1.0;
      J(rp + 1, iv(t)) = -1.0 + 2.0 * s * prm_.drag * z[iv(t)];
      J(rp + 1, iW(t)) = -s;
    }
    return J;
  }

  [[nodiscard]] MatrixXd lagrangian_hessian(const VectorXd&, const VectorXd& y) const override {
    MatrixXd H = MatrixXd::Zero(n_, n_);
    const Eigen::Matrix2d Qs = w_.Q + w_.Q.transpose();
    for (int t = 0; t <= N_; ++t) {
      H(ip(t), ip(t)) += Qs(0, 0);
      H(ip(t), iv(t)) += Qs(0, 1);
      H(iv(t), ip(t)) += Qs(1, 0);
      H(iv(t), iv(t)) += Qs(1, 1);
    }
    for (int t = 0; t < N_; ++t) H(iv(t), iv(t)) += y[3 + 2 * t] * 2.0 * prm_.dt / prm_.mass * prm_.drag;
    return H;
  }

  /// Rollout steering towards a velocity profile, packed as a decision vector.
  [[nodiscard]] VectorXd rollout(const std::vector<double>& v_target) const {
    VectorXd z = VectorXd::Zero(n_);
    double p = 0.0, v = x0_.v;
    for (int t = 0; t <= N_; ++t) {
      z[ip(t)] = p;
      z[iv(t)] = v;
      if (t == N_) break;
      const double dv = prm_.accel_max * prm_.dt;
      const double target = std::clamp(std::clamp(v_target[static_cast<std::size_t>(t + 1)], v - dv, v + dv),
                                       prm_.v_min(), prm_.v_max());
      double W = prm_.mass * (target - v) / prm_.dt + prm_.drag * v * v + G_;
      W = std::clamp(W, lo_[iW(t)], hi_[iW(t)]);
      z[iW(t)] = W;
      p += prm_.dt * v;
      v += prm_.dt / prm_.mass * (W - prm_.drag * v * v - G_);
    }
    for (int t = 0; t <= N_; ++t) {
      if (sa_ >= 0) z[sa_ + t] = std::max(0.0, z[ip(t)] - b_[2 * N_ + t]);
      if (sb_ >= 0) z[sb_ + t] = std::max(0.0, -b_[2 * N_ + (sa_ >= 0 ? N_ + 1 : 0) + t] - z[ip(t)]);
    }
    return z;
  }

  [[nodiscard]] double slack_at(const VectorXd& z, int t, bool ahead) const {
    const int base = ahead ? sa_ : sb_;
    return base < 0 ? 0.0 : z[base + t];
  }

 private:
  [[nodiscard]] Eigen::Vector2d err(const VectorXd& z, int t) const {
    return {z[ip(t)] + x0_.p - desired_[static_cast<std::size_t>(t)].p,
            z[iv(t)] - desired_[static_cast<std::size_t>(t)].v};
  }

  const VehicleParams& prm_;
  VehicleState x0_;
  const DesiredTrajectory& desired_;
  OcpWeights w_;
  double slack_weight_;
  int N_ = 0, n_ = 0, sa_ = -1, sb_ = -1;
  double G_ = 0.0, w_max_ = 0.0;
  VectorXd lo_, hi_, b_, scale_;
  MatrixXd A_;
};

struct HdResult {
  bool ok = false;
  std::string message;
  PowertrainInput input;
  double lumped_force = 0.0;
  bool gear_clipped = false;
  bool torque_clipped = false;
  OcpTrajectory plan;  // predicted states; inputs hold the lumped force split at the applied gear
  double objective = kInfCost;
};

struct HdOptions {
  int multi_start = 4;
  std::uint64_t seed = 0;
  SolverConfig solver;
};

/// Decoupled controller: plan the lumped wheel force, then choose the highest
/// feasible gear (within one shift of the applied gear where engine speed
/// allows) and split the force into torque and brake with torque-rate clipping.
[[nodiscard]] inline HdResult hd_control(const VehicleParams& prm, const VehicleState& x, const DesiredTrajectory& desired,
                                         const NeighborPlans& nb, const OcpWeights& weights,
                                         std::optional<Gear> previous_gear, std::optional<double> previous_torque,
                                         const HdOptions& opt = {}) {
  HdResult res;
  // Tracking enters without the fuel trade-off weight, so the slack weight is
  // rescaled to keep the tracking/slack ratio of the fixed-gear problem.
  const LumpedForceProblem prob(prm, x, desired, nb, weights, weights.beta_pen / weights.beta);
  const int N = static_cast<int>(desired.size()) - 1;

  nlp::IpmOptions ipm;
  ipm.max_iterations = opt.solver.max_iterations;
  ipm.tolerance = opt.solver.internal_tolerance;
  ipm.acceptable_tolerance = std::min(opt.solver.kkt_tolerance, opt.solver.constraint_tolerance);
  ipm.feasibility_tolerance = opt.solver.constraint_tolerance;

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(-opt.solver.perturbation, opt.solver.perturbation);
  const double range = prm.v_max() - prm.v_min();
  nlp::IpmResult best;
  bool have = false;
  for (int s = 0; s < std::max(1, opt.multi_start); ++s) {
    std::vector<double> target(static_cast<std::size_t>(N + 1), x.v);
    if (s > 0)
      for (double& t : target) t += u(rng) * range;
    nlp::IpmResult r = nlp::solve_interior_point(prob, prob.rollout(target), ipm);
    if (r.status != nlp::IpmStatus::converged) continue;
    if (!have || r.objective < best.objective) {
      best = std::move(r);
      have = true;
    }
  }
  if (!have) {
    res.message = "lumped-force problem infeasible";
    return res;
  }

  const Eigen::VectorXd& z = best.point.x;
  res.lumped_force = z[prob.iW(0)];
  res.objective = best.objective;

  const std::vector<Gear> phi = feasible_gears(prm, x.v);
  Gear j = phi.back();
  if (previous_gear) {
    const Gear lo = std::max(phi.front(), *previous_gear - 1);
    const Gear hi = std::min(phi.back(), *previous_gear + 1);
    if (lo <= hi) {
      const Gear c = std::clamp(j, lo, hi);
      res.gear_clipped = c != j;
      j = c;
    } else {
      // No gear is both engine-speed feasible and within one shift; engine speed wins.
      j = std::clamp(*previous_gear, phi.front(), phi.back());
      res.gear_clipped = true;
      res.message = "shift-rate limit relaxed to keep engine speed feasible";
    }
  }
  ContinuousInput tf = split_lumped_force(prm, res.lumped_force, j);
  double T = std::clamp(tf.T, prm.torque_min, prm.torque_max);
  if (previous_torque) {
    const double dT = prm.torque_rate_max * prm.dt;
    T = std::clamp(T, *previous_torque - dT, *previous_torque + dT);
  }
  res.torque_clipped = T != tf.T;
  res.input = {T, std::clamp(tf.F, prm.brake_min, prm.brake_max), j};

  res.plan.states.resize(static_cast<std::size_t>(N + 1));
  res.plan.inputs.resize(static_cast<std::size_t>(N));
  res.plan.slack_ahead.assign(static_cast<std::size_t>(N + 1), 0.0);
  res.plan.slack_behind.assign(static_cast<std::size_t>(N + 1), 0.0);
  for (int t = 0; t <= N; ++t) {
    res.plan.states[static_cast<std::size_t>(t)] = {z[prob.ip(t)] + x.p, z[prob.iv(t)]};
    res.plan.slack_ahead[static_cast<std::size_t>(t)] = prob.slack_at(z, t, true);
    res.plan.slack_behind[static_cast<std::size_t>(t)] = prob.slack_at(z, t, false);
  }
  for (int t = 0; t < N; ++t) res.plan.inputs[static_cast<std::size_t>(t)] = split_lumped_force(prm, z[prob.iW(t)], j);
  res.ok = true;
  return res;
}

}  // namespace platoon
