#pragma once

// Longitudinal vehicle and powertrain model with discrete gears.
//
// Gear indices are 1-based throughout (gear 1 is the lowest gear, the one
// with the largest transmission ratio).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace platoon {

using Gear = int;

struct VehicleState {
  double p = 0.0;  // position [m]
  double v = 0.0;  // velocity [m/s]

  bool operator==(const VehicleState&) const = default;
};

struct PowertrainInput {
  double T = 0.0;  // engine torque [Nm]
  double F = 0.0;  // brake force [N]
  Gear j = 1;

  bool operator==(const PowertrainInput&) const = default;
};

/// Gear positions over an MPC window, one entry per input step.
struct GearSchedule {
  std::vector<Gear> gears;

  GearSchedule() = default;
  explicit GearSchedule(std::vector<Gear> g) : gears(std::move(g)) {}
  GearSchedule(std::initializer_list<Gear> g) : gears(g) {}

  [[nodiscard]] int size() const { return static_cast<int>(gears.size()); }
  Gear operator[](int i) const { return gears[static_cast<std::size_t>(i)]; }
  Gear& operator[](int i) { return gears[static_cast<std::size_t>(i)]; }
  bool operator==(const GearSchedule&) const = default;
  bool operator<(const GearSchedule& o) const { return gears < o.gears; }

  /// True when no consecutive entries differ by more than one gear.
  [[nodiscard]] bool respects_shift_rate() const {
    for (std::size_t t = 1; t < gears.size(); ++t) {
      if (std::abs(gears[t] - gears[t - 1]) > 1) return false;
    }
    return true;
  }

  [[nodiscard]] bool in_range(int j_max) const {
    return std::all_of(gears.begin(), gears.end(), [&](Gear g) { return g >= 1 && g <= j_max; });
  }

  [[nodiscard]] std::string str() const {
    std::string out = "[";
    for (std::size_t t = 0; t < gears.size(); ++t) {
      if (t) out += ",";
      out += std::to_string(gears[t]);
    }
    return out + "]";
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  [[nodiscard]] bool empty() const { return lo > hi; }
  [[nodiscard]] bool contains(double x, double tol = 0.0) const { return x >= lo - tol && x <= hi + tol; }
  [[nodiscard]] Interval intersect(const Interval& o) const { return {std::max(lo, o.lo), std::min(hi, o.hi)}; }
};

/// Physical constants of one vehicle. Defaults are the reference passenger car.
class VehicleParams {
 public:
  double mass = 2000.0;          // kg
  double drag = 0.4071;          // kg/m
  double rolling = 0.015;        // -
  double gravity = 9.81;         // m/s^2
  double final_drive = 3.39;     // -
  double wheel_radius = 0.3554;  // m
  std::vector<double> gear_ratios{4.484, 2.872, 1.842, 1.414, 1.0, 0.742};
  double torque_min = 15.0;          // Nm
  double torque_max = 300.0;         // Nm
  double torque_rate_max = 100.0;    // Nm/s
  double brake_min = 0.0;            // N
  double brake_max = 9000.0;         // N
  double engine_speed_min = 900.0;   // RPM
  double engine_speed_max = 3000.0;  // RPM
  double accel_max = 3.0;            // m/s^2
  std::array<double, 3> fuel{0.04981, 0.001897, 4.5232e-5};
  double grade = 0.0;  // rad
  double dt = 1.0;     // s

  VehicleParams() { finalize(); }

  /// Validates the constants and caches derived velocity bounds. Must be called
  /// after any field is changed.
  void finalize() {
    if (gear_ratios.size() < 2) throw std::invalid_argument("VehicleParams: need at least two gears");
    for (std::size_t j = 1; j < gear_ratios.size(); ++j) {
      if (!(gear_ratios[j] < gear_ratios[j - 1]))
        throw std::invalid_argument("VehicleParams: gear ratios must be strictly decreasing");
    }
    if (!(mass > 0 && wheel_radius > 0 && final_drive > 0 && dt > 0))
      throw std::invalid_argument("VehicleParams: mass, wheel radius, final drive and dt must be positive");
    if (torque_min > torque_max || brake_min > brake_max || engine_speed_min > engine_speed_max ||
        engine_speed_min <= 0 || accel_max < 0 || torque_rate_max < 0)
      throw std::invalid_argument("VehicleParams: inconsistent bounds");
    v_min_ = std::numbers::pi * engine_speed_min * wheel_radius / (30.0 * gear_ratios.front() * final_drive);
    v_max_ = std::numbers::pi * engine_speed_max * wheel_radius / (30.0 * gear_ratios.back() * final_drive);
  }

  [[nodiscard]] int j_max() const { return static_cast<int>(gear_ratios.size()); }
  [[nodiscard]] double v_min() const { return v_min_; }
  [[nodiscard]] double v_max() const { return v_max_; }

  [[nodiscard]] double ratio(Gear j) const {
    check_gear(j);
    return gear_ratios[static_cast<std::size_t>(j - 1)];
  }

  /// Lumped ratio z(j) z_f / r mapping engine torque to wheel force.
  [[nodiscard]] double traction_gain(Gear j) const { return ratio(j) * final_drive / wheel_radius; }

  void check_gear(Gear j) const {
    if (j < 1 || j > j_max()) throw std::domain_error("gear index " + std::to_string(j) + " out of range");
  }

 private:
  double v_min_ = 0.0;
  double v_max_ = 0.0;
};

// Velocity membership tolerance for engine-speed checks. Endpoints computed from
// the engine-speed bounds must count as feasible despite rounding.
inline constexpr double kVelocityTol = 1e-9;

[[nodiscard]] inline double engine_speed(const VehicleParams& prm, double v, Gear j) {
  return 30.0 * v * prm.ratio(j) * prm.final_drive / (prm.wheel_radius * std::numbers::pi);
}

/// d omega / d v for a fixed gear.
[[nodiscard]] inline double engine_speed_slope(const VehicleParams& prm, Gear j) {
  return 30.0 * prm.ratio(j) * prm.final_drive / (prm.wheel_radius * std::numbers::pi);
}

/// Velocities at which gear j keeps the engine speed within bounds.
[[nodiscard]] inline Interval gear_velocity_range(const VehicleParams& prm, Gear j) {
  const double k = 30.0 * prm.ratio(j) * prm.final_drive;
  return {std::numbers::pi * prm.engine_speed_min * prm.wheel_radius / k,
          std::numbers::pi * prm.engine_speed_max * prm.wheel_radius / k};
}

[[nodiscard]] inline bool gear_allows(const VehicleParams& prm, double v, Gear j) {
  return gear_velocity_range(prm, j).contains(v, kVelocityTol * std::max(1.0, std::abs(v)));
}

/// Set of engine-speed feasible gears at velocity v, ascending. The result is a
/// contiguous range because the ratios are strictly decreasing.
[[nodiscard]] inline std::vector<Gear> feasible_gears(const VehicleParams& prm, double v) {
  const double tol = kVelocityTol * std::max(1.0, std::abs(v));
  if (!(v >= prm.v_min() - tol && v <= prm.v_max() + tol))
    throw std::domain_error("velocity " + std::to_string(v) + " outside engine-speed velocity bounds");
  std::vector<Gear> out;
  for (Gear j = 1; j <= prm.j_max(); ++j) {
    if (gear_allows(prm, v, j)) out.push_back(j);
  }
  if (out.empty()) throw std::domain_error("no feasible gear at velocity " + std::to_string(v));
  return out;
}

[[nodiscard]] inline double friction_force(const VehicleParams& prm) {
  return prm.rolling * prm.mass * prm.gravity * std::cos(prm.grade) + prm.mass * prm.gravity * std::sin(prm.grade);
}

[[nodiscard]] inline VehicleState step_dynamics(const VehicleParams& prm, const VehicleState& x, const PowertrainInput& u) {
  const double force = u.T * prm.traction_gain(u.j) - prm.drag * x.v * x.v - u.F - friction_force(prm);
  return {x.p + prm.dt * x.v, x.v + prm.dt / prm.mass * force};
}

/// Jacobian of the velocity update with respect to (v, T, F). The position
/// update is linear: dp+/dp = 1, dp+/dv = dt.
struct VelocityJacobian {
  double dv = 0.0;
  double dT = 0.0;
  double dF = 0.0;
};

[[nodiscard]] inline VelocityJacobian step_velocity_jacobian(const VehicleParams& prm, const VehicleState& x,
                                                             const PowertrainInput& u) {
  const double s = prm.dt / prm.mass;
  return {1.0 - 2.0 * s * prm.drag * x.v, s * prm.traction_gain(u.j), -s};
}

/// Continuous-time model integrated with RK4 over one sample period, inputs held
/// constant. Used as a plant with model mismatch.
[[nodiscard]] inline VehicleState step_continuous(const VehicleParams& prm, const VehicleState& x,
                                                  const PowertrainInput& u, double substep = 0.01) {
  const double drive = u.T * prm.traction_gain(u.j) - u.F - friction_force(prm);
  auto accel = [&](double v) { return (drive - prm.drag * v * v) / prm.mass; };
  const int n = std::max(1, static_cast<int>(std::lround(prm.dt / substep)));
  const double h = prm.dt / n;
  double p = x.p;
  double v = x.v;
  for (int i = 0; i < n; ++i) {
    const double k1p = v, k1v = accel(v);
    const double k2p = v + 0.5 * h * k1v, k2v = accel(v + 0.5 * h * k1v);
    const double k3p = v + 0.5 * h * k2v, k3v = accel(v + 0.5 * h * k2v);
    const double k4p = v + h * k3v, k4v = accel(v + h * k3v);
    p += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
    v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  return {p, v};
}

/// Fuel consumed over one sample period, in the fuel model's native units.
[[nodiscard]] inline double fuel_stage_cost(const VehicleParams& prm, double v, double T, Gear j) {
  const double w = engine_speed(prm, v, j);
  return prm.dt * (prm.fuel[0] + prm.fuel[1] * w + prm.fuel[2] * w * T);
}

[[nodiscard]] inline double tracking_stage_cost(const VehicleState& x, const VehicleState& target,
                                                const Eigen::Matrix2d& Q) {
  const Eigen::Vector2d e(x.p - target.p, x.v - target.v);
  return e.dot(Q * e);
}

/// Torque and brake force holding velocity v constant in gear j, if they exist
/// inside the actuator bounds.
struct EquilibriumCheck {
  Gear gear = 1;
  double velocity = 0.0;
  bool upper_endpoint = false;
  double required_force = 0.0;  // C v^2 + G
  double torque = 0.0;
  double brake = 0.0;
  bool ok = false;
};

[[nodiscard]] inline EquilibriumCheck equilibrium_input(const VehicleParams& prm, double v, Gear j) {
  EquilibriumCheck c;
  c.gear = j;
  c.velocity = v;
  c.required_force = prm.drag * v * v + friction_force(prm);
  const double k = prm.traction_gain(j);
  // Prefer pure engine torque; brake only when even minimum torque is too much.
  double T = std::clamp(c.required_force / k, prm.torque_min, prm.torque_max);
  double F = T * k - c.required_force;
  F = std::clamp(F, prm.brake_min, prm.brake_max);
  c.torque = T;
  c.brake = F;
  const double residual = T * k - F - c.required_force;
  c.ok = std::abs(residual) <= 1e-9 * std::max(1.0, c.required_force);
  return c;
}

struct EquilibriumReport {
  bool pass = true;
  std::vector<EquilibriumCheck> checks;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    for (const auto& c : checks) {
      os << "gear " << c.gear << (c.upper_endpoint ? " upper " : " lower ") << "v=" << c.velocity
         << " T=" << c.torque << " F=" << c.brake << " -> " << (c.ok ? "ok" : "FAIL") << "\n";
    }
    os << (pass ? "PASS" : "FAIL") << "\n";
    return os.str();
  }
};

/// Checks that every gear admits an in-bounds equilibrium input at both
/// endpoints of its velocity range. The required force is monotone in v, so the
/// endpoints suffice.
[[nodiscard]] inline EquilibriumReport verify_equilibrium_condition(const VehicleParams& prm) {
  EquilibriumReport rep;
  for (Gear j = 1; j <= prm.j_max(); ++j) {
    const Interval rng = gear_velocity_range(prm, j);
    for (bool upper : {false, true}) {
      EquilibriumCheck c = equilibrium_input(prm, upper ? rng.hi : rng.lo, j);
      c.upper_endpoint = upper;
      rep.pass = rep.pass && c.ok;
      rep.checks.push_back(c);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Configuration I/O

inline nlohmann::json to_json(const VehicleParams& p) {
  return {{"mass", p.mass},
          {"drag", p.drag},
          {"rolling", p.rolling},
          {"gravity", p.gravity},
          {"final_drive", p.final_drive},
          {"wheel_radius", p.wheel_radius},
          {"gear_ratios", p.gear_ratios},
          {"torque_min", p.torque_min},
          {"torque_max", p.torque_max},
          {"torque_rate_max", p.torque_rate_max},
          {"brake_min", p.brake_min},
          {"brake_max", p.brake_max},
          {"engine_speed_min", p.engine_speed_min},
          {"engine_speed_max", p.engine_speed_max},
          {"accel_max", p.accel_max},
          {"fuel", p.fuel},
          {"grade", p.grade},
          {"dt", p.dt}};
}

/// Reads parameters from a JSON object; absent keys keep their defaults.
inline VehicleParams vehicle_params_from_json(const nlohmann::json& j) {
  VehicleParams p;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  for (const auto& [key, value] : j.items()) {
    static const std::vector<std::string> known{
        "mass",       "drag",      "rolling",   "gravity",          "final_drive",      "wheel_radius",
        "gear_ratios", "torque_min", "torque_max", "torque_rate_max", "brake_min",        "brake_max",
        "engine_speed_min", "engine_speed_max", "accel_max", "fuel", "grade", "dt"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("unknown vehicle parameter '" + key + "'");
  }
  get("mass", p.mass);
  get("drag", p.drag);
  get("rolling", p.rolling);
  get("gravity", p.gravity);
  get("final_drive", p.final_drive);
  get("wheel_radius", p.wheel_radius);
  get("gear_ratios", p.gear_ratios);
  get("torque_min", p.torque_min);
  get("torque_max", p.torque_max);
  get("torque_rate_max", p.torque_rate_max);
  get("brake_min", p.brake_min);
  get("brake_max", p.brake_max);
  get("engine_speed_min", p.engine_speed_min);
  get("engine_speed_max", p.engine_speed_max);
  get("accel_max", p.accel_max);
  get("fuel", p.fuel);
  get("grade", p.grade);
  get("dt", p.dt);
  p.finalize();
  return p;
}

inline VehicleParams load_vehicle_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vehicle config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in);
  return vehicle_params_from_json(j.contains("vehicle") ? j.at("vehicle") : j);
}

}  // namespace platoon
