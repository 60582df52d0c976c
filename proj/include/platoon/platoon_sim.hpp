#pragma once

// Closed-loop platoon simulation with sequential distributed MPC: vehicles
// solve front to back, each using the fresh plan of its predecessor and the
// shifted previous plan of its successor.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <functional>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/dqn_trainer.hpp"
#include "platoon/gear_heuristics.hpp"
#include "platoon/gear_policy.hpp"
#include "platoon/minlp_oracle.hpp"
#include "platoon/nlp_solver.hpp"
#include "platoon/ocp.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

enum class ControllerType { oracle, hc, hs, hd, lc };

inline const char* to_string(ControllerType c) {
  switch (c) {
    case ControllerType::oracle: return "ORACLE";
    case ControllerType::hc: return "HC";
    case ControllerType::hs: return "HS";
    case ControllerType::hd: return "HD";
    case ControllerType::lc: return "LC";
  }
  return "?";
}

inline ControllerType controller_from_string(const std::string& s) {
  std::string u = s;
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "ORACLE" || u == "MINLP") return ControllerType::oracle;
  if (u == "HC") return ControllerType::hc;
  if (u == "HS") return ControllerType::hs;
  if (u == "HD") return ControllerType::hd;
  if (u == "LC" || u == "LC-1" || u == "LC-2" || u == "LC1" || u == "LC2") return ControllerType::lc;
  throw std::invalid_argument("unknown controller '" + s + "'; valid names: ORACLE, HC, HS, HD, LC");
}

struct MultiStartCounts {
  int oracle = 1;  // per leaf
  int hc = 1;      // per constant schedule; three schedules in total
  int hs = 4;
  int hd = 4;
  int lc = 1;      // per problem; policy plus three schedules
};

struct PlatoonConfig {
  int M = 1;
  VehicleParams params;
  std::vector<VehicleParams> per_vehicle;  // empty: homogeneous
  double spacing = 25.0;                   // zeta
  OcpWeights weights;
  int N = 6;
  std::vector<ControllerType> controllers{ControllerType::hc};  // one entry applies to all vehicles
  MultiStartCounts multi_start;
  SolverConfig solver;
  OracleOptions oracle;  // first_gear etc.; multi-start taken from multi_start.oracle
  ReferenceConfig reference;
  std::shared_ptr<const RnnModel> policy;
  FeatureOptions features;
  bool literal_else_branch = false;
  bool rk4_plant = false;
  bool literal_mid = false;
  double initial_velocity = -1.0;  // negative: drawn from the reference range

  PlatoonConfig() { oracle.first_gear = FirstGearRule::adjacent; }

  void validate() const {
    if (M < 1) throw std::invalid_argument("platoon needs at least one vehicle");
    if (!(spacing > weights.safety_distance && weights.safety_distance > 0))
      throw std::invalid_argument("spacing must exceed the safety distance, which must be positive");
    if (N < 2) throw std::invalid_argument("horizon must be at least 2");
    if (controllers.empty()) throw std::invalid_argument("no controller given");
    if (controllers.size() != 1 && static_cast<int>(controllers.size()) != M)
      throw std::invalid_argument("give one controller or one per vehicle");
    if (!per_vehicle.empty() && static_cast<int>(per_vehicle.size()) != M)
      throw std::invalid_argument("per-vehicle parameters must have M entries");
    for (int i = 0; i < M; ++i)
      if (controller(i) == ControllerType::lc && !policy) throw std::invalid_argument("LC needs policy weights");
  }

  [[nodiscard]] ControllerType controller(int i) const {
    return controllers.size() == 1 ? controllers.front() : controllers[static_cast<std::size_t>(i)];
  }
  [[nodiscard]] const VehicleParams& vehicle(int i) const {
    return per_vehicle.empty() ? params : per_vehicle[static_cast<std::size_t>(i)];
  }
};

enum class GearSource { policy, heuristic, fallback, oracle, decoupled };

inline const char* to_string(GearSource s) {
  switch (s) {
    case GearSource::policy: return "policy";
    case GearSource::heuristic: return "heuristic";
    case GearSource::fallback: return "fallback";
    case GearSource::oracle: return "oracle";
    case GearSource::decoupled: return "decoupled";
  }
  return "?";
}

/// Plan and schedule a vehicle communicates after solving.
struct VehicleMemory {
  VehicleState x;
  Gear j_prev = 1;
  std::optional<double> T_prev;
  OcpTrajectory plan;
  GearSchedule schedule;
};

struct ControllerOutput {
  PowertrainInput input;
  OcpTrajectory plan;
  GearSchedule schedule;
  double cost = kInfCost;        // cost of the problem whose input is applied
  double policy_cost = kInfCost;  // LC only
  double heuristic_cost = kInfCost;
  GearSource source = GearSource::heuristic;
  bool literal_branch = false;  // LC else-branch fired with the literal rule
  std::string message;
  long leaves = 0;
};

struct VehicleLog {
  int vehicle = 0;
  VehicleState x;
  PowertrainInput input;
  GearSource source = GearSource::heuristic;
  double cost = kInfCost;
  double policy_cost = kInfCost;
  double heuristic_cost = kInfCost;
  double slack = 0.0;
  double solve_seconds = 0.0;
  double tracking = 0.0;  // quadratic tracking error against the metric target
  double fuel = 0.0;
  double gap = kInfCost;  // to the predecessor
  bool velocity_clamped = false;
  std::string message;
};

struct StepLog {
  long k = 0;
  std::vector<VehicleLog> vehicles;
  VehicleState reference;
  double increment = 0.0;
};

struct MetricAccumulator {
  double beta = 0.01;
  double total = 0.0;
  std::vector<double> fuel, tracking;  // per vehicle, tracking unweighted
  std::vector<double> increments;

  explicit MetricAccumulator(int M = 1, double b = 0.01)
      : beta(b), fuel(static_cast<std::size_t>(M), 0.0), tracking(static_cast<std::size_t>(M), 0.0) {}

  double add(const std::vector<double>& f, const std::vector<double>& t) {
    double inc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      fuel[i] += f[i];
      tracking[i] += t[i];
      inc += f[i] + beta * t[i];
    }
    increments.push_back(inc);
    total += inc;
    return inc;
  }

  [[nodiscard]] double J() const { return total; }
};

[[nodiscard]] inline double delta_J(double J_type, double J_baseline) {
  if (!(J_baseline != 0.0)) throw std::invalid_argument("delta_J: zero baseline");
  return 100.0 * (J_type - J_baseline) / J_baseline;
}

/// Successor's communicated positions: measured now, then its shifted previous
/// plan, extended by one constant-velocity step to N+1 entries.
[[nodiscard]] inline std::vector<double> behind_positions(const VehicleMemory& m, double dt) {
  const ShiftedSolution sh = shift_solution(m.plan, m.x);
  std::vector<double> p;
  p.reserve(sh.states.size() + 1);
  for (const auto& s : sh.states) p.push_back(s.p);
  p.push_back(sh.states.back().p + dt * sh.states.back().v);
  return p;
}

class PlatoonSim {
 public:
  PlatoonSim(const PlatoonConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), ref_(seed, {0.0, 0.0}, cfg.reference), metrics_(cfg.M, cfg.weights.beta) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uv(cfg_.reference.v_min, cfg_.reference.v_max);
    const double v0 = cfg_.initial_velocity >= 0 ? cfg_.initial_velocity : uv(rng);
    base_seed_ = seed;
    ref_.reset({0.0, v0});
    const DesiredTrajectory w = ref_.window(cfg_.N);
    mem_.resize(static_cast<std::size_t>(cfg_.M));
    for (int i = 0; i < cfg_.M; ++i) {
      const VehicleParams& prm = cfg_.vehicle(i);
      VehicleMemory& m = mem_[static_cast<std::size_t>(i)];
      m.x = {-cfg_.spacing * i, v0};
      m.j_prev = select_gear(prm, v0, GearSelector::high);
      m.schedule = constant_schedule(prm, m.x, GearSelector::high, cfg_.N);
      // The step-0 neighbour exchange shifts this plan as if it were made at
      // k = -1, so it starts one cruise step back.
      const VehicleState x_prev{m.x.p - prm.dt * v0, v0};
      DesiredTrajectory d = w;
      for (auto& s : d) s.p -= cfg_.spacing * i + prm.dt * v0;
      m.plan = default_guess(build_fixed_gear_ocp(prm, x_prev, m.schedule, d, {}, cfg_.weights));
    }
  }

  [[nodiscard]] const MetricAccumulator& metrics() const { return metrics_; }
  [[nodiscard]] const std::vector<VehicleMemory>& vehicles() const { return mem_; }
  [[nodiscard]] long step_count() const { return k_; }

  StepLog step() {
    StepLog log;
    log.k = k_;
    const int M = cfg_.M;
    const int N = cfg_.N;
    const DesiredTrajectory ref = ref_.window(N);
    log.reference = ref.front();
    std::vector<ControllerOutput> outs(static_cast<std::size_t>(M));
    std::vector<double> fuel(static_cast<std::size_t>(M)), track(static_cast<std::size_t>(M));
    log.vehicles.resize(static_cast<std::size_t>(M));

    for (int i = 0; i < M; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const VehicleParams& prm = cfg_.vehicle(i);
      NeighborPlans nb;
      DesiredTrajectory desired;
      if (i == 0) {
        desired = ref;
      } else {
        const OcpTrajectory& pre = outs[ii - 1].plan;
        std::vector<double> ahead;
        for (const auto& s : pre.states) {
          ahead.push_back(s.p);
          desired.push_back({s.p - cfg_.spacing, s.v});
        }
        nb.ahead = ahead;
      }
      if (i + 1 < M) nb.behind = behind_positions(mem_[ii + 1], prm.dt);

      const auto t0 = std::chrono::steady_clock::now();
      outs[ii] = control(i, prm, desired, nb);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      VehicleLog& vl = log.vehicles[ii];
      const VehicleMemory& m = mem_[ii];
      vl.vehicle = i;
      vl.x = m.x;
      vl.input = outs[ii].input;
      vl.source = outs[ii].source;
      vl.cost = outs[ii].cost;
      vl.policy_cost = outs[ii].policy_cost;
      vl.heuristic_cost = outs[ii].heuristic_cost;
      vl.solve_seconds = secs;
      vl.message = outs[ii].message;
      for (double s : outs[ii].plan.slack_ahead) vl.slack += s;
      for (double s : outs[ii].plan.slack_behind) vl.slack += s;
      // Metric target: the reference for the leader, the predecessor's actual
      // state shifted by the spacing otherwise.
      const VehicleState target = i == 0 ? ref.front()
                                         : VehicleState{mem_[ii - 1].x.p - cfg_.spacing, mem_[ii - 1].x.v};
      vl.tracking = tracking_stage_cost(m.x, target, cfg_.weights.Q);
      vl.fuel = fuel_stage_cost(prm, m.x.v, vl.input.T, vl.input.j);
      if (i > 0) vl.gap = mem_[ii - 1].x.p - m.x.p;
      fuel[ii] = vl.fuel;
      track[ii] = vl.tracking;
    }
    log.increment = metrics_.add(fuel, track);

    for (int i = 0; i < M; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const VehicleParams& prm = cfg_.vehicle(i);
      VehicleMemory& m = mem_[ii];
      const PowertrainInput& u = outs[ii].input;
      VehicleState nx = cfg_.rk4_plant ? step_continuous(prm, m.x, u) : step_dynamics(prm, m.x, u);
      if (nx.v < prm.v_min() || nx.v > prm.v_max()) {
        nx.v = std::clamp(nx.v, prm.v_min(), prm.v_max());
        log.vehicles[ii].velocity_clamped = true;
      }
      m.x = nx;
      m.j_prev = u.j;
      m.T_prev = u.T;
      m.plan = outs[ii].plan;
      m.schedule = outs[ii].schedule;
    }
    ref_.advance();
    ++k_;
    return log;
  }

 private:
  ControllerOutput control(int i, const VehicleParams& prm, const DesiredTrajectory& desired, const NeighborPlans& nb) {
    const VehicleMemory& m = mem_[static_cast<std::size_t>(i)];
    SolverConfig sc = cfg_.solver;
    sc.seed = base_seed_ * 1000003ULL + static_cast<std::uint64_t>(k_) * 131ULL + static_cast<std::uint64_t>(i);
    switch (cfg_.controller(i)) {
      case ControllerType::oracle: return oracle(m, prm, desired, nb, sc);
      case ControllerType::hc: return hc(m, prm, desired, nb, sc, cfg_.multi_start.hc);
      case ControllerType::hs: return hs(m, prm, desired, nb, sc);
      case ControllerType::hd: return hd(m, prm, desired, nb, sc);
      case ControllerType::lc: return lc(m, prm, desired, nb, sc);
    }
    throw std::logic_error("unhandled controller");
  }

  static ControllerOutput from_solution(const OcpSolution& s, GearSource src) {
    ControllerOutput o;
    o.input = {s.inputs.front().T, s.inputs.front().F, s.schedule[0]};
    o.plan = s;
    o.schedule = s.schedule;
    o.cost = s.objective;
    o.source = src;
    return o;
  }

  OcpSolution solve_for(const VehicleMemory& m, const VehicleParams& prm, const GearSchedule& sched,
                        const DesiredTrajectory& desired, const NeighborPlans& nb, int starts,
                        const SolverConfig& sc) const {
    return solve_schedule(prm, m.x, sched, desired, nb, cfg_.weights, m.T_prev, &m.plan, starts, sc);
  }

  /// Best of the three constant schedules; the first selector wins ties.
  OcpSolution best_constant(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                            const NeighborPlans& nb, const SolverConfig& sc, int starts) const {
    OcpSolution best;
    std::vector<GearSchedule> seen;
    for (GearSelector sel : kAllSelectors) {
      const GearSchedule s = constant_schedule(prm, m.x, sel, cfg_.N, cfg_.literal_mid);
      if (std::find(seen.begin(), seen.end(), s) != seen.end()) continue;
      seen.push_back(s);
      OcpSolution r = solve_for(m, prm, s, desired, nb, starts, sc);
      if (r.solved() && (!best.solved() || r.objective < best.objective)) best = std::move(r);
    }
    return best;
  }

  ControllerOutput guaranteed(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                              const NeighborPlans& nb, const SolverConfig& sc, GearSource src, int starts) const {
    OcpSolution s = best_constant(m, prm, desired, nb, sc, starts);
    if (!s.solved()) {
      // Last resort: release the torque-rate link to the previous step.
      VehicleMemory relaxed = m;
      relaxed.T_prev.reset();
      s = best_constant(relaxed, prm, desired, nb, sc, 4);
      src = GearSource::fallback;
    }
    if (!s.solved())
      throw std::runtime_error("vehicle-level controller infeasible at step " + std::to_string(k_) + ", v=" +
                               std::to_string(m.x.v) + ", no constant-gear schedule solvable");
    return from_solution(s, src);
  }

  ControllerOutput oracle(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                          const NeighborPlans& nb, const SolverConfig& sc) const {
    OracleProblem op{prm, m.x, desired, nb, cfg_.weights, m.T_prev, m.j_prev};
    OracleOptions oo = cfg_.oracle;
    oo.multi_start = cfg_.multi_start.oracle;
    oo.solver = sc;
    oo.max_horizon = std::max(oo.max_horizon, cfg_.N);
    const OracleResult r = solve_minlp(op, oo, m.plan);
    if (!r.feasible) {
      ControllerOutput o = guaranteed(m, prm, desired, nb, sc, GearSource::fallback, 1);
      o.message = "oracle found no feasible sequence";
      return o;
    }
    ControllerOutput o = from_solution(r.solution, GearSource::oracle);
    o.leaves = r.stats.leaves_solved;
    return o;
  }

  ControllerOutput hc(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                      const NeighborPlans& nb, const SolverConfig& sc, int starts) const {
    return guaranteed(m, prm, desired, nb, sc, GearSource::heuristic, starts);
  }

  ControllerOutput hs(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                      const NeighborPlans& nb, const SolverConfig& sc) const {
    const GearSchedule s = hs_schedule(prm, m.schedule, m.plan.states.back().v);
    const OcpSolution r = solve_for(m, prm, s, desired, nb, cfg_.multi_start.hs, sc);
    if (r.solved()) return from_solution(r, GearSource::heuristic);
    ControllerOutput o = guaranteed(m, prm, desired, nb, sc, GearSource::fallback, 1);
    o.message = "shifted schedule infeasible: " + r.message;
    return o;
  }

  ControllerOutput hd(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                      const NeighborPlans& nb, const SolverConfig& sc) const {
    HdOptions ho;
    ho.multi_start = cfg_.multi_start.hd;
    ho.seed = sc.seed;
    ho.solver = sc;
    const HdResult r = hd_control(prm, m.x, desired, nb, cfg_.weights, m.j_prev, m.T_prev, ho);
    if (!r.ok) throw std::runtime_error("decoupled controller failed at step " + std::to_string(k_) + ": " + r.message);
    ControllerOutput o;
    o.input = r.input;
    o.plan = r.plan;
    o.schedule.gears.assign(static_cast<std::size_t>(cfg_.N), r.input.j);
    o.cost = r.objective;
    o.source = GearSource::decoupled;
    o.message = r.message;
    return o;
  }

  ControllerOutput lc(const VehicleMemory& m, const VehicleParams& prm, const DesiredTrajectory& desired,
                      const NeighborPlans& nb, const SolverConfig& sc) const {
    const PolicyState s = make_policy_state(m.plan, m.schedule, m.x, desired, m.j_prev);
    const GearSchedule ps = policy_schedule(prm, *cfg_.policy, s, cfg_.features);
    const OcpSolution pol = solve_for(m, prm, ps, desired, nb, cfg_.multi_start.lc, sc);
    const OcpSolution heu = best_constant(m, prm, desired, nb, sc, cfg_.multi_start.lc);
    const double J1 = pol.solved() ? pol.objective : kInfCost;
    const double J2 = heu.solved() ? heu.objective : kInfCost;
    ControllerOutput o;
    if (J1 < J2) {
      o = from_solution(pol, GearSource::policy);
    } else if (heu.solved()) {
      o = from_solution(heu, GearSource::heuristic);
      if (cfg_.literal_else_branch && pol.solved()) {
        // Policy inputs with the heuristic first gear.
        o.input = {pol.inputs.front().T, pol.inputs.front().F, heu.schedule[0]};
        o.literal_branch = true;
      }
    } else {
      o = guaranteed(m, prm, desired, nb, sc, GearSource::fallback, 4);
    }
    o.policy_cost = J1;
    o.heuristic_cost = J2;
    return o;
  }

  PlatoonConfig cfg_;
  ReferenceGenerator ref_;
  MetricAccumulator metrics_;
  std::vector<VehicleMemory> mem_;
  std::uint64_t base_seed_ = 0;
  long k_ = 0;
};

struct EpisodeResult {
  MetricAccumulator metrics;
  std::vector<StepLog> logs;
};

[[nodiscard]] inline EpisodeResult run_episode(const PlatoonConfig& cfg, std::uint64_t seed, long K) {
  PlatoonSim sim(cfg, seed);
  EpisodeResult r;
  r.logs.reserve(static_cast<std::size_t>(K));
  for (long k = 0; k < K; ++k) r.logs.push_back(sim.step());
  r.metrics = sim.metrics();
  return r;
}

// ---------------------------------------------------------------------------
// Output

/// Deterministic per-vehicle time series; wall times are kept out.
inline std::string episode_csv(const EpisodeResult& r) {
  std::ostringstream o;
  o << "k,vehicle,p,v,T,F,gear,source,cost,policy_cost,heuristic_cost,slack,tracking,fuel,gap,p_ref,v_ref,"
       "velocity_clamped,increment\n";
  for (const StepLog& s : r.logs)
    for (const VehicleLog& v : s.vehicles)
      o << s.k << ',' << v.vehicle << ',' << fmt_double(v.x.p) << ',' << fmt_double(v.x.v) << ','
        << fmt_double(v.input.T) << ',' << fmt_double(v.input.F) << ',' << v.input.j << ',' << to_string(v.source)
        << ',' << fmt_double(v.cost) << ',' << fmt_double(v.policy_cost) << ',' << fmt_double(v.heuristic_cost)
        << ',' << fmt_double(v.slack) << ',' << fmt_double(v.tracking) << ',' << fmt_double(v.fuel) << ','
        << fmt_double(v.gap) << ',' << fmt_double(s.reference.p) << ',' << fmt_double(s.reference.v) << ','
        << int(v.velocity_clamped) << ',' << fmt_double(s.increment) << '\n';
  return o.str();
}

/// Platoon solve time per step: the sum over vehicles.
[[nodiscard]] inline std::vector<double> step_solve_times(const EpisodeResult& r) {
  std::vector<double> t;
  for (const StepLog& s : r.logs) {
    double sum = 0.0;
    for (const VehicleLog& v : s.vehicles) sum += v.solve_seconds;
    t.push_back(sum);
  }
  return t;
}

struct SummaryStats {
  double mean = 0, stddev = 0, median = 0, min = 0, max = 0;
  std::size_t count = 0;
};

[[nodiscard]] inline SummaryStats summarize(std::vector<double> x) {
  SummaryStats s;
  s.count = x.size();
  if (x.empty()) return s;
  std::sort(x.begin(), x.end());
  s.min = x.front();
  s.max = x.back();
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const std::size_t n = x.size();
  s.median = n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
  if (n > 1) {
    double ss = 0;
    for (double v : x) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  return s;
}

[[nodiscard]] inline double percentile(std::vector<double> x, double q) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline nlohmann::json to_json(const SummaryStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"median", s.median}, {"min", s.min}, {"max", s.max}, {"count", s.count}};
}

// ---------------------------------------------------------------------------
// Controller comparison

struct EvaluationEntry {
  std::string label;
  ControllerType type = ControllerType::hc;
  std::shared_ptr<const RnnModel> policy;
};

struct EvaluationResult {
  std::vector<std::string> labels;
  std::vector<std::uint64_t> seeds;
  std::string baseline;
  std::vector<std::vector<double>> J;            // [entry][seed]
  std::vector<std::vector<double>> delta;        // percent against the baseline
  std::vector<std::vector<double>> solve_times;  // per platoon step, all seeds pooled

  [[nodiscard]] std::size_t index(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw std::out_of_range("no controller labelled " + label);
    return static_cast<std::size_t>(it - labels.begin());
  }
  [[nodiscard]] SummaryStats delta_stats(const std::string& label) const { return summarize(delta[index(label)]); }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["baseline"] = baseline;
    j["seeds"] = seeds;
    for (std::size_t e = 0; e < labels.size(); ++e) {
      nlohmann::json c;
      c["J"] = J[e];
      c["delta_J"] = delta[e];
      c["delta_J_stats"] = platoon::to_json(summarize(delta[e]));
      c["solve_time_s"] = {{"p50", percentile(solve_times[e], 0.5)},
                           {"p90", percentile(solve_times[e], 0.9)},
                           {"p99", percentile(solve_times[e], 0.99)},
                           {"max", percentile(solve_times[e], 1.0)}};
      j["controllers"][labels[e]] = c;
    }
    return j;
  }
};

/// Runs every entry on every seed with the same platoon configuration and
/// reports relative cost increases against the baseline entry.
[[nodiscard]] inline EvaluationResult evaluate(
    const PlatoonConfig& base, const std::vector<EvaluationEntry>& entries, const std::vector<std::uint64_t>& seeds,
    long K, const std::string& baseline,
    const std::function<void(const EvaluationEntry&, std::uint64_t, const EpisodeResult&)>& on_episode = {}) {
  EvaluationResult res;
  res.seeds = seeds;
  res.baseline = baseline;
  for (const auto& e : entries) res.labels.push_back(e.label);
  const std::size_t b = res.index(baseline);
  res.J.assign(entries.size(), {});
  res.delta.assign(entries.size(), {});
  res.solve_times.assign(entries.size(), {});
  for (std::size_t e = 0; e < entries.size(); ++e) {
    PlatoonConfig cfg = base;
    cfg.controllers = {entries[e].type};
    cfg.policy = entries[e].policy;
    for (std::uint64_t seed : seeds) {
      const EpisodeResult r = run_episode(cfg, seed, K);
      res.J[e].push_back(r.metrics.J());
      const auto t = step_solve_times(r);
      res.solve_times[e].insert(res.solve_times[e].end(), t.begin(), t.end());
      if (on_episode) on_episode(entries[e], seed, r);
    }
  }
  for (std::size_t e = 0; e < entries.size(); ++e)
    for (std::size_t s = 0; s < seeds.size(); ++s) res.delta[e].push_back(delta_J(res.J[e][s], res.J[b][s]));
  return res;
}

}  // namespace platoon
