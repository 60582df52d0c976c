#pragma once

// Single-vehicle training of the gear policy with decoupled DQN: epsilon-greedy
// shift sequences, a FIFO replay buffer, a smooth-L1 TD loss summed over the
// window, Adam, and target blending. Stage 1 penalizes infeasible schedules;
// stage 2 rewards beating the constant heuristic.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/gear_heuristics.hpp"
#include "platoon/gear_policy.hpp"
#include "platoon/nlp_solver.hpp"
#include "platoon/ocp.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

// ---------------------------------------------------------------------------
// Exploration

struct ExplorationSchedule {
  double start = 0.99;
  double rate = 2.76e-6;
  // When set, the rate is chosen so that epsilon reaches `target` after
  // `budget` steps instead of using `rate`.
  bool rescale = true;
  double target = 0.05;
  long budget = 0;
  long offset = 0;  // added to k, e.g. to continue a schedule across stages

  [[nodiscard]] double effective_rate() const {
    if (rescale && budget > 0) return std::log(start / target) / static_cast<double>(budget);
    return rate;
  }
};

[[nodiscard]] inline double epsilon(long k, const ExplorationSchedule& e) {
  if (k < 0) throw std::invalid_argument("epsilon: negative step");
  return std::clamp(e.start * std::exp(-e.effective_rate() * static_cast<double>(k + e.offset)), 0.0, 1.0);
}

/// Paper-constant schedule.
[[nodiscard]] inline double epsilon(long k) {
  ExplorationSchedule e;
  e.rescale = false;
  return epsilon(k, e);
}

struct ActResult {
  ShiftAction shifts;
  bool explored = false;
};

[[nodiscard]] inline ActResult act(const VehicleParams& prm, const PolicyState& s, double eps, const RnnModel& model,
                                   std::mt19937_64& rng, const FeatureOptions& fo = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ActResult r;
  if (u(rng) < eps) {
    std::uniform_int_distribution<int> pick(-1, 1);
    r.shifts.resize(static_cast<std::size_t>(s.N()));
    for (Shift& a : r.shifts) a = pick(rng);
    r.explored = true;
    return r;
  }
  r.shifts = greedy_shifts(policy_scores(prm, model, s, fo));
  return r;
}

// ---------------------------------------------------------------------------
// Replay

struct Transition {
  PolicyState s;
  ShiftAction a;
  double cost = 0.0;
  PolicyState s_next;
  bool terminal = false;
  // Components of the cost, kept so the stored value can be audited.
  double tracking = 0.0;
  double fuel = 0.0;
  int kappa = 0;
  Eigen::MatrixXd features;       // kFeatureDim x N
  Eigen::MatrixXd features_next;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  /// i-th oldest transition.
  [[nodiscard]] const Transition& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  /// Uniform sampling with replacement.
  [[nodiscard]] std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const {
    std::vector<const Transition*> out;
    if (data_.empty()) return out;
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&data_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

// ---------------------------------------------------------------------------
// Loss and optimizer

enum class QOrientation {
  cost_to_go,  // scores are negated scaled cost-to-go; argmax picks the cheapest shift
  literal,     // the literal target: cost plus discounted max
};

/// Smooth L1 with transition point delta.
[[nodiscard]] inline double smooth_l1(double r, double delta = 1.0) {
  const double a = std::abs(r);
  return a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
}

[[nodiscard]] inline double smooth_l1_grad(double r, double delta = 1.0) { return std::clamp(r / delta, -1.0, 1.0); }

struct TdOptions {
  double gamma = 0.9;
  double cost_scale = 1e-3;
  double huber_delta = 1.0;
  QOrientation orientation = QOrientation::cost_to_go;
};

struct TdLoss {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Summed TD loss over batch and window steps and its gradient in the online
/// parameters. Hidden states come from forward passes along each sequence.
[[nodiscard]] inline TdLoss td_loss(const std::vector<const Transition*>& batch, const RnnModel& model,
                                    const RnnModel& target, const TdOptions& opt) {
  TdLoss out;
  if (batch.empty()) {
    out.gradient.assign(model.size(), 0.0);
    return out;
  }
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index N = batch.front()->features.cols();
  std::vector<Eigen::MatrixXd> X(static_cast<std::size_t>(N), Eigen::MatrixXd(kFeatureDim, B));
  std::vector<Eigen::MatrixXd> Xn = X;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Transition& tr = *batch[static_cast<std::size_t>(b)];
    if (tr.features.cols() != N || tr.features_next.cols() != N)
      throw std::invalid_argument("td_loss: mixed horizons in one batch");
    for (Eigen::Index t = 0; t < N; ++t) {
      X[static_cast<std::size_t>(t)].col(b) = tr.features.col(t);
      Xn[static_cast<std::size_t>(t)].col(b) = tr.features_next.col(t);
    }
  }
  RnnModel::Cache cache;
  const std::vector<Eigen::MatrixXd> q = model.forward(X, &cache);
  const std::vector<Eigen::MatrixXd> qn = target.forward(Xn);
  std::vector<Eigen::MatrixXd> dq(static_cast<std::size_t>(N), Eigen::MatrixXd::Zero(kNumShifts, B));
  const double sign = opt.orientation == QOrientation::cost_to_go ? -1.0 : 1.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const Transition& tr = *batch[static_cast<std::size_t>(b)];
    const double c = sign * opt.cost_scale * tr.cost;
    for (Eigen::Index t = 0; t < N; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      const double boot = tr.terminal ? 0.0 : qn[ti].col(b).maxCoeff();
      const int a = tr.a[ti] + 1;
      const double r = c + opt.gamma * boot - q[ti](a, b);
      out.loss += smooth_l1(r, opt.huber_delta);
      dq[ti](a, b) = -smooth_l1_grad(r, opt.huber_delta);
    }
  }
  out.gradient = model.backward(cache, dq);
  return out;
}

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<double> m, v;

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    if (m.size() != theta.size()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/// One gradient step on a batch; returns the loss before the step.
inline double td_update(const std::vector<const Transition*>& batch, RnnModel& model, const RnnModel& target,
                        Adam& adam, const TdOptions& opt) {
  if (batch.empty()) return 0.0;
  const TdLoss l = td_loss(batch, model, target, opt);
  adam.step(model.params(), l.gradient);
  return l.loss;
}

/// target <- nu * model + (1 - nu) * target
inline void blend_target(const RnnModel& model, RnnModel& target, double nu) {
  if (!(nu > 0.0 && nu <= 1.0)) throw std::invalid_argument("blend factor must lie in (0, 1]");
  if (!(model.config() == target.config())) throw std::invalid_argument("blend_target: shape mismatch");
  auto& t = target.params();
  const auto& s = model.params();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = nu * s[i] + (1.0 - nu) * t[i];
}

// ---------------------------------------------------------------------------
// Random reference

struct ReferenceConfig {
  double change_probability = 1.0 / 20.0;
  double accel_min = -3.0;
  double accel_max = 3.0;
  double v_min = 5.0;
  double v_max = 28.0;
  double dt = 1.0;
};

/// Streaming reference: piecewise-constant acceleration redrawn at random
/// instants, velocity clipped, position integrating the clipped velocity.
class ReferenceGenerator {
 public:
  ReferenceGenerator(std::uint64_t seed, const VehicleState& start, const ReferenceConfig& cfg = {})
      : cfg_(cfg), rng_(seed) {
    reset(start);
  }

  /// Restart from a state, keeping the random stream and current acceleration.
  void reset(const VehicleState& start) {
    ahead_.clear();
    ahead_.push_back({start.p, std::clamp(start.v, cfg_.v_min, cfg_.v_max)});
  }

  [[nodiscard]] VehicleState current() const { return ahead_.front(); }

  /// Current state and the next N, N+1 in total.
  [[nodiscard]] DesiredTrajectory window(int N) {
    while (static_cast<int>(ahead_.size()) < N + 1) generate();
    return {ahead_.begin(), ahead_.begin() + (N + 1)};
  }

  void advance() {
    if (ahead_.size() < 2) generate();
    ahead_.pop_front();
  }

  [[nodiscard]] long changes() const { return changes_; }
  [[nodiscard]] long draws() const { return draws_; }

  [[nodiscard]] nlohmann::json to_json() const {
    std::ostringstream r;
    r << rng_;
    nlohmann::json j;
    j["rng"] = r.str();
    j["accel"] = accel_;
    j["changes"] = changes_;
    j["draws"] = draws_;
    for (const auto& x : ahead_) j["ahead"].push_back({x.p, x.v});
    return j;
  }

  void from_json(const nlohmann::json& j) {
    std::istringstream r(j.at("rng").get<std::string>());
    r >> rng_;
    accel_ = j.at("accel");
    changes_ = j.at("changes");
    draws_ = j.at("draws");
    ahead_.clear();
    for (const auto& x : j.at("ahead")) ahead_.push_back({x[0], x[1]});
  }

 private:
  void generate() {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> acc(cfg_.accel_min, cfg_.accel_max);
    ++draws_;
    if (u(rng_) < cfg_.change_probability) {
      accel_ = acc(rng_);
      ++changes_;
    }
    const VehicleState& x = ahead_.back();
    ahead_.push_back({x.p + cfg_.dt * x.v, std::clamp(x.v + cfg_.dt * accel_, cfg_.v_min, cfg_.v_max)});
  }

  ReferenceConfig cfg_;
  std::mt19937_64 rng_;
  std::deque<VehicleState> ahead_;
  double accel_ = 0.0;
  long changes_ = 0;
  long draws_ = 0;
};

/// length+1 reference states starting at `start`.
[[nodiscard]] inline DesiredTrajectory reference_generator(std::uint64_t seed, int length, const VehicleState& start,
                                                           const ReferenceConfig& cfg = {}) {
  ReferenceGenerator g(seed, start, cfg);
  return g.window(length);
}

// ---------------------------------------------------------------------------
// Stage cost and shaping indicators

/// beta * tracking + fuel with the shaping term: +e1*kappa in stage 1 and
/// -e2*kappa in stage 2. With literal_sign the term is always -e*kappa.
[[nodiscard]] inline double stage_cost(double beta, double tracking, double fuel, int stage, int kappa, double e,
                                       bool literal_sign = false) {
  if (kappa != 0 && kappa != 1) throw std::invalid_argument("kappa must be 0 or 1");
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  const double shaped = literal_sign ? -e * kappa : (stage == 1 ? e * kappa : -e * kappa);
  return beta * tracking + fuel + shaped;
}

[[nodiscard]] inline int kappa1(const OcpSolution& policy) { return policy.solved() ? 0 : 1; }

struct Kappa2 {
  int kappa = 0;
  bool policy_applied = false;
};

/// kappa2 = 1 iff the policy cost does not exceed the heuristic cost.
[[nodiscard]] inline Kappa2 kappa2(double policy_cost, double heuristic_cost) {
  Kappa2 k;
  k.kappa = (std::isfinite(policy_cost) && policy_cost <= heuristic_cost) ? 1 : 0;
  k.policy_applied = k.kappa == 1;
  return k;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainerConfig {
  int stage = 1;
  long steps = 20000;
  int horizon = 6;
  double gamma = 0.9;
  double learning_rate = 1e-3;
  double blend = 1e-3;
  ExplorationSchedule exploration;
  int batch_size = 128;
  std::size_t buffer_capacity = 100000;
  long min_buffer = 128;
  double e1 = 1e4;
  double e2 = 100.0;
  double huber_delta = 1.0;
  double cost_scale = 1e-3;
  QOrientation orientation = QOrientation::cost_to_go;
  bool terminal_on_reset = false;
  double reset_threshold = 100.0;
  GearSelector heuristic = GearSelector::high;
  std::uint64_t seed = 1;
  RnnConfig network;
  FeatureOptions features;
  OcpWeights weights;
  SolverConfig solver;
  ReferenceConfig reference;
  double initial_velocity = -1.0;  // negative: drawn from the reference range

  void validate() const {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(blend > 0.0 && blend <= 1.0)) throw std::invalid_argument("blend must lie in (0, 1]");
    if (!(exploration.start >= 0.0 && exploration.start <= 1.0))
      throw std::invalid_argument("epsilon must lie in [0, 1]");
    if (horizon < 2) throw std::invalid_argument("horizon must be at least 2");
    if (batch_size < 1 || steps < 0) throw std::invalid_argument("invalid batch size or step budget");
    if (network.input != kFeatureDim) throw std::invalid_argument("network input must have 8 features");
  }

  [[nodiscard]] TdOptions td() const { return {gamma, cost_scale, huber_delta, orientation}; }
};

enum class InputSource { policy, heuristic, fallback };

inline const char* to_string(InputSource s) {
  switch (s) {
    case InputSource::policy: return "policy";
    case InputSource::heuristic: return "heuristic";
    case InputSource::fallback: return "fallback";
  }
  return "?";
}

struct StepMetrics {
  long k = 0;
  double cost = 0.0;          // L under the stage's sign rule
  double cost_literal = 0.0;  // L with -e*kappa
  int kappa = 0;
  double tracking_error = 0.0;  // |p - p_ref|
  double tracking = 0.0;        // quadratic tracking term
  double fuel = 0.0;
  double epsilon = 0.0;
  double loss = 0.0;
  bool explored = false;
  bool reset = false;
  InputSource source = InputSource::policy;
  double policy_cost = kInfCost;
  double heuristic_cost = kInfCost;
  GearSchedule schedule;
  Gear gear = 1;
};

inline std::string metrics_csv_header() {
  return "k,cost,cost_literal,kappa,tracking_error,tracking,fuel,epsilon,loss,explored,reset,source,policy_cost,"
         "heuristic_cost,gear,schedule";
}

inline std::string fmt_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string metrics_csv_row(const StepMetrics& m) {
  std::ostringstream o;
  std::string sched;
  for (Gear g : m.schedule.gears) sched += std::to_string(g);
  o << m.k << ',' << fmt_double(m.cost) << ',' << fmt_double(m.cost_literal) << ',' << m.kappa << ','
    << fmt_double(m.tracking_error) << ',' << fmt_double(m.tracking) << ',' << fmt_double(m.fuel) << ','
    << fmt_double(m.epsilon) << ',' << fmt_double(m.loss) << ',' << int(m.explored) << ',' << int(m.reset) << ','
    << to_string(m.source) << ',' << fmt_double(m.policy_cost) << ',' << fmt_double(m.heuristic_cost) << ','
    << m.gear << ',' << sched;
  return o.str();
}

class Trainer {
 public:
  Trainer(const VehicleParams& prm, const TrainerConfig& cfg, const std::optional<RnnModel>& init = std::nullopt)
      : prm_(prm), cfg_(cfg), model_(cfg.network), target_(cfg.network), buffer_(cfg.buffer_capacity), rng_(cfg.seed),
        ref_(cfg.seed ^ 0x9e3779b97f4a7c15ULL, {0.0, 0.0}, cfg.reference) {
    cfg_.validate();
    const EquilibriumReport pre = verify_equilibrium_condition(prm_);
    if (!pre.pass) throw std::runtime_error("equilibrium precondition fails; the heuristic fallback is not guaranteed:\n" +
                                            pre.str());
    if (cfg_.exploration.rescale && cfg_.exploration.budget == 0) cfg_.exploration.budget = cfg_.steps;
    if (init) {
      if (!(init->config() == cfg_.network)) throw std::invalid_argument("initial weights do not match the network shape");
      model_ = *init;
    } else {
      model_.init_random(cfg_.seed);
    }
    target_ = model_;
    adam_.lr = cfg_.learning_rate;

    std::uniform_real_distribution<double> uv(cfg_.reference.v_min, cfg_.reference.v_max);
    const double v0 = cfg_.initial_velocity >= 0 ? cfg_.initial_velocity : uv(rng_);
    x_ = {0.0, v0};
    ref_.reset(x_);
    const DesiredTrajectory w = ref_.window(cfg_.horizon);
    j_prev_ = select_gear(prm_, x_.v, GearSelector::high);
    schedule_ = constant_schedule(prm_, x_, GearSelector::high, cfg_.horizon);
    FixedGearOcp boot = build_fixed_gear_ocp(prm_, x_, schedule_, w, {}, cfg_.weights);
    plan_ = default_guess(boot);
  }

  [[nodiscard]] const RnnModel& model() const { return model_; }
  [[nodiscard]] const RnnModel& target() const { return target_; }
  [[nodiscard]] const ReplayBuffer& buffer() const { return buffer_; }
  [[nodiscard]] const TrainerConfig& config() const { return cfg_; }
  [[nodiscard]] long step_count() const { return k_; }
  [[nodiscard]] const VehicleState& state() const { return x_; }

  [[nodiscard]] PolicyState current_state() {
    return make_policy_state(plan_, schedule_, x_, ref_.window(cfg_.horizon), j_prev_);
  }

  StepMetrics step() {
    StepMetrics m;
    m.k = k_;
    const int N = cfg_.horizon;
    const DesiredTrajectory w = ref_.window(N);
    const PolicyState s = make_policy_state(plan_, schedule_, x_, w, j_prev_);
    m.epsilon = epsilon(k_, cfg_.exploration);
    const ActResult a = act(prm_, s, m.epsilon, model_, rng_, cfg_.features);
    m.explored = a.explored;
    const GearSchedule sched = chain_gears(prm_, j_prev_, a.shifts);

    const OcpSolution pol = solve_schedule(prm_, x_, sched, w, {}, cfg_.weights, T_prev_, &plan_, 1, cfg_.solver);
    m.policy_cost = pol.objective;
    const OcpSolution* applied = nullptr;
    OcpSolution heur;
    if (cfg_.stage == 1) {
      m.kappa = kappa1(pol);
      if (m.kappa == 0) {
        applied = &pol;
        m.source = InputSource::policy;
      } else {
        heur = fallback(w, m.source);
        m.heuristic_cost = heur.objective;
        applied = &heur;
      }
    } else {
      const GearSchedule hs = constant_schedule(prm_, x_, cfg_.heuristic, N);
      if (hs == sched) {
        heur = pol;
      } else {
        heur = solve_schedule(prm_, x_, hs, w, {}, cfg_.weights, T_prev_, &plan_, 1, cfg_.solver);
      }
      m.heuristic_cost = heur.objective;
      const Kappa2 k2 = kappa2(pol.objective, heur.objective);
      m.kappa = k2.kappa;
      if (k2.policy_applied) {
        applied = &pol;
        m.source = InputSource::policy;
      } else if (heur.solved()) {
        applied = &heur;
        m.source = InputSource::heuristic;
      } else {
        heur = fallback(w, m.source);
        applied = &heur;
      }
    }

    const ContinuousInput u = applied->inputs.front();
    const Gear j0 = applied->schedule[0];
    m.schedule = applied->schedule;
    m.gear = j0;
    const VehicleState ref_now = w.front();
    m.tracking = tracking_stage_cost(x_, ref_now, cfg_.weights.Q);
    m.tracking_error = std::abs(x_.p - ref_now.p);
    m.fuel = fuel_stage_cost(prm_, x_.v, u.T, j0);
    const double e = cfg_.stage == 1 ? cfg_.e1 : cfg_.e2;
    m.cost = stage_cost(cfg_.weights.beta, m.tracking, m.fuel, cfg_.stage, m.kappa, e);
    m.cost_literal = stage_cost(cfg_.weights.beta, m.tracking, m.fuel, cfg_.stage, m.kappa, e, true);

    x_ = step_dynamics(prm_, x_, {u.T, u.F, j0});
    j_prev_ = j0;
    T_prev_ = u.T;
    plan_ = *applied;
    schedule_ = applied->schedule;
    ref_.advance();
    if (std::abs(x_.p - ref_.current().p) > cfg_.reset_threshold) {
      ref_.reset(x_);
      m.reset = true;
    }

    Transition tr;
    tr.s = s;
    tr.a = a.shifts;
    tr.cost = m.cost;
    tr.s_next = make_policy_state(plan_, schedule_, x_, ref_.window(N), j_prev_);
    tr.terminal = cfg_.terminal_on_reset && m.reset;
    tr.tracking = m.tracking;
    tr.fuel = m.fuel;
    tr.kappa = m.kappa;
    tr.features = featurize_state(prm_, tr.s, cfg_.features);
    tr.features_next = featurize_state(prm_, tr.s_next, cfg_.features);
    buffer_.push(std::move(tr));

    if (static_cast<long>(buffer_.size()) >= std::max<long>(1, cfg_.min_buffer)) {
      const auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
      m.loss = td_update(batch, model_, target_, adam_, cfg_.td());
      blend_target(model_, target_, cfg_.blend);
    }
    ++k_;
    return m;
  }

  /// Runs the remaining step budget.
  std::vector<StepMetrics> run(const std::function<void(const StepMetrics&)>& on_step = {}) {
    std::vector<StepMetrics> out;
    while (k_ < cfg_.steps) {
      out.push_back(step());
      if (on_step) on_step(out.back());
    }
    return out;
  }

  // -- snapshots ------------------------------------------------------------

  void save_snapshot(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_checkpoint(model_, (fs::path(dir) / "model.ckpt").string());
    save_checkpoint(target_, (fs::path(dir) / "target.ckpt").string());
    nlohmann::json j;
    std::ostringstream r;
    r << rng_;
    j["version"] = 1;
    j["k"] = k_;
    j["rng"] = r.str();
    j["x"] = {x_.p, x_.v};
    j["j_prev"] = j_prev_;
    j["T_prev"] = T_prev_ ? nlohmann::json(*T_prev_) : nlohmann::json();
    j["plan"] = trajectory_to_json(plan_);
    j["schedule"] = schedule_.gears;
    j["reference"] = ref_.to_json();
    j["adam"] = {{"t", adam_.t}, {"m", adam_.m}, {"v", adam_.v}};
    std::ofstream(fs::path(dir) / "trainer.json") << j.dump() << '\n';
    std::ofstream buf(fs::path(dir) / "buffer.bin", std::ios::binary);
    write_buffer(buf);
  }

  void load_snapshot(const std::string& dir) {
    namespace fs = std::filesystem;
    model_ = load_checkpoint((fs::path(dir) / "model.ckpt").string());
    target_ = load_checkpoint((fs::path(dir) / "target.ckpt").string());
    if (!(model_.config() == cfg_.network)) throw std::runtime_error("snapshot network shape differs from the config");
    std::ifstream in(fs::path(dir) / "trainer.json");
    if (!in) throw std::runtime_error("snapshot has no trainer.json");
    const nlohmann::json j = nlohmann::json::parse(in);
    k_ = j.at("k");
    std::istringstream r(j.at("rng").get<std::string>());
    r >> rng_;
    x_ = {j["x"][0], j["x"][1]};
    j_prev_ = j.at("j_prev");
    T_prev_ = j["T_prev"].is_null() ? std::nullopt : std::optional<double>(j["T_prev"].get<double>());
    plan_ = trajectory_from_json(j.at("plan"));
    schedule_.gears = j.at("schedule").get<std::vector<Gear>>();
    ref_.from_json(j.at("reference"));
    adam_.t = j["adam"]["t"];
    adam_.m = j["adam"]["m"].get<std::vector<double>>();
    adam_.v = j["adam"]["v"].get<std::vector<double>>();
    std::ifstream buf(fs::path(dir) / "buffer.bin", std::ios::binary);
    if (!buf) throw std::runtime_error("snapshot has no buffer.bin");
    read_buffer(buf);
  }

 private:
  static OcpTrajectory trajectory_from_json(const nlohmann::json& j) {
    OcpTrajectory t;
    for (std::size_t i = 0; i < j.at("p").size(); ++i) t.states.push_back({j["p"][i], j["v"][i]});
    for (std::size_t i = 0; i < j.at("T").size(); ++i) t.inputs.push_back({j["T"][i], j["F"][i]});
    t.slack_ahead = j.at("slack_ahead").get<std::vector<double>>();
    t.slack_behind = j.at("slack_behind").get<std::vector<double>>();
    return t;
  }

  /// Heuristic input when the preferred schedule cannot be used. Tries the
  /// configured selector, then the other two, then drops the torque-rate link
  /// to the previous step. Never returns an unsolved problem.
  OcpSolution fallback(const DesiredTrajectory& w, InputSource& source) {
    std::vector<GearSelector> order{cfg_.heuristic};
    for (GearSelector s : kAllSelectors)
      if (s != cfg_.heuristic) order.push_back(s);
    for (int relax = 0; relax < 2; ++relax) {
      for (GearSelector sel : order) {
        const GearSchedule hs = constant_schedule(prm_, x_, sel, cfg_.horizon);
        const std::optional<double> tp = relax ? std::nullopt : T_prev_;
        OcpSolution s = solve_schedule(prm_, x_, hs, w, {}, cfg_.weights, tp, &plan_, 1 + relax * 3, cfg_.solver);
        if (s.solved()) {
          source = (relax == 0 && sel == cfg_.heuristic) ? InputSource::heuristic : InputSource::fallback;
          return s;
        }
      }
    }
    throw std::runtime_error("no constant-gear schedule is solvable at v=" + std::to_string(x_.v) + "; step " +
                             std::to_string(k_));
  }

  template <class T>
  static void put(std::ostream& o, const T& x) {
    o.write(reinterpret_cast<const char*>(&x), sizeof x);
  }
  template <class T>
  static T get(std::istream& i) {
    T x{};
    i.read(reinterpret_cast<char*>(&x), sizeof x);
    if (!i) throw std::runtime_error("replay snapshot truncated");
    return x;
  }

  static void put_state(std::ostream& o, const PolicyState& s) {
    put<std::int32_t>(o, s.N());
    for (const auto& x : s.x) put(o, x.p), put(o, x.v);
    for (const auto& u : s.mu) put(o, u.T), put(o, u.F);
    put<std::int32_t>(o, static_cast<std::int32_t>(s.desired.size()));
    for (const auto& x : s.desired) put(o, x.p), put(o, x.v);
    for (Gear g : s.gears.gears) put<std::int32_t>(o, g);
    put<std::int32_t>(o, s.applied_gear);
  }

  static PolicyState get_state(std::istream& i) {
    PolicyState s;
    const auto N = static_cast<std::size_t>(get<std::int32_t>(i));
    s.x.resize(N);
    s.mu.resize(N);
    for (auto& x : s.x) x.p = get<double>(i), x.v = get<double>(i);
    for (auto& u : s.mu) u.T = get<double>(i), u.F = get<double>(i);
    s.desired.resize(static_cast<std::size_t>(get<std::int32_t>(i)));
    for (auto& x : s.desired) x.p = get<double>(i), x.v = get<double>(i);
    s.gears.gears.resize(N);
    for (Gear& g : s.gears.gears) g = get<std::int32_t>(i);
    s.applied_gear = get<std::int32_t>(i);
    return s;
  }

  void write_buffer(std::ostream& o) const {
    o.write("PRB1", 4);
    put<std::uint64_t>(o, buffer_.size());
    for (std::size_t n = 0; n < buffer_.size(); ++n) {
      const Transition& t = buffer_.at(n);
      put_state(o, t.s);
      for (Shift a : t.a) put<std::int32_t>(o, a);
      put(o, t.cost), put(o, t.tracking), put(o, t.fuel);
      put<std::int32_t>(o, t.kappa);
      put<std::int32_t>(o, t.terminal);
      put_state(o, t.s_next);
    }
  }

  void read_buffer(std::istream& i) {
    char magic[4];
    i.read(magic, 4);
    if (!i || std::string(magic, 4) != "PRB1") throw std::runtime_error("not a replay snapshot");
    const auto n = get<std::uint64_t>(i);
    buffer_ = ReplayBuffer(cfg_.buffer_capacity);
    for (std::uint64_t c = 0; c < n; ++c) {
      Transition t;
      t.s = get_state(i);
      t.a.resize(static_cast<std::size_t>(t.s.N()));
      for (Shift& a : t.a) a = get<std::int32_t>(i);
      t.cost = get<double>(i), t.tracking = get<double>(i), t.fuel = get<double>(i);
      t.kappa = get<std::int32_t>(i);
      t.terminal = get<std::int32_t>(i) != 0;
      t.s_next = get_state(i);
      t.features = featurize_state(prm_, t.s, cfg_.features);
      t.features_next = featurize_state(prm_, t.s_next, cfg_.features);
      buffer_.push(std::move(t));
    }
  }

  VehicleParams prm_;
  TrainerConfig cfg_;
  RnnModel model_, target_;
  ReplayBuffer buffer_;
  Adam adam_;
  std::mt19937_64 rng_;
  ReferenceGenerator ref_;
  long k_ = 0;
  VehicleState x_;
  Gear j_prev_ = 1;
  std::optional<double> T_prev_;
  OcpTrajectory plan_;
  GearSchedule schedule_;
};

}  // namespace platoon
