#pragma once

// Recurrent gear-shift-schedule policy.
//
// Along the MPC window the network reads one feature vector per step and
// emits three scores (down, keep, up). The scores double as decoupled
// action values: the value of shift a at step tau is score a+2. Shifts are
// chained from the previously applied gear with clipping to the gear range.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/ocp.hpp"
#include "platoon/vehicle_model.hpp"

namespace platoon {

using Shift = int;  // -1, 0, +1
using ShiftAction = std::vector<Shift>;

inline constexpr int kFeatureDim = 8;
inline constexpr int kNumShifts = 3;

struct PolicyState {
  std::vector<VehicleState> x;         // shifted states, N
  std::vector<ContinuousInput> mu;     // shifted inputs, N
  std::vector<VehicleState> desired;   // N+1 (first N are read)
  GearSchedule gears;                  // shifted gears, N
  Gear applied_gear = 1;               // j(0|k-1)

  [[nodiscard]] int N() const { return gears.size(); }
};

struct FeatureOptions {
  // Scale every feature to order one. Off reproduces the raw feature list
  // with only the speeds normalized.
  bool normalize = true;
};

/// Policy input at time k from the previous plan and the measured state.
[[nodiscard]] inline PolicyState make_policy_state(const OcpTrajectory& prev_plan, const GearSchedule& prev_schedule,
                                                   const VehicleState& measured, const DesiredTrajectory& desired,
                                                   Gear applied_gear) {
  const ShiftedSolution sh = shift_solution(prev_plan, measured);
  PolicyState s;
  s.x = sh.states;
  s.mu = sh.inputs;
  s.desired = desired;
  s.gears = shift_gear_schedule(prev_schedule);
  s.applied_gear = applied_gear;
  return s;
}

// ---------------------------------------------------------------------------
// Featurization

[[nodiscard]] inline Eigen::Matrix<double, kFeatureDim, 1> featurize(const VehicleParams& prm, const VehicleState& x,
                                                                      const ContinuousInput& mu,
                                                                      const VehicleState& target, Gear j,
                                                                      const FeatureOptions& opt = {}) {
  const double vr = prm.v_max() - prm.v_min();
  const double w = engine_speed(prm, x.v, j);
  Eigen::Matrix<double, kFeatureDim, 1> f;
  f << x.p - target.p, x.v - target.v, (x.v - prm.v_min()) / vr, (target.v - prm.v_min()) / vr, mu.T, mu.F, w,
      static_cast<double>(j);
  if (opt.normalize) {
    f[0] /= 100.0;
    f[1] /= vr;
    f[4] /= prm.torque_max;
    f[5] /= std::max(1.0, prm.brake_max);
    f[6] /= prm.engine_speed_max;
    f[7] /= prm.j_max();
  }
  return f;
}

/// One feature column per window step.
[[nodiscard]] inline Eigen::MatrixXd featurize_state(const VehicleParams& prm, const PolicyState& s,
                                                     const FeatureOptions& opt = {}) {
  const int N = s.N();
  if (static_cast<int>(s.x.size()) != N || static_cast<int>(s.mu.size()) != N ||
      static_cast<int>(s.desired.size()) < N)
    throw std::invalid_argument("inconsistent policy state");
  Eigen::MatrixXd F(kFeatureDim, N);
  for (int t = 0; t < N; ++t) {
    const auto i = static_cast<std::size_t>(t);
    F.col(t) = featurize(prm, s.x[i], s.mu[i], s.desired[i], s.gears[t], opt);
  }
  return F;
}

// ---------------------------------------------------------------------------
// Recurrent network

enum class CellType { gru, elman };

inline const char* to_string(CellType c) { return c == CellType::gru ? "gru" : "elman"; }

inline CellType cell_from_string(const std::string& s) {
  if (s == "gru") return CellType::gru;
  if (s == "elman") return CellType::elman;
  throw std::invalid_argument("unknown cell type '" + s + "'");
}

struct RnnConfig {
  CellType cell = CellType::gru;
  int layers = 2;
  int hidden = 64;
  int input = kFeatureDim;

  bool operator==(const RnnConfig&) const = default;
};

class RnnModel {
 public:
  using MatrixXd = Eigen::MatrixXd;
  using VectorXd = Eigen::VectorXd;
  using Map = Eigen::Map<MatrixXd>;
  using CMap = Eigen::Map<const MatrixXd>;

  struct Layer {
    int in = 0;
    std::size_t W = 0, U = 0, b = 0, bhn = 0;  // offsets into the flat parameter vector
  };

  RnnModel() : RnnModel(RnnConfig{}) {}
  explicit RnnModel(const RnnConfig& cfg) : cfg_(cfg) {
    if (cfg.layers < 1 || cfg.hidden < 1 || cfg.input < 1) throw std::invalid_argument("invalid network shape");
    const int H = cfg.hidden;
    const int G = gates();
    std::size_t off = 0;
    for (int l = 0; l < cfg.layers; ++l) {
      Layer L;
      L.in = l == 0 ? cfg.input : H;
      L.W = off;
      off += static_cast<std::size_t>(G * H * L.in);
      L.U = off;
      off += static_cast<std::size_t>(G * H * H);
      L.b = off;
      off += static_cast<std::size_t>(G * H);
      L.bhn = off;
      if (cfg.cell == CellType::gru) off += static_cast<std::size_t>(H);
      layers_.push_back(L);
    }
    V_ = off;
    off += static_cast<std::size_t>(kNumShifts * H);
    c_ = off;
    off += kNumShifts;
    theta_.assign(off, 0.0);
  }

  [[nodiscard]] const RnnConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t size() const { return theta_.size(); }
  [[nodiscard]] std::vector<double>& params() { return theta_; }
  [[nodiscard]] const std::vector<double>& params() const { return theta_; }

  /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialization.
  void init_random(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    std::uniform_real_distribution<double> u(-k, k);
    for (double& t : theta_) t = u(rng);
  }

  void set_zero() { std::fill(theta_.begin(), theta_.end(), 0.0); }

  /// Output bias, the scores of a zero-weight network.
  [[nodiscard]] Eigen::Vector3d output_bias() const { return {theta_[c_], theta_[c_ + 1], theta_[c_ + 2]}; }
  void set_output_bias(const Eigen::Vector3d& b) {
    for (int i = 0; i < 3; ++i) theta_[c_ + static_cast<std::size_t>(i)] = b[i];
  }

  // One entry per layer; each column is one sequence of the batch.
  using Hidden = std::vector<MatrixXd>;

  [[nodiscard]] Hidden zero_hidden(int batch = 1) const {
    return Hidden(static_cast<std::size_t>(cfg_.layers), MatrixXd::Zero(cfg_.hidden, batch));
  }

  struct StepCache {
    MatrixXd x, h_prev, r, z, n, un, h;
  };
  struct Cache {
    std::vector<std::vector<StepCache>> steps;  // [t][layer]
  };

  /// Scores for one step of a batch and the updated hidden state.
  [[nodiscard]] MatrixXd step(const MatrixXd& x, Hidden& h, std::vector<StepCache>* cache = nullptr) const {
    MatrixXd in = x;
    if (cache) cache->resize(static_cast<std::size_t>(cfg_.layers));
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto li = static_cast<std::size_t>(l);
      StepCache c;
      cell_forward(layers_[li], in, h[li], c);
      h[li] = c.h;
      in = c.h;
      if (cache) (*cache)[li] = std::move(c);
    }
    return head_V() * in + head_c().replicate(1, in.cols());
  }

  /// Scores for a batch of sequences: X[t] is input x batch.
  [[nodiscard]] std::vector<MatrixXd> forward(const std::vector<MatrixXd>& X, Cache* cache = nullptr) const {
    const int B = X.empty() ? 1 : static_cast<int>(X.front().cols());
    Hidden h = zero_hidden(B);
    std::vector<MatrixXd> out;
    out.reserve(X.size());
    if (cache) cache->steps.assign(X.size(), {});
    for (std::size_t t = 0; t < X.size(); ++t) out.push_back(step(X[t], h, cache ? &cache->steps[t] : nullptr));
    return out;
  }

  /// Gradient of sum_t <dOut[t], out[t]> with respect to the parameters.
  [[nodiscard]] std::vector<double> backward(const Cache& cache, const std::vector<MatrixXd>& dOut) const {
    std::vector<double> grad(theta_.size(), 0.0);
    const int L = cfg_.layers;
    const int H = cfg_.hidden;
    const std::size_t T = dOut.size();
    if (T == 0) return grad;
    const int B = static_cast<int>(dOut.front().cols());
    std::vector<MatrixXd> carry(static_cast<std::size_t>(L), MatrixXd::Zero(H, B));
    Map gV(grad.data() + V_, kNumShifts, H);
    Map gc(grad.data() + c_, kNumShifts, 1);
    for (std::size_t t = T; t-- > 0;) {
      const auto& sc = cache.steps[t];
      gV.noalias() += dOut[t] * sc.back().h.transpose();
      gc += dOut[t].rowwise().sum();
      MatrixXd from_above = head_V().transpose() * dOut[t];
      for (int l = L - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        MatrixXd dh = from_above + carry[li];
        MatrixXd dx;
        cell_backward(layers_[li], sc[li], dh, grad, carry[li], dx);
        from_above = std::move(dx);
      }
    }
    return grad;
  }

 private:
  [[nodiscard]] int gates() const { return cfg_.cell == CellType::gru ? 3 : 1; }

  [[nodiscard]] CMap mat(std::size_t off, int rows, int cols) const { return CMap(theta_.data() + off, rows, cols); }
  [[nodiscard]] CMap head_V() const { return mat(V_, kNumShifts, cfg_.hidden); }
  [[nodiscard]] CMap head_c() const { return mat(c_, kNumShifts, 1); }

  static MatrixXd sigmoid(const MatrixXd& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

  void cell_forward(const Layer& L, const MatrixXd& x, const MatrixXd& h, StepCache& c) const {
    const int H = cfg_.hidden;
    const int G = gates();
    const CMap W = mat(L.W, G * H, L.in);
    const CMap U = mat(L.U, G * H, H);
    const CMap b = mat(L.b, G * H, 1);
    const int B = static_cast<int>(x.cols());
    c.x = x;
    c.h_prev = h;
    if (cfg_.cell == CellType::elman) {
      MatrixXd a = W * x + U * h + b.replicate(1, B);
      c.h = a.array().tanh().matrix();
      return;
    }
    const MatrixXd wx = W * x + b.replicate(1, B);
    c.r = sigmoid(wx.topRows(H) + U.topRows(H) * h);
    c.z = sigmoid(wx.middleRows(H, H) + U.middleRows(H, H) * h);
    c.un = U.bottomRows(H) * h + mat(L.bhn, H, 1).replicate(1, B);
    c.n = (wx.bottomRows(H).array() + c.r.array() * c.un.array()).tanh().matrix();
    c.h = ((1.0 - c.z.array()) * c.n.array() + c.z.array() * h.array()).matrix();
  }

  void cell_backward(const Layer& L, const StepCache& c, const MatrixXd& dh, std::vector<double>& grad,
                     MatrixXd& dh_prev, MatrixXd& dx) const {
    const int H = cfg_.hidden;
    const int G = gates();
    const CMap W = mat(L.W, G * H, L.in);
    const CMap U = mat(L.U, G * H, H);
    Map gW(grad.data() + L.W, G * H, L.in);
    Map gU(grad.data() + L.U, G * H, H);
    Map gb(grad.data() + L.b, G * H, 1);
    if (cfg_.cell == CellType::elman) {
      const MatrixXd da = (dh.array() * (1.0 - c.h.array().square())).matrix();
      gW.noalias() += da * c.x.transpose();
      gU.noalias() += da * c.h_prev.transpose();
      gb += da.rowwise().sum();
      dh_prev = U.transpose() * da;
      dx = W.transpose() * da;
      return;
    }
    const auto& z = c.z.array();
    const auto& r = c.r.array();
    const auto& n = c.n.array();
    const MatrixXd dn = (dh.array() * (1.0 - z)).matrix();
    const MatrixXd dz = (dh.array() * (c.h_prev.array() - n)).matrix();
    MatrixXd da(3 * H, dh.cols());
    da.bottomRows(H) = (dn.array() * (1.0 - n.square())).matrix();
    const MatrixXd dun = (da.bottomRows(H).array() * r).matrix();
    const MatrixXd dr = (da.bottomRows(H).array() * c.un.array()).matrix();
    da.topRows(H) = (dr.array() * r * (1.0 - r)).matrix();
    da.middleRows(H, H) = (dz.array() * z * (1.0 - z)).matrix();

    gW.noalias() += da * c.x.transpose();
    gb += da.rowwise().sum();
    gU.topRows(2 * H).noalias() += da.topRows(2 * H) * c.h_prev.transpose();
    gU.bottomRows(H).noalias() += dun * c.h_prev.transpose();
    Map gbhn(grad.data() + L.bhn, H, 1);
    gbhn += dun.rowwise().sum();

    dh_prev = (dh.array() * z).matrix();
    dh_prev.noalias() += U.topRows(2 * H).transpose() * da.topRows(2 * H);
    dh_prev.noalias() += U.bottomRows(H).transpose() * dun;
    dx = W.transpose() * da;
  }

  RnnConfig cfg_;
  std::vector<Layer> layers_;
  std::size_t V_ = 0, c_ = 0;
  std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a text header with the shape, then one parameter per line.

inline constexpr const char* kCheckpointMagic = "platoon-rnn";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const RnnModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  const RnnConfig& c = m.config();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
      << "cell " << to_string(c.cell) << '\n'
      << "layers " << c.layers << '\n'
      << "hidden " << c.hidden << '\n'
      << "input " << c.input << '\n'
      << "params " << m.size() << '\n';
  out << std::setprecision(17);
  for (double t : m.params()) out << t << '\n';
}

inline RnnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  std::string magic, key, cell;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic || version != kCheckpointVersion)
    throw std::runtime_error("'" + path + "' is not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
  RnnConfig c;
  std::size_t count = 0;
  auto expect = [&](const char* k) {
    in >> key;
    if (key != k) throw std::runtime_error("checkpoint: expected '" + std::string(k) + "', got '" + key + "'");
  };
  expect("cell");
  in >> cell;
  c.cell = cell_from_string(cell);
  expect("layers");
  in >> c.layers;
  expect("hidden");
  in >> c.hidden;
  expect("input");
  in >> c.input;
  expect("params");
  in >> count;
  RnnModel m(c);
  if (count != m.size()) throw std::runtime_error("checkpoint parameter count does not match its shape");
  for (double& t : m.params())
    if (!(in >> t)) throw std::runtime_error("checkpoint truncated");
  return m;
}

// ---------------------------------------------------------------------------
// Policy operations

/// Scores for one step; updates the hidden state in place.
[[nodiscard]] inline Eigen::Vector3d score_step(const RnnModel& m, const Eigen::VectorXd& features,
                                                RnnModel::Hidden& hidden) {
  if (features.size() != m.config().input) throw std::invalid_argument("feature dimension mismatch");
  return m.step(features, hidden).col(0);
}

/// Index of the highest score minus two; ties go to the lowest index.
[[nodiscard]] inline Shift select_shift(const Eigen::Vector3d& delta) {
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (delta[i] > delta[best]) best = i;
  return best - 1;
}

[[nodiscard]] inline GearSchedule chain_gears(const VehicleParams& prm, Gear base, const ShiftAction& shifts) {
  GearSchedule s;
  Gear j = base;
  for (Shift a : shifts) {
    j = std::clamp(j + a, 1, prm.j_max());
    s.gears.push_back(j);
  }
  return s;
}

/// Scores along the whole window, one column per step.
[[nodiscard]] inline Eigen::MatrixXd policy_scores(const VehicleParams& prm, const RnnModel& m, const PolicyState& s,
                                                   const FeatureOptions& fo = {}) {
  const Eigen::MatrixXd F = featurize_state(prm, s, fo);
  RnnModel::Hidden h = m.zero_hidden();
  Eigen::MatrixXd out(kNumShifts, s.N());
  for (int t = 0; t < s.N(); ++t) out.col(t) = m.step(F.col(t), h);
  return out;
}

[[nodiscard]] inline ShiftAction greedy_shifts(const Eigen::MatrixXd& scores) {
  ShiftAction a(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index t = 0; t < scores.cols(); ++t) a[static_cast<std::size_t>(t)] = select_shift(scores.col(t));
  return a;
}

[[nodiscard]] inline GearSchedule policy_schedule(const VehicleParams& prm, const RnnModel& m, const PolicyState& s,
                                                  const FeatureOptions& fo = {}) {
  return chain_gears(prm, s.applied_gear, greedy_shifts(policy_scores(prm, m, s, fo)));
}

/// Decoupled action value of one shift at one step.
[[nodiscard]] inline double decoupled_q(const RnnModel& m, const Eigen::VectorXd& features, Shift a,
                                        RnnModel::Hidden& hidden) {
  if (a < -1 || a > 1) throw std::invalid_argument("shift must be -1, 0 or +1");
  return score_step(m, features, hidden)[a + 1];
}

}  // namespace platoon
