#pragma once

// Run configuration document, run manifests and small file helpers shared by
// the command-line tools.
//
// The configuration is one JSON object with optional sections:
//   vehicle, weights, solver, reference, network, features, trainer, platoon
// Absent keys keep their defaults; unknown keys are rejected.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "platoon/dqn_trainer.hpp"
#include "platoon/platoon_sim.hpp"

#ifndef PLATOON_VERSION
#define PLATOON_VERSION "0.1.0"
#endif

namespace platoon {

namespace detail {

/// Reads keys from one section and rejects anything it was not asked for.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      j_ = root.at(name_);
      if (!j_.is_object()) throw std::invalid_argument("config section '" + name_ + "' must be an object");
    } else {
      j_ = nlohmann::json::object();
    }
  }

  template <class T>
  SectionReader& operator()(const std::string& key, T& field) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        j_.at(key).get_to(field);
      } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + name_ + "." + key + ": " + e.what());
      }
    }
    return *this;
  }

  [[nodiscard]] const nlohmann::json* get(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw std::invalid_argument("unknown config key '" + name_ + "." + key + "'");
  }

 private:
  std::string name_;
  nlohmann::json j_;
  std::set<std::string> seen_;
};

inline GearSelector selector_from_string(const std::string& s) {
  for (GearSelector g : kAllSelectors)
    if (s == to_string(g)) return g;
  throw std::invalid_argument("unknown gear selector '" + s + "'; valid names: low, high, mid");
}

inline FirstGearRule first_gear_from_string(const std::string& s) {
  for (FirstGearRule r : {FirstGearRule::fixed, FirstGearRule::adjacent, FirstGearRule::free})
    if (s == to_string(r)) return r;
  throw std::invalid_argument("unknown first-gear rule '" + s + "'; valid names: fixed, adjacent, free");
}

inline const char* to_string(QOrientation o) { return o == QOrientation::cost_to_go ? "cost_to_go" : "literal"; }

inline QOrientation orientation_from_string(const std::string& s) {
  if (s == "cost_to_go") return QOrientation::cost_to_go;
  if (s == "literal") return QOrientation::literal;
  throw std::invalid_argument("unknown Q orientation '" + s + "'; valid names: cost_to_go, literal");
}

}  // namespace detail

/// Evaluation settings that have no home in the module configs.
struct EvaluationConfig {
  std::vector<std::string> controllers{"ORACLE", "HC", "HS", "HD", "LC"};
  std::string baseline = "ORACLE";
  long K = 200;
  int episodes = 10;
  std::uint64_t first_seed = 1;

  [[nodiscard]] std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> s;
    for (int e = 0; e < episodes; ++e) s.push_back(first_seed + static_cast<std::uint64_t>(e));
    return s;
  }
};

struct RunConfig {
  VehicleParams vehicle;
  OcpWeights weights;
  SolverConfig solver;
  ReferenceConfig reference;
  RnnConfig network;
  FeatureOptions features;
  TrainerConfig trainer;
  PlatoonConfig platoon;
  EvaluationConfig evaluation;

  /// Copies the shared sections into the trainer and platoon configs.
  void propagate() {
    trainer.network = network;
    trainer.features = features;
    trainer.weights = weights;
    trainer.solver = solver;
    trainer.reference = reference;
    platoon.params = vehicle;
    platoon.weights = weights;
    platoon.solver = solver;
    platoon.reference = reference;
    platoon.features = features;
  }
};

inline RunConfig run_config_from_json(const nlohmann::json& root) {
  if (!root.is_object()) throw std::invalid_argument("config must be a JSON object");
  static const std::set<std::string> sections{"vehicle", "weights",  "solver",  "reference", "network",
                                               "features", "trainer", "platoon", "evaluation"};
  for (const auto& [key, value] : root.items())
    if (!sections.count(key)) throw std::invalid_argument("unknown config section '" + key + "'");

  RunConfig c;
  if (root.contains("vehicle")) c.vehicle = vehicle_params_from_json(root.at("vehicle"));

  {
    detail::SectionReader r(root, "weights");
    r("beta", c.weights.beta)("beta_pen", c.weights.beta_pen)("safety_distance", c.weights.safety_distance);
    if (const auto* q = r.get("Q")) {
      std::vector<std::vector<double>> rows;
      try {
        rows = q->get<std::vector<std::vector<double>>>();
      } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("config weights.Q must be a 2x2 array");
      }
      if (rows.size() != 2 || rows[0].size() != 2 || rows[1].size() != 2)
        throw std::invalid_argument("config weights.Q must be a 2x2 array");
      c.weights.Q << rows[0][0], rows[0][1], rows[1][0], rows[1][1];
    }
    r.finish();
  }
  {
    detail::SectionReader r(root, "solver");
    r("max_iterations", c.solver.max_iterations)("kkt_tolerance", c.solver.kkt_tolerance)(
        "constraint_tolerance", c.solver.constraint_tolerance)("internal_tolerance", c.solver.internal_tolerance)(
        "multi_start", c.solver.multi_start)("seed", c.solver.seed)("perturbation", c.solver.perturbation);
    r.finish();
    c.solver.validate();
  }
  {
    detail::SectionReader r(root, "reference");
    auto& f = c.reference;
    r("change_probability", f.change_probability)("accel_min", f.accel_min)("accel_max", f.accel_max)(
        "v_min", f.v_min)("v_max", f.v_max)("dt", f.dt);
    r.finish();
  }
  {
    detail::SectionReader r(root, "network");
    if (const auto* cell = r.get("cell")) c.network.cell = cell_from_string(cell->get<std::string>());
    r("layers", c.network.layers)("hidden", c.network.hidden);
    r.finish();
    if (c.network.layers < 1 || c.network.hidden < 1) throw std::invalid_argument("network needs positive sizes");
  }
  {
    detail::SectionReader r(root, "features");
    r("normalize", c.features.normalize);
    r.finish();
  }
  {
    detail::SectionReader r(root, "trainer");
    auto& t = c.trainer;
    r("stage", t.stage)("steps", t.steps)("horizon", t.horizon)("gamma", t.gamma)("learning_rate", t.learning_rate)(
        "blend", t.blend)("batch_size", t.batch_size)("buffer_capacity", t.buffer_capacity)(
        "min_buffer", t.min_buffer)("e1", t.e1)("e2", t.e2)("huber_delta", t.huber_delta)(
        "cost_scale", t.cost_scale)("terminal_on_reset", t.terminal_on_reset)("reset_threshold", t.reset_threshold)(
        "seed", t.seed)("initial_velocity", t.initial_velocity);
    if (const auto* o = r.get("orientation")) t.orientation = detail::orientation_from_string(o->get<std::string>());
    if (const auto* h = r.get("heuristic")) t.heuristic = detail::selector_from_string(h->get<std::string>());
    if (const auto* e = r.get("exploration")) {
      const nlohmann::json wrap{{"exploration", *e}};
      detail::SectionReader x(wrap, "exploration");
      auto& s = t.exploration;
      x("start", s.start)("rate", s.rate)("rescale", s.rescale)("target", s.target)("budget", s.budget)(
          "offset", s.offset);
      x.finish();
    }
    r.finish();
  }
  {
    detail::SectionReader r(root, "platoon");
    auto& p = c.platoon;
    r("M", p.M)("spacing", p.spacing)("N", p.N)("literal_else_branch", p.literal_else_branch)(
        "rk4_plant", p.rk4_plant)("literal_mid", p.literal_mid)("initial_velocity", p.initial_velocity);
    if (const auto* fg = r.get("oracle_first_gear"))
      p.oracle.first_gear = detail::first_gear_from_string(fg->get<std::string>());
    if (const auto* ms = r.get("multi_start")) {
      const nlohmann::json wrap{{"multi_start", *ms}};
      detail::SectionReader x(wrap, "multi_start");
      x("oracle", p.multi_start.oracle)("hc", p.multi_start.hc)("hs", p.multi_start.hs)("hd", p.multi_start.hd)(
          "lc", p.multi_start.lc);
      x.finish();
    }
    r.finish();
  }
  {
    detail::SectionReader r(root, "evaluation");
    auto& e = c.evaluation;
    r("controllers", e.controllers)("baseline", e.baseline)("K", e.K)("episodes", e.episodes)(
        "first_seed", e.first_seed);
    r.finish();
  }
  c.propagate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["vehicle"] = to_json(c.vehicle);
  const auto& Q = c.weights.Q;
  j["weights"] = {{"beta", c.weights.beta},
                  {"Q", {{Q(0, 0), Q(0, 1)}, {Q(1, 0), Q(1, 1)}}},
                  {"beta_pen", c.weights.beta_pen},
                  {"safety_distance", c.weights.safety_distance}};
  const auto& s = c.solver;
  j["solver"] = {{"max_iterations", s.max_iterations},         {"kkt_tolerance", s.kkt_tolerance},
                 {"constraint_tolerance", s.constraint_tolerance}, {"internal_tolerance", s.internal_tolerance},
                 {"multi_start", s.multi_start},               {"seed", s.seed},
                 {"perturbation", s.perturbation}};
  const auto& r = c.reference;
  j["reference"] = {{"change_probability", r.change_probability}, {"accel_min", r.accel_min},
                    {"accel_max", r.accel_max},                   {"v_min", r.v_min},
                    {"v_max", r.v_max},                           {"dt", r.dt}};
  j["network"] = {{"cell", to_string(c.network.cell)}, {"layers", c.network.layers}, {"hidden", c.network.hidden}};
  j["features"] = {{"normalize", c.features.normalize}};
  const auto& t = c.trainer;
  const auto& x = t.exploration;
  j["trainer"] = {{"stage", t.stage},
                  {"steps", t.steps},
                  {"horizon", t.horizon},
                  {"gamma", t.gamma},
                  {"learning_rate", t.learning_rate},
                  {"blend", t.blend},
                  {"batch_size", t.batch_size},
                  {"buffer_capacity", t.buffer_capacity},
                  {"min_buffer", t.min_buffer},
                  {"e1", t.e1},
                  {"e2", t.e2},
                  {"huber_delta", t.huber_delta},
                  {"cost_scale", t.cost_scale},
                  {"orientation", detail::to_string(t.orientation)},
                  {"terminal_on_reset", t.terminal_on_reset},
                  {"reset_threshold", t.reset_threshold},
                  {"heuristic", to_string(t.heuristic)},
                  {"seed", t.seed},
                  {"initial_velocity", t.initial_velocity},
                  {"exploration",
                   {{"start", x.start},
                    {"rate", x.rate},
                    {"rescale", x.rescale},
                    {"target", x.target},
                    {"budget", x.budget},
                    {"offset", x.offset}}}};
  const auto& p = c.platoon;
  j["platoon"] = {{"M", p.M},
                  {"spacing", p.spacing},
                  {"N", p.N},
                  {"oracle_first_gear", to_string(p.oracle.first_gear)},
                  {"multi_start",
                   {{"oracle", p.multi_start.oracle},
                    {"hc", p.multi_start.hc},
                    {"hs", p.multi_start.hs},
                    {"hd", p.multi_start.hd},
                    {"lc", p.multi_start.lc}}},
                  {"literal_else_branch", p.literal_else_branch},
                  {"rk4_plant", p.rk4_plant},
                  {"literal_mid", p.literal_mid},
                  {"initial_velocity", p.initial_velocity}};
  const auto& e = c.evaluation;
  j["evaluation"] = {{"controllers", e.controllers},
                     {"baseline", e.baseline},
                     {"K", e.K},
                     {"episodes", e.episodes},
                     {"first_seed", e.first_seed}};
  return j;
}

// ---------------------------------------------------------------------------
// Run manifest

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// One per run directory. Output paths are relative to the directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::string version = PLATOON_VERSION;
  std::string started = utc_timestamp();
  std::string finished;
  std::vector<std::string> outputs;
  nlohmann::json extra = nlohmann::json::object();

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"command", command}, {"argv", argv},         {"config", config},   {"seeds", seeds},
            {"version", version}, {"started", started},   {"finished", finished}, {"outputs", outputs},
            {"extra", extra}};
  }
};

inline constexpr const char* kManifestName = "manifest.json";

/// Writes `text` to dir/name and records the name in the manifest.
inline void write_output(RunManifest& man, const std::filesystem::path& dir, const std::string& name,
                         const std::string& text) {
  std::filesystem::create_directories((dir / name).parent_path());
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  out << text;
  if (std::find(man.outputs.begin(), man.outputs.end(), name) == man.outputs.end()) man.outputs.push_back(name);
}

inline void write_manifest(RunManifest& man, const std::filesystem::path& dir) {
  man.finished = utc_timestamp();
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / kManifestName);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << man.to_json().dump(2) << '\n';
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Table of mean, standard deviation, median, minimum and maximum of the
/// relative cost increase, one row per controller, baseline excluded.
inline std::string delta_table_csv(const EvaluationResult& r) {
  std::ostringstream o;
  o << "controller,episodes,mean,std,median,min,max\n";
  for (const std::string& l : r.labels) {
    if (l == r.baseline) continue;
    const SummaryStats s = r.delta_stats(l);
    o << l << ',' << s.count << ',' << fmt_double(s.mean) << ',' << fmt_double(s.stddev) << ','
      << fmt_double(s.median) << ',' << fmt_double(s.min) << ',' << fmt_double(s.max) << '\n';
  }
  return o.str();
}

}  // namespace platoon
