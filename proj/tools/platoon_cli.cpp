// platoon: training, evaluation and inspection front end.
//
//   platoon train    --config cfg.json --out runs/s1 [--stage 1]
//   platoon train    --config cfg.json --out runs/s2 --stage 2 --init runs/s1
//   platoon evaluate --config cfg.json --out runs/eval --controllers ORACLE,HC,HD,LC --policy runs/s2
//   platoon verify   [--config cfg.json]
//   platoon oracle   --config cfg.json --out runs/one --seed 3
//   platoon replay   --log runs/eval/episodes/HC_seed1.csv --out runs/plot

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "platoon/config_io.hpp"

namespace fs = std::filesystem;
using namespace platoon;

namespace {

struct Common {
  std::string config;
  std::string out;
};

RunConfig load_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> split_list(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  for (const std::string& s : in) {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Accepts a checkpoint file or a training run directory.
fs::path checkpoint_path(const std::string& p) {
  const fs::path path(p);
  if (fs::is_directory(path)) return path / "model.ckpt";
  return path;
}

// -- train ------------------------------------------------------------------

struct TrainArgs : Common {
  int stage = 0;
  long steps = -1;
  long long seed = -1;
  std::string init;
  std::string resume;
  bool snapshot = false;
  long window = 500;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  RunConfig rc = load_run_config(a.config);
  TrainerConfig& tc = rc.trainer;
  if (a.stage) tc.stage = a.stage;
  if (a.steps >= 0) tc.steps = a.steps;
  if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);

  std::optional<RnnModel> init;
  long previous_steps = 0;
  if (!a.init.empty()) {
    init = load_checkpoint(checkpoint_path(a.init).string());
    rc.network = init->config();
    tc.network = rc.network;
    const fs::path man = fs::path(a.init) / kManifestName;
    if (fs::is_directory(a.init) && fs::exists(man)) {
      const auto j = nlohmann::json::parse(read_file(man));
      previous_steps = j.at("extra").value("steps", 0L);
    }
    // Stage 2 continues the stage-1 exploration schedule.
    if (tc.stage == 2 && previous_steps > 0 && tc.exploration.offset == 0 && tc.exploration.budget == 0) {
      tc.exploration.budget = previous_steps;
      tc.exploration.offset = previous_steps;
    }
  }
  if (tc.exploration.rescale && tc.exploration.budget == 0) tc.exploration.budget = tc.steps;

  const fs::path out(a.out);
  fs::create_directories(out);
  RunManifest man;
  man.command = "train";
  man.argv = argv;
  man.config = to_json(rc);
  man.seeds = {tc.seed};

  Trainer trainer(rc.vehicle, tc, init);
  if (!a.resume.empty()) trainer.load_snapshot(a.resume);

  std::ostringstream csv;
  csv << metrics_csv_header() << '\n';
  std::vector<int> kappa;
  long policy_steps = 0;
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run([&](const StepMetrics& m) {
    csv << metrics_csv_row(m) << '\n';
    kappa.push_back(m.kappa);
    policy_steps += m.source == InputSource::policy;
    if (m.k % 1000 == 999)
      std::cerr << "step " << m.k + 1 << "/" << tc.steps << " eps " << fmt_double(m.epsilon) << '\n';
  });
  const double wall = seconds_since(t0);

  save_checkpoint(trainer.model(), (out / "model.ckpt").string());
  man.outputs.push_back("model.ckpt");
  save_checkpoint(trainer.target(), (out / "target.ckpt").string());
  man.outputs.push_back("target.ckpt");
  write_output(man, out, "metrics.csv", csv.str());
  if (a.snapshot) {
    trainer.save_snapshot((out / "snapshot").string());
    for (const char* f : {"model.ckpt", "target.ckpt", "trainer.json", "buffer.bin"})
      man.outputs.push_back(std::string("snapshot/") + f);
  }

  auto mean_of = [&](std::size_t lo, std::size_t hi) {
    double s = 0;
    for (std::size_t i = lo; i < hi; ++i) s += kappa[i];
    return hi > lo ? s / static_cast<double>(hi - lo) : 0.0;
  };
  const std::size_t n = kappa.size(), w = std::min<std::size_t>(n, static_cast<std::size_t>(a.window));
  nlohmann::json summary = {{"stage", tc.stage},
                            {"steps", n},
                            {"window", w},
                            {"kappa_first_window", mean_of(0, w)},
                            {"kappa_last_window", mean_of(n - w, n)},
                            {"kappa_mean", mean_of(0, n)},
                            {"policy_fraction", n ? static_cast<double>(policy_steps) / static_cast<double>(n) : 0.0},
                            {"exploration_rate", tc.exploration.effective_rate()},
                            {"exploration_offset", tc.exploration.offset}};
  write_output(man, out, "summary.json", summary.dump(2) + "\n");
  man.extra = {{"steps", trainer.step_count() + previous_steps}, {"wall_seconds", wall}};
  write_manifest(man, out);
  std::cout << "stage " << tc.stage << ": " << n << " steps, kappa first " << w << " = "
            << fmt_double(summary["kappa_first_window"]) << ", last " << w << " = "
            << fmt_double(summary["kappa_last_window"]) << "\n";
  return 0;
}

// -- evaluate ---------------------------------------------------------------

struct EvalArgs : Common {
  std::vector<std::string> controllers;
  std::vector<std::string> policies;
  std::string baseline;
  int M = 0, N = 0, episodes = 0;
  long K = 0;
  long long first_seed = -1;
  bool no_logs = false;
};

int cmd_evaluate(const EvalArgs& a, const std::vector<std::string>& argv) {
  RunConfig rc = load_or_default(a.config);
  EvaluationConfig& ec = rc.evaluation;
  if (!a.controllers.empty()) ec.controllers = split_list(a.controllers);
  if (!a.baseline.empty()) ec.baseline = a.baseline;
  if (a.M) rc.platoon.M = a.M;
  if (a.N) rc.platoon.N = a.N;
  if (a.K) ec.K = a.K;
  if (a.episodes) ec.episodes = a.episodes;
  if (a.first_seed >= 0) ec.first_seed = static_cast<std::uint64_t>(a.first_seed);
  if (ec.episodes < 1 || ec.K < 1) throw std::invalid_argument("need at least one episode of at least one step");

  // "--policy path" applies to every LC entry, "--policy LABEL=path" to one.
  std::map<std::string, std::string> policy_for;
  std::string policy_all;
  for (const std::string& p : a.policies) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) policy_all = p;
    else policy_for[p.substr(0, eq)] = p.substr(eq + 1);
  }
  std::vector<EvaluationEntry> entries;
  std::map<std::string, std::shared_ptr<const RnnModel>> loaded;
  for (const std::string& label : ec.controllers) {
    EvaluationEntry e{label, controller_from_string(label), nullptr};
    if (e.type == ControllerType::lc) {
      const std::string path = policy_for.count(label) ? policy_for[label] : policy_all;
      if (path.empty()) throw std::invalid_argument("controller " + label + " needs --policy");
      auto& m = loaded[path];
      if (!m) m = std::make_shared<const RnnModel>(load_checkpoint(checkpoint_path(path).string()));
      e.policy = m;
    }
    entries.push_back(e);
  }
  if (std::find(ec.controllers.begin(), ec.controllers.end(), ec.baseline) == ec.controllers.end())
    throw std::invalid_argument("baseline " + ec.baseline + " is not among the controllers");
  rc.platoon.validate();

  const fs::path out(a.out);
  fs::create_directories(out);
  RunManifest man;
  man.command = "evaluate";
  man.argv = argv;
  man.config = to_json(rc);
  man.seeds = ec.seeds();
  for (const auto& [path, m] : loaded) man.extra["policies"].push_back(path);

  const auto t0 = std::chrono::steady_clock::now();
  const EvaluationResult res =
      evaluate(rc.platoon, entries, ec.seeds(), ec.K, ec.baseline,
               [&](const EvaluationEntry& e, std::uint64_t seed, const EpisodeResult& r) {
                 std::cerr << e.label << " seed " << seed << " J " << fmt_double(r.metrics.J()) << '\n';
                 if (!a.no_logs)
                   write_output(man, out, "episodes/" + e.label + "_seed" + std::to_string(seed) + ".csv",
                                episode_csv(r));
               });

  nlohmann::json summary = res.to_json();
  nlohmann::json timings;
  for (auto& [label, c] : summary["controllers"].items()) {
    timings[label] = c["solve_time_s"];
    c.erase("solve_time_s");
  }
  summary["M"] = rc.platoon.M;
  summary["N"] = rc.platoon.N;
  summary["K"] = ec.K;
  write_output(man, out, "summary.json", summary.dump(2) + "\n");
  write_output(man, out, "delta_table.csv", delta_table_csv(res));
  write_output(man, out, "timings.json", timings.dump(2) + "\n");
  man.extra["wall_seconds"] = seconds_since(t0);
  write_manifest(man, out);

  std::cout << "delta J [%] against " << ec.baseline << " (M=" << rc.platoon.M << ", N=" << rc.platoon.N
            << ", K=" << ec.K << ", " << ec.episodes << " episodes)\n"
            << delta_table_csv(res);
  return 0;
}

// -- verify -----------------------------------------------------------------

int cmd_verify(const Common& a, const std::vector<std::string>& argv) {
  const RunConfig rc = load_or_default(a.config);
  const EquilibriumReport rep = verify_equilibrium_condition(rc.vehicle);
  std::cout << rep.str();
  if (!a.out.empty()) {
    RunManifest man;
    man.command = "verify";
    man.argv = argv;
    man.config = to_json(rc);
    write_output(man, a.out, "verify.txt", rep.str());
    write_manifest(man, a.out);
  }
  return rep.pass ? 0 : 1;
}

// -- oracle -----------------------------------------------------------------

struct OracleArgs : Common {
  std::uint64_t seed = 1;
  int N = 0;
  double v0 = -1.0;
  int j_prev = 0;
  std::string first_gear;
};

int cmd_oracle(const OracleArgs& a, const std::vector<std::string>& argv) {
  RunConfig rc = load_or_default(a.config);
  const VehicleParams& prm = rc.vehicle;
  const int N = a.N ? a.N : rc.platoon.N;
  OracleOptions opt = rc.platoon.oracle;
  if (!a.first_gear.empty()) opt.first_gear = detail::first_gear_from_string(a.first_gear);
  opt.solver = rc.solver;
  opt.multi_start = rc.platoon.multi_start.oracle;

  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> uv(rc.reference.v_min, rc.reference.v_max);
  const double v0 = a.v0 >= 0 ? a.v0 : uv(rng);
  OracleProblem op;
  op.params = prm;
  op.x0 = {0.0, v0};
  op.desired = ReferenceGenerator(a.seed, op.x0, rc.reference).window(N);
  op.weights = rc.weights;
  op.j_prev = a.j_prev ? a.j_prev : select_gear(prm, v0, GearSelector::high);
  prm.check_gear(op.j_prev);

  const OracleResult r = solve_minlp(op, opt);
  nlohmann::json j;
  j["instance"] = {{"seed", a.seed}, {"N", N}, {"v0", v0}, {"j_prev", op.j_prev},
                   {"first_gear", to_string(opt.first_gear)}};
  j["feasible"] = r.feasible;
  j["cost"] = r.feasible ? nlohmann::json(r.cost()) : nlohmann::json("inf");
  j["schedule"] = r.schedule.gears;
  if (r.feasible) j["solution"] = to_json(r.solution);
  j["stats"] = {{"nodes_expanded", r.stats.nodes_expanded}, {"leaves_solved", r.stats.leaves_solved},
                {"leaves_feasible", r.stats.leaves_feasible}, {"pruned_infeasible", r.stats.pruned_infeasible},
                {"pruned_bound", r.stats.pruned_bound}};
  for (GearSelector sel : kAllSelectors) {
    const GearSchedule s = constant_schedule(prm, op.x0, sel, N);
    const OcpSolution c = solve_schedule(prm, op.x0, s, op.desired, {}, op.weights, op.previous_torque, nullptr,
                                         rc.platoon.multi_start.hc, rc.solver);
    j["constant"][to_string(sel)] = {{"schedule", s.gears},
                                     {"cost", c.solved() ? nlohmann::json(c.objective) : nlohmann::json("inf")}};
  }
  std::cout << "oracle cost " << fmt_double(r.cost()) << " schedule";
  for (Gear g : r.schedule.gears) std::cout << ' ' << g;
  std::cout << "  (" << r.stats.leaves_solved << " leaves, " << r.stats.nodes_expanded << " nodes)\n";
  if (!a.out.empty()) {
    RunManifest man;
    man.command = "oracle";
    man.argv = argv;
    man.config = to_json(rc);
    man.seeds = {a.seed};
    write_output(man, a.out, "oracle.json", j.dump(2) + "\n");
    man.extra = {{"wall_seconds", r.stats.wall_seconds}};
    write_manifest(man, a.out);
  } else {
    std::cout << j.dump(2) << '\n';
  }
  return r.feasible ? 0 : 1;
}

// -- replay -----------------------------------------------------------------

struct ReplayArgs {
  std::string log;
  std::string out;
  long window = 500;
  double beta = OcpWeights{}.beta;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t col(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::invalid_argument("log has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  [[nodiscard]] bool has(const std::string& name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
};

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

CsvTable read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty log " + p.string());
  t.header = split_row(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split_row(line));
  return t;
}

int cmd_replay(const ReplayArgs& a, const std::vector<std::string>& argv) {
  const CsvTable t = read_csv(a.log);
  const fs::path out(a.out);
  RunManifest man;
  man.command = "replay";
  man.argv = argv;
  man.config = {{"log", a.log}, {"window", a.window}, {"beta", a.beta}};
  nlohmann::json summary;

  if (t.has("vehicle")) {
    // Episode log: per-vehicle series and closed-loop totals.
    const std::size_t ck = t.col("k"), cveh = t.col("vehicle"), cp = t.col("p"), cv = t.col("v"),
                      cg = t.col("gear"), cf = t.col("fuel"), ctr = t.col("tracking"), cpr = t.col("p_ref"),
                      cvr = t.col("v_ref"), cs = t.col("source");
    std::map<int, std::ostringstream> series;
    std::map<int, nlohmann::json> per;
    std::map<int, int> last_gear;
    double J = 0.0;
    for (const auto& r : t.rows) {
      const int i = std::stoi(r[cveh]);
      auto& o = series[i];
      if (o.tellp() == 0) o << "k,p,v,gear,p_ref,v_ref,source\n";
      o << r[ck] << ',' << r[cp] << ',' << r[cv] << ',' << r[cg] << ',' << r[cpr] << ',' << r[cvr] << ',' << r[cs]
        << '\n';
      const double fuel = std::stod(r[cf]), tr = std::stod(r[ctr]);
      auto& s = per[i];
      if (s.is_null()) s = {{"fuel", 0.0}, {"tracking", 0.0}, {"steps", 0}, {"shifts", 0}, {"gear_histogram", nlohmann::json::object()}};
      s["fuel"] = s.value("fuel", 0.0) + fuel;
      s["tracking"] = s.value("tracking", 0.0) + tr;
      s["steps"] = s.value("steps", 0) + 1;
      const int g = std::stoi(r[cg]);
      if (last_gear.count(i) && last_gear[i] != g) s["shifts"] = s.value("shifts", 0) + 1;
      last_gear[i] = g;
      auto& h = s["gear_histogram"];
      h[std::to_string(g)] = h.value(std::to_string(g), 0) + 1;
      J += fuel + a.beta * tr;
    }
    for (auto& [i, o] : series) write_output(man, out, "vehicle" + std::to_string(i) + ".csv", o.str());
    for (auto& [i, s] : per) summary["vehicles"][std::to_string(i)] = s;
    summary["J"] = J;
  } else if (t.has("kappa")) {
    // Training log: moving average of the shaping indicator.
    const std::size_t ck = t.col("k"), ckap = t.col("kappa"), ceps = t.col("epsilon"), closs = t.col("loss");
    std::ostringstream o;
    o << "k,kappa_ma,epsilon,loss\n";
    std::vector<int> kap;
    double run = 0.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      kap.push_back(std::stoi(t.rows[r][ckap]));
      run += kap.back();
      if (static_cast<long>(kap.size()) > a.window) run -= kap[kap.size() - static_cast<std::size_t>(a.window) - 1];
      const double ma = run / static_cast<double>(std::min<long>(static_cast<long>(kap.size()), a.window));
      o << t.rows[r][ck] << ',' << fmt_double(ma) << ',' << t.rows[r][ceps] << ',' << t.rows[r][closs] << '\n';
    }
    write_output(man, out, "kappa_ma.csv", o.str());
    summary["steps"] = kap.size();
  } else {
    throw std::invalid_argument("unrecognised log format: " + a.log);
  }
  write_output(man, out, "summary.json", summary.dump(2) + "\n");
  write_manifest(man, out);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gear-aware platoon MPC: training, evaluation and inspection"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train the gear-shift scorer (stage 1 or 2)");
  train->add_option("--config,-c", ta.config, "JSON configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--out,-o", ta.out, "run directory")->required();
  train->add_option("--stage", ta.stage, "1 or 2; overrides trainer.stage")->check(CLI::Range(1, 2));
  train->add_option("--steps", ta.steps, "overrides trainer.steps");
  train->add_option("--seed", ta.seed, "overrides trainer.seed");
  train->add_option("--init", ta.init, "checkpoint file or earlier run directory");
  train->add_option("--resume", ta.resume, "snapshot directory to continue from");
  train->add_flag("--snapshot", ta.snapshot, "also write a resumable snapshot");
  train->add_option("--window", ta.window, "window for the kappa summary")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "closed-loop controller comparison");
  eval->add_option("--config,-c", ea.config, "JSON configuration")->check(CLI::ExistingFile);
  eval->add_option("--out,-o", ea.out, "run directory")->required();
  eval->add_option("--controllers", ea.controllers, "comma-separated labels: ORACLE, HC, HS, HD, LC (LC-1, LC-2)");
  eval->add_option("--policy", ea.policies, "scorer for LC entries: PATH or LABEL=PATH");
  eval->add_option("--baseline", ea.baseline, "reference controller label");
  eval->add_option("-M", ea.M, "platoon size")->check(CLI::PositiveNumber);
  eval->add_option("-N", ea.N, "prediction horizon")->check(CLI::Range(2, 1000));
  eval->add_option("-K", ea.K, "steps per episode")->check(CLI::PositiveNumber);
  eval->add_option("--episodes", ea.episodes, "number of seeds")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.first_seed, "first seed");
  eval->add_flag("--no-logs", ea.no_logs, "skip per-episode CSV logs");

  Common va;
  auto* verify = app.add_subcommand("verify", "check the per-gear equilibrium condition");
  verify->add_option("--config,-c", va.config, "JSON configuration")->check(CLI::ExistingFile);
  verify->add_option("--out,-o", va.out, "optional run directory");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "solve one single-vehicle mixed-integer instance");
  oracle->add_option("--config,-c", oa.config, "JSON configuration")->check(CLI::ExistingFile);
  oracle->add_option("--out,-o", oa.out, "optional run directory");
  oracle->add_option("--seed", oa.seed, "instance seed");
  oracle->add_option("-N", oa.N, "horizon")->check(CLI::Range(2, 8));
  oracle->add_option("--v0", oa.v0, "initial velocity (default: drawn)");
  oracle->add_option("--j-prev", oa.j_prev, "previously applied gear (default: highest feasible)");
  oracle->add_option("--first-gear", oa.first_gear, "fixed, adjacent or free");

  ReplayArgs ra;
  auto* replay = app.add_subcommand("replay", "turn an episode or training log into plot-ready series");
  replay->add_option("--log", ra.log, "CSV written by train or evaluate")->required()->check(CLI::ExistingFile);
  replay->add_option("--out,-o", ra.out, "output directory")->required();
  replay->add_option("--window", ra.window, "moving-average window for training logs")->check(CLI::PositiveNumber);
  replay->add_option("--beta", ra.beta, "fuel/tracking trade-off used for J");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(ta, args);
    if (*eval) return cmd_evaluate(ea, args);
    if (*verify) return cmd_verify(va, args);
    if (*oracle) return cmd_oracle(oa, args);
    if (*replay) return cmd_replay(ra, args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
