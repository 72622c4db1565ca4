#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "rscpi/dpomdp_parser.hpp"
#include "rscpi/evaluation.hpp"
#include "rscpi/model.hpp"
#include "rscpi/policy.hpp"
#include "rscpi/policy_io.hpp"
#include "rscpi/solver.hpp"

namespace rscpi::bench {

namespace fs = std::filesystem;

enum ExitCode : int { kSuccess = 0, kInputError = 2, kNumericError = 3 };

inline constexpr const char* kMatrixGameModel = "builtin:matrix-game";

/// Ablation labels in report column order.
inline const std::vector<std::string>& ablation_order() {
  static const std::vector<std::string> order = {"cpi-only", "rs-only", "neither", "rs-cpi"};
  return order;
}

inline std::string ablation_label(bool disable_rs, bool disable_cpi) {
  if (disable_rs && disable_cpi) return "neither";
  if (disable_rs) return "cpi-only";
  if (disable_cpi) return "rs-only";
  return "rs-cpi";
}

inline void ablation_flags(const std::string& label, bool& disable_rs, bool& disable_cpi) {
  if (label == "rs-cpi") {
    disable_rs = disable_cpi = false;
  } else if (label == "cpi-only") {
    disable_rs = true, disable_cpi = false;
  } else if (label == "rs-only") {
    disable_rs = false, disable_cpi = true;
  } else if (label == "neither") {
    disable_rs = disable_cpi = true;
  } else {
    throw std::invalid_argument("unknown ablation '" + label + "'");
  }
}

struct RunRecord {
  std::string env;
  std::size_t horizon = 0;
  std::vector<std::size_t> z_sizes;
  double lambda0 = 0.0;
  double alpha = 1.0;
  std::size_t anneal_sweeps = 0;
  std::uint64_t seed = 0;
  std::string ablation = "rs-cpi";
  std::size_t sweeps = 0;
  double J_exact = 0.0;
  double J_risk_final = 0.0;
  double wall_time_ms = 0.0;
  std::size_t peak_floats = 0;
  std::string init_obs_mode = "dummy";
};

inline const char* csv_header() {
  return "env,T,z_sizes,lambda0,alpha,anneal_sweeps,seed,ablation,sweeps,J_exact,J_risk_final,wall_time_ms,"
         "peak_floats,init_obs_mode";
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (std::size_t k = 0; k < sizes.size(); ++k) out += (k ? "x" : "") + std::to_string(sizes[k]);
  return out;
}

inline std::vector<std::size_t> split_sizes(const std::string& text, char sep) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, sep)) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("malformed size list '" + text + "'");
    out.push_back(std::stoull(part));
  }
  if (out.empty()) throw std::invalid_argument("empty size list");
  return out;
}

inline std::string to_csv_row(const RunRecord& r) {
  std::ostringstream out;
  out << r.env << ',' << r.horizon << ',' << join_sizes(r.z_sizes) << ',' << format_double(r.lambda0) << ','
      << format_double(r.alpha) << ',' << r.anneal_sweeps << ',' << r.seed << ',' << r.ablation << ',' << r.sweeps
      << ',' << format_double(r.J_exact) << ',' << format_double(r.J_risk_final) << ','
      << format_double(r.wall_time_ms) << ',' << r.peak_floats << ',' << r.init_obs_mode;
  return out.str();
}

inline RunRecord from_csv_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) f.push_back(cell);
  if (f.size() != 14) throw std::invalid_argument("runs.csv: expected 14 columns, found " + std::to_string(f.size()));
  RunRecord r;
  try {
    r.env = f[0];
    r.horizon = std::stoull(f[1]);
    r.z_sizes = split_sizes(f[2], 'x');
    r.lambda0 = std::stod(f[3]);
    r.alpha = std::stod(f[4]);
    r.anneal_sweeps = std::stoull(f[5]);
    r.seed = std::stoull(f[6]);
    r.ablation = f[7];
    r.sweeps = std::stoull(f[8]);
    r.J_exact = std::stod(f[9]);
    r.J_risk_final = std::stod(f[10]);
    r.wall_time_ms = std::stod(f[11]);
    r.peak_floats = std::stoull(f[12]);
    r.init_obs_mode = f[13];
  } catch (const std::logic_error& e) {
    throw std::invalid_argument("runs.csv: malformed row '" + line + "'");
  }
  return r;
}

inline std::vector<RunRecord> read_runs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::vector<RunRecord> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line == csv_header()) continue;
    }
    out.push_back(from_csv_row(line));
  }
  return out;
}

/// Appends rows, writing the header first when the file is new or empty.
inline void append_runs_csv(const std::string& path, const std::vector<RunRecord>& rows) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  if (fresh) out << csv_header() << "\n";
  for (const auto& r : rows) out << to_csv_row(r) << "\n";
}

struct Environment {
  std::string name;
  DecPomdpModel model;
};

/// Loads `builtin:matrix-game` or a `.dpomdp` file. Parse problems are
/// reported on `err` as file:line diagnostics and rethrown.
inline Environment load_environment(const std::string& source, std::size_t horizon, InitialObservationMode mode,
                                    std::ostream& err) {
  if (source == kMatrixGameModel) return {"matrix-game", matrix_game_model({{2.0, -10.0}, {-10.0, 6.0}})};
  std::vector<ParseDiagnostic> warnings;
  try {
    DecPomdpModel model = load_dpomdp(source, horizon, mode, &warnings);
    for (const auto& w : warnings) err << format_diagnostic(source, w) << "\n";
    return {fs::path(source).stem().string(), std::move(model)};
  } catch (const ParseError& e) {
    for (const auto& d : e.diagnostics()) err << format_diagnostic(source, d) << "\n";
    throw;
  }
}

inline InitialObservationMode parse_init_obs(const std::string& text) {
  if (text == "dummy") return InitialObservationMode::dummy_observation;
  if (text == "uniform") return InitialObservationMode::uniform_observation;
  throw std::invalid_argument("--init-obs must be 'dummy' or 'uniform'");
}

inline RunRecord make_record(const std::string& env, const DecPomdpModel& model, const SolverConfig& config,
                             const SolveResult& result) {
  RunRecord r;
  r.env = env;
  r.horizon = model.horizon();
  r.z_sizes = config.agent_state_counts(model.agent_count());
  r.lambda0 = config.effective_lambda0();
  r.alpha = config.effective_alpha();
  r.anneal_sweeps = config.anneal_sweeps;
  r.seed = result.seed;
  r.ablation = ablation_label(config.disable_rs, config.disable_cpi);
  r.sweeps = result.sweeps;
  r.J_exact = result.J;
  r.J_risk_final = result.J_risk_final;
  r.wall_time_ms = result.wall_time_ms;
  r.peak_floats = result.peak_floats;
  r.init_obs_mode = to_string(model.initial_observation_mode());
  return r;
}

struct SolveOptions {
  std::string model;
  std::size_t horizon = 1;
  std::vector<std::size_t> agent_states{1};
  SolverConfig solver;
  std::string init_obs = "dummy";
  std::string out = ".";
};

/// solve: runs the solver and writes policy.json, policy.txt and a runs.csv row.
inline int cmd_solve(const SolveOptions& options, std::ostream& out, std::ostream& err) {
  Environment env;
  SolverConfig config = options.solver;
  config.agent_states = options.agent_states;
  try {
    config.validate();
    env = load_environment(options.model, options.horizon, parse_init_obs(options.init_obs), err);
    config.agent_state_counts(env.model.agent_count());
  } catch (const ParseError&) {
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  SolveResult result;
  try {
    result = solve(env.model, config);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  }
  try {
    fs::create_directories(options.out);
    const fs::path dir(options.out);
    write_policy_json((dir / "policy.json").string(), result.policy);
    std::ofstream((dir / "policy.txt").string()) << dump_policy(result.policy, env.model);
    append_runs_csv((dir / "runs.csv").string(), {make_record(env.name, env.model, config, result)});
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  out << "J_exact " << format_double(result.J) << "\nsweeps " << result.sweeps << "\npeak_floats "
      << result.peak_floats << "\n";
  return kSuccess;
}

struct EvalOptions {
  std::string model;
  std::string policy;
  std::size_t horizon = 0;  // 0: take the policy's horizon
  std::string init_obs = "dummy";
  std::optional<double> risk_lambda;
  std::size_t mc_episodes = 0;
  std::uint64_t seed = 0;
};

/// eval: prints {J_exact, J_risk?, mc_mean?, mc_stderr?} as one JSON object.
inline int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  Environment env;
  JointPolicy policy;
  try {
    policy = read_policy_json(options.policy);
    const std::size_t horizon = options.horizon ? options.horizon : policy.horizon();
    env = load_environment(options.model, horizon, parse_init_obs(options.init_obs), err);
    if (!policy.matches(env.model)) throw std::invalid_argument("policy dimensions do not match the model");
    if (options.risk_lambda && *options.risk_lambda < 0.0) throw std::invalid_argument("--risk-lambda must be >= 0");
  } catch (const ParseError&) {
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  try {
    nlohmann::json doc;
    doc["J_exact"] = evaluate_exact(env.model, policy);
    if (options.risk_lambda) doc["J_risk"] = evaluate_risk(env.model, policy, RiskParameter{*options.risk_lambda});
    if (options.mc_episodes > 0) {
      const auto mc = rollout_monte_carlo(env.model, policy, options.mc_episodes, options.seed,
                                          std::max(1u, std::thread::hardware_concurrency()));
      doc["mc_mean"] = mc.mean;
      doc["mc_stderr"] = mc.standard_error;
    }
    out << doc.dump() << "\n";
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  }
  return kSuccess;
}

/// Hyperparameter sweep description, read from JSON.
struct RunConfigFile {
  std::string model;
  std::string env;  // defaults to the model file stem
  std::vector<std::size_t> horizons;
  std::vector<std::vector<std::size_t>> agent_states;  // each entry: one shared size or one per agent
  std::vector<double> lambda0{0.0, 0.01, 0.02, 0.03, 0.1, 0.5, 1.0, 2.0};
  std::vector<double> alpha{0.1, 0.3, 0.5, 1.0};
  std::vector<std::size_t> anneal_sweeps{10, 50};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> ablations{"rs-cpi"};
  std::size_t max_sweeps = 300;
  std::string init_obs = "dummy";
  std::string out = "sweep-out";
  unsigned workers = 0;  // 0: hardware concurrency

  void validate() const {
    if (model.empty()) throw std::invalid_argument("config: 'model' is required");
    if (horizons.empty()) throw std::invalid_argument("config: 'horizons' must be nonempty");
    if (agent_states.empty()) throw std::invalid_argument("config: 'agent_states' must be nonempty");
    if (lambda0.empty()) throw std::invalid_argument("config: 'lambda0' must be nonempty");
    if (alpha.empty()) throw std::invalid_argument("config: 'alpha' must be nonempty");
    if (anneal_sweeps.empty()) throw std::invalid_argument("config: 'anneal_sweeps' must be nonempty");
    if (seeds.empty()) throw std::invalid_argument("config: 'seeds' must be nonempty");
    if (ablations.empty()) throw std::invalid_argument("config: 'ablations' must be nonempty");
    for (const auto& a : ablations) {
      bool rs = false, cpi = false;
      ablation_flags(a, rs, cpi);
    }
    for (auto h : horizons)
      if (h == 0) throw std::invalid_argument("config: horizons must be positive");
    for (const auto& z : agent_states)
      if (z.empty() || std::find(z.begin(), z.end(), 0u) != z.end())
        throw std::invalid_argument("config: agent-state sizes must be positive");
    for (auto k : anneal_sweeps)
      if (k > max_sweeps) throw std::invalid_argument("config: anneal_sweeps exceeds max_sweeps");
    parse_init_obs(init_obs);
  }
};

inline RunConfigFile config_from_json(const nlohmann::json& doc) {
  RunConfigFile c;
  try {
    c.model = doc.at("model").get<std::string>();
    if (doc.contains("env")) c.env = doc["env"].get<std::string>();
    c.horizons = doc.at("horizons").get<std::vector<std::size_t>>();
    for (const auto& z : doc.at("agent_states")) {
      if (z.is_array()) {
        c.agent_states.push_back(z.get<std::vector<std::size_t>>());
      } else {
        c.agent_states.push_back({z.get<std::size_t>()});
      }
    }
    if (doc.contains("lambda0")) c.lambda0 = doc["lambda0"].get<std::vector<double>>();
    if (doc.contains("alpha")) c.alpha = doc["alpha"].get<std::vector<double>>();
    if (doc.contains("anneal_sweeps")) c.anneal_sweeps = doc["anneal_sweeps"].get<std::vector<std::size_t>>();
    if (doc.contains("seeds")) c.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    if (doc.contains("ablations")) c.ablations = doc["ablations"].get<std::vector<std::string>>();
    if (doc.contains("max_sweeps")) c.max_sweeps = doc["max_sweeps"].get<std::size_t>();
    if (doc.contains("init_obs")) c.init_obs = doc["init_obs"].get<std::string>();
    if (doc.contains("out")) c.out = doc["out"].get<std::string>();
    if (doc.contains("workers")) c.workers = doc["workers"].get<unsigned>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfigFile read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return config_from_json(doc);
}

/// One grid point of a sweep.
struct GridPoint {
  std::size_t horizon = 0;
  std::vector<std::size_t> agent_states;
  std::string ablation;
  SolverConfig solver;
};

/// Expands the config into grid points in a fixed order: horizon, agent
/// states, ablation, lambda0, alpha, anneal sweeps, seed. Ablations force
/// lambda0 = 0 and/or alpha = 1; points that coincide after forcing (and
/// anneal-sweep variants of lambda0 = 0) are kept once.
inline std::vector<GridPoint> expand_grid(const RunConfigFile& config) {
  std::vector<GridPoint> out;
  for (auto T : config.horizons)
    for (const auto& z : config.agent_states)
      for (const auto& ablation : config.ablations) {
        bool no_rs = false, no_cpi = false;
        ablation_flags(ablation, no_rs, no_cpi);
        std::set<std::tuple<double, double, std::size_t, std::uint64_t>> seen;
        for (double l0 : config.lambda0)
          for (double a : config.alpha)
            for (auto k1 : config.anneal_sweeps)
              for (auto seed : config.seeds) {
                const double lambda0 = no_rs ? 0.0 : l0;
                const double alpha = no_cpi ? 1.0 : a;
                const std::size_t anneal = lambda0 == 0.0 ? config.anneal_sweeps.front() : k1;
                if (!seen.insert({lambda0, alpha, anneal, seed}).second) continue;
                GridPoint p;
                p.horizon = T;
                p.agent_states = z;
                p.ablation = ablation;
                p.solver.lambda0 = lambda0;
                p.solver.alpha = alpha;
                p.solver.anneal_sweeps = anneal;
                p.solver.seed = seed;
                p.solver.max_sweeps = config.max_sweeps;
                p.solver.agent_states = z;
                p.solver.disable_rs = no_rs;
                p.solver.disable_cpi = no_cpi;
                out.push_back(std::move(p));
              }
      }
  return out;
}

struct SweepOutcome {
  std::vector<RunRecord> records;   // successful rows in grid order
  std::vector<std::string> failures;  // "grid index,T,z,ablation,lambda0,alpha,K1,seed,message"
};

/// Runs every grid point on a bounded worker pool; results are committed in
/// grid order so the output does not depend on scheduling.
inline SweepOutcome run_sweep(const RunConfigFile& config, std::ostream& err) {
  const auto mode = parse_init_obs(config.init_obs);
  std::map<std::size_t, Environment> envs;
  for (auto T : config.horizons) {
    Environment e = load_environment(config.model, T, mode, err);
    if (!config.env.empty()) e.name = config.env;
    envs.emplace(T, std::move(e));
  }
  const std::vector<GridPoint> grid = expand_grid(config);
  std::vector<std::optional<RunRecord>> records(grid.size());
  std::vector<std::string> errors(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < grid.size(); k = next++) {
      const GridPoint& p = grid[k];
      const Environment& env = envs.at(p.horizon);
      try {
        SolveResult r = solve(env.model, p.solver);
        records[k] = make_record(env.name, env.model, p.solver, r);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned pool = std::max(1u, std::min<unsigned>(config.workers ? config.workers : hw,
                                                        static_cast<unsigned>(grid.size())));
  std::vector<std::thread> threads;
  for (unsigned w = 0; w < pool; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  SweepOutcome out;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (records[k]) {
      out.records.push_back(*records[k]);
    } else {
      const GridPoint& p = grid[k];
      std::string msg = errors[k];
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out.failures.push_back(std::to_string(k) + ',' + std::to_string(p.horizon) + ',' + join_sizes(p.agent_states) +
                             ',' + p.ablation + ',' + format_double(p.solver.lambda0) + ',' +
                             format_double(p.solver.alpha) + ',' + std::to_string(p.solver.anneal_sweeps) + ',' +
                             std::to_string(p.solver.seed) + ',' + msg);
    }
  }
  return out;
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0};
}

}  // namespace detail

/// Markdown report: per environment, rows = horizon and columns = (agent
/// states, ablation) with the best J over seeds and grid; then the best run of
/// every cell at full precision; then runtime and memory (mean ± std).
inline std::string render_report(const std::vector<RunRecord>& runs) {
  if (runs.empty()) throw std::invalid_argument("no runs to report");
  std::map<std::string, std::vector<const RunRecord*>> by_env;
  std::vector<std::string> env_order;
  for (const auto& r : runs) {
    if (!by_env.count(r.env)) env_order.push_back(r.env);
    by_env[r.env].push_back(&r);
  }
  auto ablation_rank = [](const std::string& a) {
    const auto& order = ablation_order();
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), a) - order.begin());
  };

  std::ostringstream out;
  out << "# Results\n";
  for (const auto& env : env_order) {
    const auto& rows = by_env[env];
    std::set<std::size_t> horizons;
    std::vector<std::pair<std::string, std::string>> columns;  // (z, ablation)
    for (const auto* r : rows) {
      horizons.insert(r->horizon);
      const std::pair<std::string, std::string> col{join_sizes(r->z_sizes), r->ablation};
      if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    }
    std::stable_sort(columns.begin(), columns.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return ablation_rank(a.second) < ablation_rank(b.second);
    });
    std::map<std::tuple<std::size_t, std::string, std::string>, const RunRecord*> best;
    std::map<std::tuple<std::size_t, std::string, std::string>, std::vector<const RunRecord*>> cells;
    for (const auto* r : rows) {
      const auto key = std::make_tuple(r->horizon, join_sizes(r->z_sizes), r->ablation);
      cells[key].push_back(r);
      auto it = best.find(key);
      if (it == best.end() || r->J_exact > it->second->J_exact) best[key] = r;
    }

    out << "\n## " << env << "\n\n| T |";
    for (const auto& c : columns) out << " Z=" << c.first << " " << c.second << " |";
    out << "\n|---|";
    for (std::size_t k = 0; k < columns.size(); ++k) out << "---|";
    out << "\n";
    for (auto T : horizons) {
      out << "| " << T << " |";
      for (const auto& c : columns) {
        auto it = best.find({T, c.first, c.second});
        out << ' ' << (it == best.end() ? std::string("-") : detail::fixed2(it->second->J_exact)) << " |";
      }
      out << "\n";
    }

    out << "\n### Best runs\n\n| T | Z | ablation | J | lambda0 | alpha | anneal_sweeps | seed | sweeps |\n"
           "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& [key, r] : best)
      out << "| " << r->horizon << " | " << join_sizes(r->z_sizes) << " | " << r->ablation << " | "
          << format_double(r->J_exact) << " | " << format_double(r->lambda0) << " | " << format_double(r->alpha)
          << " | " << r->anneal_sweeps << " | " << r->seed << " | " << r->sweeps << " |\n";

    out << "\n### Runtime and memory\n\n| T | Z | ablation | runs | wall_time_ms | peak_floats |\n"
           "|---|---|---|---|---|---|\n";
    for (const auto& [key, list] : cells) {
      std::vector<double> times, floats;
      for (const auto* r : list) {
        times.push_back(r->wall_time_ms);
        floats.push_back(static_cast<double>(r->peak_floats));
      }
      const auto [tm, ts] = detail::mean_std(times);
      const auto [fm, fsd] = detail::mean_std(floats);
      out << "| " << std::get<0>(key) << " | " << std::get<1>(key) << " | " << std::get<2>(key) << " | " << list.size()
          << " | " << detail::fixed2(tm) << " ± " << detail::fixed2(ts) << " | " << detail::fixed2(fm) << " ± "
          << detail::fixed2(fsd) << " |\n";
    }
  }
  return out.str();
}

/// sweep: runs the grid, writes runs.csv, failures.csv (if any) and report.md.
inline int cmd_sweep(const std::string& config_path, const std::optional<std::string>& out_override,
                     std::ostream& out, std::ostream& err) {
  RunConfigFile config;
  try {
    config = read_config_file(config_path);
    if (out_override) config.out = *out_override;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  SweepOutcome outcome;
  try {
    outcome = run_sweep(config, err);
  } catch (const ParseError&) {
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  try {
    fs::create_directories(config.out);
    const fs::path dir(config.out);
    const fs::path runs = dir / "runs.csv";
    fs::remove(runs);
    append_runs_csv(runs.string(), outcome.records);
    if (!outcome.failures.empty()) {
      std::ofstream f((dir / "failures.csv").string());
      f << "index,T,z_sizes,ablation,lambda0,alpha,anneal_sweeps,seed,message\n";
      for (const auto& line : outcome.failures) f << line << "\n";
      err << outcome.failures.size() << " grid point(s) failed; see failures.csv\n";
    }
    if (outcome.records.empty()) return kNumericError;
    const std::string report = render_report(outcome.records);
    std::ofstream((dir / "report.md").string()) << report;
    out << report;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kSuccess;
}

/// report: renders report.md from an existing runs.csv.
inline int cmd_report(const std::string& runs_path, const std::optional<std::string>& out_dir, std::ostream& out,
                      std::ostream& err) {
  try {
    const auto runs = read_runs_csv(runs_path);
    if (runs.empty()) throw std::invalid_argument("'" + runs_path + "' has no runs");
    const std::string report = render_report(runs);
    if (out_dir) {
      fs::create_directories(*out_dir);
      std::ofstream((fs::path(*out_dir) / "report.md").string()) << report;
    }
    out << report;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kSuccess;
}

}  // namespace rscpi::bench
