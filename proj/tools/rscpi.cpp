// Command-line front end: solve, sweep, eval and report.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rscpi/bench.hpp"

namespace {

void add_model_flags(CLI::App& cmd, std::string& model, std::string& init_obs) {
  cmd.add_option("--model", model, "path to a .dpomdp file or builtin:matrix-game")->required();
  cmd.add_option("--init-obs", init_obs, "initial observation handling: dummy or uniform")
      ->check(CLI::IsMember({"dummy", "uniform"}));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rscpi::bench;
  CLI::App app{"Risk-seeking conservative policy iteration for finite-horizon Dec-POMDPs"};
  app.require_subcommand(1);

  SolveOptions solve;
  auto* solve_cmd = app.add_subcommand("solve", "optimize a finite-state controller policy");
  add_model_flags(*solve_cmd, solve.model, solve.init_obs);
  solve_cmd->add_option("--horizon", solve.horizon, "planning horizon")->check(CLI::PositiveNumber);
  solve_cmd->add_option("--agent-states", solve.agent_states, "agent-state count, shared or one per agent")
      ->expected(1, -1)
      ->delimiter(',');
  solve_cmd->add_option("--lambda0", solve.solver.lambda0, "initial risk parameter");
  solve_cmd->add_option("--alpha", solve.solver.alpha, "conservative step size in (0, 1]");
  solve_cmd->add_option("--anneal-sweeps", solve.solver.anneal_sweeps, "sweeps over which lambda decays to 0");
  solve_cmd->add_option("--max-sweeps", solve.solver.max_sweeps, "sweep budget");
  solve_cmd->add_option("--tolerance", solve.solver.tolerance, "convergence threshold at lambda = 0");
  solve_cmd->add_option("--seed", solve.solver.seed, "seed of the random initial policy");
  solve_cmd->add_option("--restarts", solve.solver.restarts, "random restarts (seeds seed, seed+1, ...)");
  solve_cmd->add_flag("--no-rs", solve.solver.disable_rs, "disable risk seeking (lambda = 0)");
  solve_cmd->add_flag("--no-cpi", solve.solver.disable_cpi, "disable conservative updates (alpha = 1)");
  solve_cmd->add_option("--out", solve.out, "output directory");

  std::string sweep_config;
  std::optional<std::string> sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a hyperparameter grid from a JSON config");
  sweep_cmd->add_option("--config", sweep_config, "sweep config file")->required();
  sweep_cmd->add_option("--out", sweep_out, "output directory (overrides the config)");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved policy");
  add_model_flags(*eval_cmd, eval.model, eval.init_obs);
  eval_cmd->add_option("--policy", eval.policy, "policy.json written by solve")->required();
  eval_cmd->add_option("--horizon", eval.horizon, "horizon (defaults to the policy's)");
  eval_cmd->add_option("--risk-lambda", eval.risk_lambda, "also report the entropic objective at this lambda");
  eval_cmd->add_option("--mc", eval.mc_episodes, "Monte Carlo episodes");
  eval_cmd->add_option("--seed", eval.seed, "Monte Carlo seed");

  std::string report_runs;
  std::optional<std::string> report_out;
  auto* report_cmd = app.add_subcommand("report", "render report.md from runs.csv");
  report_cmd->add_option("--runs", report_runs, "runs.csv")->required();
  report_cmd->add_option("--out", report_out, "directory for report.md");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kInputError;
  }

  if (*solve_cmd) return cmd_solve(solve, std::cout, std::cerr);
  if (*sweep_cmd) return cmd_sweep(sweep_config, sweep_out, std::cout, std::cerr);
  if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
  return cmd_report(report_runs, report_out, std::cout, std::cerr);
}
