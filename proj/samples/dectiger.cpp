// Solves Dec-Tiger with two-state controllers and prints the policy.
// Usage: sample_dectiger [path/to/dectiger.dpomdp] [horizon]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "rscpi/dpomdp_parser.hpp"
#include "rscpi/solver.hpp"

int main(int argc, char** argv) {
  using namespace rscpi;
  const std::string path = argc > 1 ? argv[1] : "benchmarks/dectiger.dpomdp";
  const std::size_t horizon = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 6;
  const DecPomdpModel model = load_dpomdp(path, horizon);

  SolverConfig config;
  config.agent_states = {2};
  config.lambda0 = 0.02;
  config.alpha = 0.3;
  config.anneal_sweeps = 10;
  config.restarts = 5;
  config.workers = 5;
  const SolveResult result = solve(model, config);

  std::printf("T = %zu  J = %.6f  sweeps = %zu  seed = %llu  peak floats = %zu\n", horizon, result.J, result.sweeps,
              static_cast<unsigned long long>(result.seed), result.peak_floats);
  std::printf("%s", dump_policy(result.policy, model).c_str());
  return 0;
}
