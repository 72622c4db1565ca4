// Risk-neutral versus risk-seeking best responses on the two-player matrix
// game with payoffs 2 / -10 / -10 / 6, starting from pi(a1) = pi(a2) = 0.9.

#include <cstdio>

#include "rscpi/solver.hpp"

int main() {
  using namespace rscpi;
  const DecPomdpModel game = matrix_game_model({{2.0, -10.0}, {-10.0, 6.0}});
  for (double lambda : {0.0, 1.0}) {
    JointPolicy policy(game, {1, 1});
    policy.rule(0, 0).table = {0.9, 0.1};
    policy.rule(0, 1).table = {0.9, 0.1};
    std::printf("lambda = %g: (%.1f, %.1f)", lambda, policy.rule(0, 0).table[0], policy.rule(0, 1).table[0]);
    SweepOptions options;
    options.observer = [&](const AveragedLocalQ& qbar, const DeterministicAgentSlice& greedy, const DecisionRule&) {
      // Show the position after this agent's update.
      const double p = greedy.choice[0] == 0 ? 1.0 : 0.0;
      const double p1 = qbar.agent == 0 ? p : policy.rule(0, 0).table[0];
      const double p2 = qbar.agent == 1 ? p : policy.rule(0, 1).table[0];
      std::printf(" -> (%.1f, %.1f)", p1, p2);
    };
    sweep(game, policy, RiskParameter{lambda}, 1.0, options);
    std::printf("  J = %g\n", evaluate_exact(game, policy));
    std::printf("%s", dump_policy(policy, game).c_str());
  }
  return 0;
}
