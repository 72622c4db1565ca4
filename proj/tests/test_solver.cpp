#include <gtest/gtest.h>

#include <cmath>

#include "rscpi/dpomdp_parser.hpp"
#include "rscpi/solver.hpp"
#include "test_util.hpp"

using namespace rscpi;
using namespace rscpi::testing;

namespace {

struct StepContext {
  PolicyLayout layout;
  MarginalTrajectory zeta;
  std::vector<TiltedValueTensor> values;  // t = T + 1 .. 1
  QSlice q;
};

/// Q slice at 0-based `step` for the current policy.
StepContext context(const DecPomdpModel& model, const JointPolicy& policy, std::size_t step, RiskParameter risk) {
  StepContext c{PolicyLayout(model, policy), forward_marginals(model, policy), backward_tilted_values(model, policy, risk),
                QSlice{CountedTensor(0, nullptr), false}};
  c.q.data = CountedTensor(c.layout.q_slice_size(), nullptr);
  compute_q_slice(model, c.layout, c.values[policy.horizon() - step - 1].values, risk, step + 1, c.q);
  return c;
}

/// J^risk_{t:T} of the policy at 0-based `step`.
double stage_objective(const DecPomdpModel& model, const JointPolicy& policy, std::size_t step, RiskParameter risk) {
  const MarginalTrajectory zeta = forward_marginals(model, policy);
  const auto values = backward_tilted_values(model, policy, risk);
  const auto& L = values[policy.horizon() - step];
  return stage_risk_objective(zeta.slice(step), L.values, L.tilted, risk);
}

AveragedLocalQ matrix_qbar(double p1, double p2, double lambda, std::size_t agent) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  const JointPolicy policy = matrix_policy(game, p1, p2);
  const StepContext c = context(game, policy, 0, RiskParameter{lambda});
  return averaged_local_q(c.layout, c.zeta.slice(0), policy, 0, c.q, RiskParameter{lambda}, agent);
}

}  // namespace

TEST(QSlice, MatrixGameBaseCase) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  const JointPolicy policy = matrix_policy(game, 0.3, 0.8);
  for (double lambda : {0.5, 1.0}) {
    const StepContext c = context(game, policy, 0, RiskParameter{lambda});
    const std::vector<double> payoffs{2, -10, -10, 6};
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(c.q.at(c.layout, 0, a), lambda * payoffs[a], 1e-15);
    const double L1 = c.values[1].values[0];
    const std::vector<double> w{0.3 * 0.8, 0.3 * 0.2, 0.7 * 0.8, 0.7 * 0.2};
    double direct = 0.0;
    for (std::size_t a = 0; a < 4; ++a) direct += w[a] * std::exp(lambda * payoffs[a]);
    EXPECT_NEAR(L1, std::log(direct), 1e-13);
  }
}

TEST(QSlice, ConstantRewardValues) {
  FactoredDynamics dyn;
  dyn.state_count = 2;
  dyn.action_counts = {2, 1};
  dyn.observation_counts = {2, 2};
  dyn.transition = {0.2, 0.8, 0.6, 0.4, 0.5, 0.5, 1.0, 0.0};
  dyn.observation = std::vector<double>(2 * 2 * 4, 0.25);
  dyn.reward = std::vector<double>(4, -2.0);
  dyn.start = {1.0, 0.0};
  const DecPomdpModel model = make_model(dyn, 4);
  const JointPolicy policy = random_policy(model, {2, 2}, 1);
  for (double lambda : {0.3, 1.0}) {
    const auto values = backward_tilted_values(model, policy, RiskParameter{lambda});
    for (double v : values.back().values) EXPECT_NEAR(v / lambda, -8.0, 1e-12);
  }
}

TEST(QSlice, NeutralValuesMatchExactEvaluation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed));
    const JointPolicy policy = random_policy(model, {2, 1}, seed);
    const auto values = backward_tilted_values(model, policy, RiskParameter{0.0});
    const double J = aggregate_values(initial_weights(model, policy), values.back().values, false, RiskParameter{0.0});
    EXPECT_NEAR(J, evaluate_exact(model, policy), 1e-9);
  }
}

TEST(AveragedLocalQ, FullyObservedSingleAgentEqualsQ) {
  const DecPomdpModel model = embed_mdp(random_mdp(3, 3, 2, 3));
  const JointPolicy policy = random_policy(model, {1}, 2);
  for (double lambda : {0.0, 0.7})
    for (std::size_t step = 0; step < 3; ++step) {
      const RiskParameter risk{lambda};
      const StepContext c = context(model, policy, step, risk);
      const AveragedLocalQ qbar = averaged_local_q(c.layout, c.zeta.slice(step), policy, step, c.q, risk, 0);
      for (std::size_t y = 0; y < 3; ++y) {
        if (!qbar.reachable(y)) continue;
        for (std::size_t a = 0; a < 2; ++a) EXPECT_NEAR(qbar.log_weight(y, a), c.q.at(c.layout, y * 3 + y, a), 1e-12);
      }
    }
}

TEST(AveragedLocalQ, MatrixGameNeutral) {
  const AveragedLocalQ qbar = matrix_qbar(0.5, 0.9, 0.0, 0);
  EXPECT_NEAR(qbar.value(0, 0), 0.8, 1e-14);
  EXPECT_NEAR(qbar.value(0, 1), -8.4, 1e-14);
}

TEST(AveragedLocalQ, MatrixGameRiskSeeking) {
  const AveragedLocalQ qbar = matrix_qbar(0.5, 0.9, 1.0, 0);
  EXPECT_GT(qbar.value(0, 1), qbar.value(0, 0));
  EXPECT_NEAR(qbar.value(0, 0), std::log(0.9 * std::exp(2.0) + 0.1 * std::exp(-10.0)), 1e-13);
  EXPECT_NEAR(qbar.value(0, 1), std::log(0.9 * std::exp(-10.0) + 0.1 * std::exp(6.0)), 1e-13);
}

TEST(GreedyUpdate, MatrixGameSteps) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  const JointPolicy policy = matrix_policy(game, 0.9, 0.9);
  EXPECT_EQ(greedy_agent_update(matrix_qbar(0.9, 0.9, 0.0, 0), policy.rule(0, 0)).choice[0], 0u);
  EXPECT_EQ(greedy_agent_update(matrix_qbar(0.9, 0.9, 1.0, 0), policy.rule(0, 0)).choice[0], 1u);
}

TEST(GreedyUpdate, TiesGoToSmallestIndex) {
  AveragedLocalQ qbar;
  qbar.observations = 1;
  qbar.agent_states = 2;
  qbar.actions = 2;
  qbar.weight = {3.0, 3.0, 3.0, 3.0};
  qbar.mass = {1.0};
  const DecisionRule incumbent = make_rule(1, 2, 2, {0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(greedy_agent_update(qbar, incumbent).choice[0], 0u);
}

TEST(GreedyUpdate, UnreachableRowsKeepIncumbent) {
  AveragedLocalQ qbar;
  qbar.observations = 2;
  qbar.agent_states = 1;
  qbar.actions = 2;
  qbar.weight = {0.0, 1.0, 0.0, 0.0};
  qbar.mass = {1.0, 0.0};
  const DecisionRule incumbent = make_rule(2, 1, 2, {0.5, 0.5, 0.2, 0.8});
  const DeterministicAgentSlice greedy = greedy_agent_update(qbar, incumbent);
  EXPECT_EQ(greedy.choice[0], 1u);
  EXPECT_EQ(greedy.reachable[1], 0);
  const DecisionRule mixed = mix_policies(incumbent, greedy, 1.0);
  EXPECT_EQ(mixed.at(1, 0), 0.2);
  EXPECT_EQ(mixed.at(1, 1), 0.8);
}

TEST(GreedyUpdate, LambdaArgmaxConsistency) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed, 3, 3));
    const JointPolicy policy = random_policy(model, {2, 1}, seed);
    const std::size_t step = seed % model.horizon();
    const std::size_t agent = seed % 2;
    for (double lambda : {1e-6, 0.1, 1.0, 5.0}) {
      const RiskParameter risk{lambda};
      const StepContext c = context(model, policy, step, risk);
      const AveragedLocalQ qbar = averaged_local_q(c.layout, c.zeta.slice(step), policy, step, c.q, risk, agent);
      const DeterministicAgentSlice greedy = greedy_agent_update(qbar, policy.rule(step, agent));
      // Explicit (1/lambda) log E[exp(lambda Q)] under the conditional of zeta_t and the others' rules.
      const DecisionRule& own = policy.rule(step, agent);
      std::vector<double> sum(own.rows() * own.columns(), 0.0), mass(own.rows(), 0.0);
      std::vector<double> others(c.layout.columns());
      const std::size_t Y = c.layout.observations, Z = c.layout.agent_states;
      for (std::size_t s = 0; s < c.layout.states; ++s)
        for (std::size_t row = 0; row < c.layout.rows(); ++row) {
          const double w = c.zeta.slice(step)[s * c.layout.rows() + row];
          if (w == 0.0) continue;
          const std::size_t r = c.layout.agent_row[agent][row];
          mass[r] += w;
          c.layout.joint_row(policy, step, row, others, agent);
          for (std::size_t col = 0; col < c.layout.columns(); ++col) {
            const double q = c.q.at(c.layout, s * Y * Z + row, col);
            const double value = q / lambda;  // tilted slice holds lambda * Q
            sum[r * own.columns() + c.layout.agent_column[agent][col]] += w * others[col] * std::exp(lambda * value);
          }
        }
      for (std::size_t r = 0; r < own.rows(); ++r) {
        if (mass[r] == 0.0) continue;
        std::vector<double> explicit_q(own.columns());
        for (std::size_t k = 0; k < own.columns(); ++k)
          explicit_q[k] = std::log(sum[r * own.columns() + k] / mass[r]) / lambda;
        const auto best = static_cast<std::size_t>(std::max_element(explicit_q.begin(), explicit_q.end()) -
                                                   explicit_q.begin());
        double runner_up = -INFINITY;
        for (std::size_t k = 0; k < own.columns(); ++k)
          if (k != best) runner_up = std::max(runner_up, explicit_q[k]);
        if (explicit_q[best] - runner_up < 1e-6) continue;  // numerically tied
        EXPECT_EQ(greedy.choice[r], best) << "seed " << seed << " lambda " << lambda;
      }
    }
  }
}

TEST(Sweep, MatrixGameNeutralReachesInferiorOptimum) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  JointPolicy policy = matrix_policy(game, 0.9, 0.9);
  const double J = sweep(game, policy, RiskParameter{0.0}, 1.0);
  EXPECT_EQ(prob_first_action(policy, 0), 1.0);
  EXPECT_EQ(prob_first_action(policy, 1), 1.0);
  EXPECT_NEAR(J, 2.0, 1e-12);
}

TEST(Sweep, MatrixGameRiskSeekingReachesBetterOptimum) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  JointPolicy policy = matrix_policy(game, 0.9, 0.9);
  sweep(game, policy, RiskParameter{1.0}, 1.0);
  EXPECT_EQ(prob_first_action(policy, 0), 0.0);
  EXPECT_EQ(prob_first_action(policy, 1), 0.0);
  EXPECT_NEAR(evaluate_exact(game, policy), 6.0, 1e-12);
}

TEST(Sweep, RiskObjectiveNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed));
    JointPolicy policy = random_policy(model, {1 + seed % 2, 2}, seed);
    const RiskParameter risk{seed % 3 == 0 ? 0.0 : 0.5 * static_cast<double>(seed % 3)};
    const double alpha = seed % 2 ? 1.0 : 0.3;
    const double before = evaluate_risk(model, policy, risk);
    const double after = sweep(model, policy, risk, alpha);
    EXPECT_GE(after, before - 1e-9) << "seed " << seed;
  }
}

TEST(Sweep, PerAgentOrderingAlsoImproves) {
  const DecPomdpModel model = random_model(7, {});
  JointPolicy policy = random_policy(model, {2, 2}, 7);
  const double before = evaluate_risk(model, policy, RiskParameter{0.5});
  SweepOptions options;
  options.ordering = AgentOrdering::per_agent_sweep;
  EXPECT_GE(sweep(model, policy, RiskParameter{0.5}, 0.5, options), before - 1e-9);
}

TEST(Sweep, StageObjectiveImprovesPerUpdate) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed));
    JointPolicy policy = random_policy(model, {2, 1 + seed % 2}, seed);
    const std::size_t step = seed % model.horizon();
    const std::size_t agent = (seed / 3) % 2;
    const RiskParameter risk{std::vector<double>{0.0, 0.1, 1.0}[seed % 3]};
    const double alpha = std::vector<double>{0.1, 0.5, 1.0}[(seed / 2) % 3];
    const double before = stage_objective(model, policy, step, risk);
    const StepContext c = context(model, policy, step, risk);
    const AveragedLocalQ qbar = averaged_local_q(c.layout, c.zeta.slice(step), policy, step, c.q, risk, agent);
    policy.rule(step, agent) = mix_policies(policy.rule(step, agent), greedy_agent_update(qbar, policy.rule(step, agent)), alpha);
    EXPECT_GE(stage_objective(model, policy, step, risk), before - 1e-9) << "seed " << seed;
  }
}

TEST(Sweep, RejectsBadArguments) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  JointPolicy policy = matrix_policy(game, 0.5, 0.5);
  EXPECT_THROW(sweep(game, policy, RiskParameter{-1.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(sweep(game, policy, RiskParameter{0.0}, 1.5), std::invalid_argument);
}

TEST(Solver, LambdaSchedule) {
  SolverConfig config;
  config.lambda0 = 2.0;
  config.anneal_sweeps = 4;
  EXPECT_EQ(config.lambda_at(1), 2.0);
  EXPECT_EQ(config.lambda_at(3), 1.0);
  EXPECT_EQ(config.lambda_at(5), 0.0);
  EXPECT_EQ(config.lambda_at(50), 0.0);
  config.disable_rs = true;
  EXPECT_EQ(config.lambda_at(1), 0.0);
  config.disable_cpi = true;
  config.alpha = 0.2;
  EXPECT_EQ(config.effective_alpha(), 1.0);
}

TEST(Solver, ConfigValidation) {
  SolverConfig config;
  config.alpha = 0.0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.lambda0 = -1.0;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.max_sweeps = 5;
  config.anneal_sweeps = 10;
  EXPECT_THROW(config.validate(), std::invalid_argument);
  config = {};
  config.agent_states = {2, 3, 4};
  EXPECT_THROW(config.agent_state_counts(2), std::invalid_argument);
}

TEST(Solver, MatrixGameRiskSeekingFromLowStart) {
  const DecPomdpModel game = matrix_game_model(kMatrixPayoffs);
  SolverConfig config;
  config.lambda0 = 1.0;
  config.anneal_sweeps = 1;
  config.alpha = 1.0;
  const SolveResult result = solve_from(game, matrix_policy(game, 0.1, 0.1), config);
  EXPECT_EQ(prob_first_action(result.policy, 0), 0.0);
  EXPECT_EQ(prob_first_action(result.policy, 1), 0.0);
  EXPECT_NEAR(result.J, 6.0, 1e-12);
}

TEST(Solver, MdpEmbeddingMatchesRiskValueIteration) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FiniteMdp mdp = random_mdp(seed, 3, 2, 4);
    const DecPomdpModel model = embed_mdp(mdp);
    for (double lambda : {0.0, 0.5, 1.0}) {
      JointPolicy policy = random_policy(model, {1}, seed);
      const double J = sweep(model, policy, RiskParameter{lambda}, 1.0);
      EXPECT_NEAR(J, risk_value_iteration(mdp, RiskParameter{lambda}).objective, 1e-9);
    }
  }
}

TEST(Solver, NeutralSweepsAreMonotoneInFullObjective) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed));
    JointPolicy policy = random_policy(model, {2, 2}, seed);
    double previous = evaluate_exact(model, policy);
    for (int k = 0; k < 5; ++k) {
      const double J = sweep(model, policy, RiskParameter{0.0}, 0.4);
      EXPECT_GE(J, previous - 1e-9);
      previous = J;
    }
  }
}

TEST(Solver, PeakFloatsMatchClosedForm) {
  const DecPomdpModel tiger = load_dpomdp(RSCPI_BENCHMARK_DIR "/dectiger.dpomdp", 5);
  SolverConfig config;
  config.agent_states = {2};
  config.max_sweeps = 12;
  const SolveResult result = solve(tiger, config);
  EXPECT_EQ(result.peak_floats, expected_peak_floats(tiger, {2, 2}));
  EXPECT_EQ(result.peak_floats, 5u * 72 + 2 * 72 + 72 * 9 * 4);
}

TEST(Solver, DeterministicAcrossRunsAndWorkers) {
  const DecPomdpModel model = random_model(8, {});
  SolverConfig config;
  config.agent_states = {2};
  config.restarts = 4;
  config.alpha = 0.5;
  config.lambda0 = 0.5;
  const SolveResult a = solve(model, config);
  config.workers = 3;
  const SolveResult b = solve(model, config);
  EXPECT_TRUE(a.policy == b.policy);
  EXPECT_EQ(a.J, b.J);
  EXPECT_EQ(a.seed, b.seed);
}

TEST(Solver, BestRestartWins) {
  const DecPomdpModel model = random_model(9, {});
  SolverConfig config;
  config.agent_states = {1};
  config.restarts = 3;
  const SolveResult best = solve(model, config);
  for (std::uint64_t r = 0; r < 3; ++r) {
    SolverConfig single = config;
    single.restarts = 1;
    single.seed = r;
    EXPECT_LE(solve(model, single).J, best.J);
  }
}

TEST(Solver, TraceRecordsEverySweep) {
  const DecPomdpModel model = random_model(10, {});
  SolverConfig config;
  config.lambda0 = 1.0;
  config.anneal_sweeps = 5;
  const SolveResult result = solve(model, config);
  ASSERT_EQ(result.trace.size(), result.sweeps);
  EXPECT_GE(result.sweeps, 6u);
  EXPECT_EQ(result.trace.front().lambda, 1.0);
  EXPECT_EQ(result.trace.back().lambda, 0.0);
  EXPECT_EQ(result.J, result.trace.back().J);
}

TEST(Solver, FixpointAtAlphaOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DecPomdpModel model = random_model(seed, random_shape(seed, 3, 3));
    JointPolicy policy = random_policy(model, {1 + seed % 2, 1}, seed);
    bool converged = false;
    for (int k = 0; k < 50 && !converged; ++k) {
      const JointPolicy before = policy;
      sweep(model, policy, RiskParameter{seed % 2 ? 1.0 : 0.0}, 1.0);
      converged = policy == before;
    }
    EXPECT_TRUE(converged) << "seed " << seed;
  }
}

TEST(Solver, DecTigerWithoutRsOrCpiStaysAtListening) {
  const DecPomdpModel tiger = load_dpomdp(RSCPI_BENCHMARK_DIR "/dectiger.dpomdp", 6);
  SolverConfig config;
  config.agent_states = {2};
  config.disable_rs = true;
  config.disable_cpi = true;
  config.restarts = 5;
  config.workers = 4;
  EXPECT_NEAR(solve(tiger, config).J, -12.0, 0.01);
}
