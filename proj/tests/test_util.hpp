#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rscpi/evaluation.hpp"
#include "rscpi/model.hpp"
#include "rscpi/policy.hpp"
#include "rscpi/risk.hpp"
#include "rscpi/rng.hpp"

namespace rscpi::testing {

inline const std::vector<std::vector<double>> kMatrixPayoffs = {{2.0, -10.0}, {-10.0, 6.0}};

inline std::vector<double> random_simplex(Engine& engine, std::size_t n, double sparsity = 0.0) {
  std::exponential_distribution<double> e(1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  double total = 0.0;
  for (auto& v : out) {
    v = u(engine) < sparsity ? 0.0 : e(engine);
    total += v;
  }
  if (total == 0.0) {
    out[std::uniform_int_distribution<std::size_t>(0, n - 1)(engine)] = 1.0;
    return out;
  }
  for (auto& v : out) v /= total;
  return out;
}

struct RandomModelShape {
  std::size_t states = 2;
  std::vector<std::size_t> actions{2, 2};
  std::vector<std::size_t> observations{2, 2};
  std::size_t horizon = 3;
  double sparsity = 0.0;  // chance of a zero entry in each kernel row
  InitialObservationMode mode = InitialObservationMode::dummy_observation;
};

/// Random Dec-POMDP with Dirichlet kernels and rewards uniform in [-5, 5].
inline DecPomdpModel random_model(std::uint64_t seed, const RandomModelShape& shape) {
  Engine engine(derive_seed(seed, 0x5eed));
  FactoredDynamics dyn;
  dyn.state_count = shape.states;
  dyn.action_counts = shape.actions;
  dyn.observation_counts = shape.observations;
  const std::size_t A = JointIndexer(shape.actions).size();
  const std::size_t Y = JointIndexer(shape.observations).size();
  const std::size_t S = shape.states;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a) {
      auto row = random_simplex(engine, S, shape.sparsity);
      dyn.transition.insert(dyn.transition.end(), row.begin(), row.end());
    }
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t s = 0; s < S; ++s) {
      auto row = random_simplex(engine, Y, shape.sparsity);
      dyn.observation.insert(dyn.observation.end(), row.begin(), row.end());
    }
  std::uniform_real_distribution<double> reward(-5.0, 5.0);
  dyn.reward.resize(S * A);
  for (auto& r : dyn.reward) r = reward(engine);
  dyn.start = random_simplex(engine, S);
  return make_model(dyn, shape.horizon, shape.mode);
}

/// Random shape with at most `max_states` states, two agents and small spaces.
inline RandomModelShape random_shape(std::uint64_t seed, std::size_t max_states = 4, std::size_t max_horizon = 4) {
  Engine engine(derive_seed(seed, 0x5a9e));
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(engine); };
  RandomModelShape shape;
  shape.states = pick(1, max_states);
  shape.actions = {pick(1, 3), pick(1, 3)};
  shape.observations = {pick(1, 2), pick(1, 2)};
  shape.horizon = pick(1, max_horizon);
  shape.sparsity = pick(0, 1) ? 0.3 : 0.0;
  shape.mode = pick(0, 1) ? InitialObservationMode::dummy_observation : InitialObservationMode::uniform_observation;
  return shape;
}

inline DecisionRule make_rule(std::size_t observations, std::size_t agent_states, std::size_t actions,
                              std::vector<double> table) {
  DecisionRule rule(observations, agent_states, actions);
  rule.table = std::move(table);
  return rule;
}

/// Matrix-game policy with pi^1(a1) = p1 and pi^2(a2) = p2.
inline JointPolicy matrix_policy(const DecPomdpModel& game, double p1, double p2) {
  JointPolicy policy(game, {1, 1});
  policy.rule(0, 0).table = {p1, 1.0 - p1};
  policy.rule(0, 1).table = {p2, 1.0 - p2};
  return policy;
}

inline double prob_first_action(const JointPolicy& policy, std::size_t agent) {
  return policy.rule(0, agent).table[0];
}

/// Random finite-horizon MDP.
inline FiniteMdp random_mdp(std::uint64_t seed, std::size_t states, std::size_t actions, std::size_t horizon) {
  Engine engine(derive_seed(seed, 0x3d9));
  FiniteMdp mdp;
  mdp.state_count = states;
  mdp.action_count = actions;
  mdp.horizon = horizon;
  for (std::size_t k = 0; k < states * actions; ++k) {
    auto row = random_simplex(engine, states);
    mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
  }
  std::uniform_real_distribution<double> reward(-3.0, 3.0);
  mdp.reward.resize(states * actions);
  for (auto& r : mdp.reward) r = reward(engine);
  mdp.initial = random_simplex(engine, states);
  return mdp;
}

/// Single-agent Dec-POMDP that observes its state exactly, including at t = 1.
inline DecPomdpModel embed_mdp(const FiniteMdp& mdp) {
  const std::size_t S = mdp.state_count, A = mdp.action_count;
  std::vector<double> observation(A * S * S, 0.0);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t s = 0; s < S; ++s) observation[(a * S + s) * S + s] = 1.0;
  std::vector<double> initial(S * S, 0.0);
  for (std::size_t s = 0; s < S; ++s) initial[s * S + s] = mdp.initial[s];
  return DecPomdpModel(S, {A}, {S}, mdp.transition, std::move(observation), mdp.reward, std::move(initial),
                       mdp.horizon, {}, InitialObservationMode::uniform_observation);
}

/// pi_t(a, z | y, z_prev) for joint indices, as the product of the agents' rules.
inline double joint_rule_probability(const DecPomdpModel& model, const JointPolicy& policy, std::size_t step,
                                     std::size_t y, std::size_t zp, std::size_t a, std::size_t z) {
  const JointIndexer& zs = policy.joint_agent_states();
  double p = 1.0;
  for (std::size_t i = 0; i < model.agent_count(); ++i) {
    const DecisionRule& rule = policy.rule(step, i);
    const std::size_t row = rule.row_index(model.joint_observations().digit(y, i), zs.digit(zp, i));
    const std::size_t col = rule.column_index(model.joint_actions().digit(a, i), zs.digit(z, i));
    p *= rule.at(row, col);
  }
  return p;
}

/// Forward-sum value: sum_t sum zeta_t(s, y, z_prev) sum_{a,z} pi_t(a, z | y, z_prev) r(s, a).
inline double forward_sum_value(const DecPomdpModel& model, const JointPolicy& policy) {
  const MarginalTrajectory zeta = forward_marginals(model, policy);
  const std::size_t S = model.state_count(), Y = model.joint_observations().size();
  const std::size_t Z = policy.joint_agent_states().size(), A = model.joint_actions().size();
  double J = 0.0;
  for (std::size_t t = 0; t < policy.horizon(); ++t) {
    const auto slice = zeta.slice(t);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t y = 0; y < Y; ++y)
        for (std::size_t zp = 0; zp < Z; ++zp) {
          const double w = slice[(s * Y + y) * Z + zp];
          if (w == 0.0) continue;
          for (std::size_t a = 0; a < A; ++a)
            for (std::size_t z = 0; z < Z; ++z)
              J += w * joint_rule_probability(model, policy, t, y, zp, a, z) * model.reward(s, a);
        }
  }
  return J;
}

/// Exhaustive enumeration of every (s, y, z, a) path. `visit` receives the
/// path probability and the accumulated reward at the end of each path, and
/// `at_step` (when set) receives the probability of each (step, s, y, z_prev)
/// prefix as it is entered.
inline void enumerate_paths(
    const DecPomdpModel& model, const JointPolicy& policy, const std::function<void(double, double)>& visit,
    const std::function<void(std::size_t, std::size_t, std::size_t, std::size_t, double)>& at_step = {}) {
  const std::size_t S = model.state_count(), Y = model.joint_observations().size();
  const std::size_t Z = policy.joint_agent_states().size(), A = model.joint_actions().size();
  const std::size_t T = policy.horizon();
  std::function<void(std::size_t, std::size_t, std::size_t, std::size_t, double, double)> rec =
      [&](std::size_t t, std::size_t s, std::size_t y, std::size_t zp, double p, double total) {
        if (at_step) at_step(t, s, y, zp, p);
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t z = 0; z < Z; ++z) {
            const double pa = p * joint_rule_probability(model, policy, t, y, zp, a, z);
            if (pa == 0.0) continue;
            const double reward = total + model.reward(s, a);
            if (t + 1 == T) {
              visit(pa, reward);
              continue;
            }
            for (std::size_t sp = 0; sp < S; ++sp)
              for (std::size_t yp = 0; yp < Y; ++yp) {
                const double q = pa * model.dynamics(s, a, sp, yp);
                if (q > 0.0) rec(t + 1, sp, yp, z, q, reward);
              }
          }
      };
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t y = 0; y < Y; ++y)
      for (std::size_t z = 0; z < Z; ++z) {
        const double p = model.initial(s, y) * policy.initial_probability(z);
        if (p > 0.0) rec(0, s, y, z, p, 0.0);
      }
}

/// (1/lambda) log E[exp(lambda * total reward)] by path enumeration (the mean at lambda = 0).
inline double brute_force_risk(const DecPomdpModel& model, const JointPolicy& policy, double lambda) {
  double mass = 0.0, acc = 0.0, shift = -INFINITY;
  std::vector<std::pair<double, double>> paths;
  enumerate_paths(model, policy, [&](double p, double total) { paths.emplace_back(p, total); });
  if (lambda == 0.0) {
    for (auto [p, x] : paths) acc += p * x, mass += p;
    return acc / mass;
  }
  for (auto [p, x] : paths) shift = std::max(shift, lambda * x);
  for (auto [p, x] : paths) acc += p * std::exp(lambda * x - shift), mass += p;
  return (shift + std::log(acc / mass)) / lambda;
}

}  // namespace rscpi::testing
