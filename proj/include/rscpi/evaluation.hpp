#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "rscpi/backup.hpp"
#include "rscpi/model.hpp"
#include "rscpi/policy.hpp"
#include "rscpi/risk.hpp"
#include "rscpi/rng.hpp"

namespace rscpi {

/// Forward occupancies zeta_t(s, y, z_prev) for t = 1..T, stored contiguously
/// as [t][s][y][z_prev].
struct MarginalTrajectory {
  std::size_t horizon = 0;
  std::size_t slice_size = 0;
  CountedTensor data;

  std::span<const double> slice(std::size_t step) const { return {data.data() + step * slice_size, slice_size}; }
  std::span<double> slice(std::size_t step) { return {data.data() + step * slice_size, slice_size}; }
};

namespace detail {

/// Renormalizes a probability tensor that drifted by at most `tol`.
inline void renormalize(std::span<double> values, std::size_t step, double tol = 1e-8) {
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("invalid marginal entry at t = " + std::to_string(step));
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol)
    throw NumericError("marginal at t = " + std::to_string(step) + " sums to " + std::to_string(sum));
  for (double& v : values) v /= sum;
}

}  // namespace detail

/// zeta_1 = zeta1 (x) phi, then zeta_{t+1}(s+, y+, z) =
///   sum zeta_t(s, y, z_prev) pi_t(a, z | y, z_prev) T(s+|s,a) O(y+|a,s+),
/// evaluated as three contractions (over (y, z_prev), then s, then a).
inline MarginalTrajectory forward_marginals(const DecPomdpModel& model, const JointPolicy& policy,
                                            FloatCounter* counter = nullptr) {
  const PolicyLayout layout(model, policy);
  const std::size_t S = layout.states, Y = layout.observations, Z = layout.agent_states, A = layout.actions;
  const std::size_t T = policy.horizon();
  MarginalTrajectory out{T, layout.value_size(), CountedTensor(T * layout.value_size(), counter)};

  auto first = out.slice(0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t y = 0; y < Y; ++y)
      for (std::size_t z = 0; z < Z; ++z) first[(s * Y + y) * Z + z] = model.initial(s, y) * policy.initial_probability(z);
  detail::renormalize(first, 1);

  std::vector<double> joint(layout.columns());
  std::vector<double> by_action(S * A * Z);  // sum over (y, z_prev)
  std::vector<double> by_next(S * Z);        // sum over s, for one a
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const auto cur = out.slice(t);
    auto next = out.slice(t + 1);
    std::fill(by_action.begin(), by_action.end(), 0.0);
    for (std::size_t row = 0; row < layout.rows(); ++row) {
      layout.joint_row(policy, t, row, joint);
      for (std::size_t s = 0; s < S; ++s) {
        const double w = cur[s * layout.rows() + row];
        if (w == 0.0) continue;
        double* dst = by_action.data() + s * A * Z;
        for (std::size_t c = 0; c < joint.size(); ++c) dst[c] += w * joint[c];
      }
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t a = 0; a < A; ++a) {
      std::fill(by_next.begin(), by_next.end(), 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        const double* m = by_action.data() + (s * A + a) * Z;
        const auto trans = model.transition_row(s, a);
        for (std::size_t sp = 0; sp < S; ++sp) {
          if (trans[sp] == 0.0) continue;
          for (std::size_t z = 0; z < Z; ++z) by_next[sp * Z + z] += trans[sp] * m[z];
        }
      }
      for (std::size_t sp = 0; sp < S; ++sp) {
        const auto obs = model.observation_row(a, sp);
        for (std::size_t y = 0; y < Y; ++y) {
          if (obs[y] == 0.0) continue;
          for (std::size_t z = 0; z < Z; ++z) next[(sp * Y + y) * Z + z] += obs[y] * by_next[sp * Z + z];
        }
      }
    }
    detail::renormalize(next, t + 2);
  }
  return out;
}

/// Exact expected total reward through the time-varying Markov chain on
/// (s, y, z): Vtilde_t = rbar_t + Pbar_t Vtilde_{t+1}, with rbar_t the
/// policy's action marginal applied to r and Pbar_t applied implicitly.
inline double evaluate_exact(const DecPomdpModel& model, const JointPolicy& policy) {
  const PolicyLayout layout(model, policy);
  const std::size_t S = layout.states, Y = layout.observations, Z = layout.agent_states, A = layout.actions;
  const std::size_t rows = layout.rows();
  std::vector<double> value(layout.value_size(), 0.0);  // Vtilde_{t+1}
  std::vector<double> updated(layout.value_size());
  std::vector<double> joint(layout.columns());
  std::vector<double> expected_next(S * A * Z);  // sum_{s+,y+} P(s+,y+|s,a) Vtilde_{t+1}(s+,y+,z)
  std::vector<double> action_marginal(A);

  for (std::size_t t = policy.horizon(); t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        const auto trans = model.transition_row(s, a);
        for (std::size_t z = 0; z < Z; ++z) {
          double acc = 0.0;
          for (std::size_t sp = 0; sp < S; ++sp) {
            if (trans[sp] == 0.0) continue;
            const auto obs = model.observation_row(a, sp);
            double inner = 0.0;
            for (std::size_t y = 0; y < Y; ++y) inner += obs[y] * value[(sp * Y + y) * Z + z];
            acc += trans[sp] * inner;
          }
          expected_next[(s * A + a) * Z + z] = acc;
        }
      }
    for (std::size_t row = 0; row < rows; ++row) {
      layout.joint_row(policy, t, row, joint);
      std::fill(action_marginal.begin(), action_marginal.end(), 0.0);
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t z = 0; z < Z; ++z) action_marginal[a] += joint[a * Z + z];
      for (std::size_t s = 0; s < S; ++s) {
        double reward = 0.0;
        for (std::size_t a = 0; a < A; ++a) reward += action_marginal[a] * model.reward(s, a);
        double future = 0.0;
        const double* e = expected_next.data() + s * A * Z;
        for (std::size_t c = 0; c < joint.size(); ++c) future += joint[c] * e[c];
        updated[s * rows + row] = reward + future;
      }
    }
    value.swap(updated);
  }

  double J = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t y = 0; y < Y; ++y) {
      const double w = model.initial(s, y);
      if (w == 0.0) continue;
      for (std::size_t z = 0; z < Z; ++z) J += w * policy.initial_probability(z) * value[(s * Y + y) * Z + z];
    }
  return J;
}

/// Initial weights zeta1(s, y) * phi(z0) over the value-tensor layout.
inline std::vector<double> initial_weights(const DecPomdpModel& model, const JointPolicy& policy) {
  const PolicyLayout layout(model, policy);
  std::vector<double> w(layout.value_size());
  for (std::size_t s = 0; s < layout.states; ++s)
    for (std::size_t y = 0; y < layout.observations; ++y)
      for (std::size_t z = 0; z < layout.agent_states; ++z)
        w[(s * layout.observations + y) * layout.agent_states + z] = model.initial(s, y) * policy.initial_probability(z);
  return w;
}

/// Risk-seeking performance (1/lambda) log sum zeta1 phi exp(lambda V_1), or the
/// plain expectation when lambda is below the zero threshold. Only the current
/// pair of value tensors is kept.
inline double evaluate_risk(const DecPomdpModel& model, const JointPolicy& policy, RiskParameter risk) {
  if (risk.lambda < 0.0) throw std::invalid_argument("evaluate_risk: lambda must be nonnegative");
  const PolicyLayout layout(model, policy);
  std::vector<double> next(layout.value_size(), 0.0), cur(layout.value_size());
  QSlice q{CountedTensor(layout.q_slice_size(), nullptr), false};
  for (std::size_t t = policy.horizon(); t-- > 0;) {
    compute_q_slice(model, layout, next, risk, t + 1, q);
    compute_values(policy, layout, t, q, cur);
    next.swap(cur);
  }
  return aggregate_values(initial_weights(model, policy), next, !risk.neutral(), risk);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t episodes = 0;
};

/// Episodes simulated per independently seeded shard. The shard layout (and
/// therefore the result) depends only on (episodes, seed), not on `workers`.
inline constexpr std::size_t kRolloutShardSize = 4096;

/// Simulates the generative process: (s1, y1) ~ zeta1, z0^i ~ phi^i, each agent
/// draws (a^i, z^i) from its decision rule, the team collects r(s, a), and
/// (s+, y+) ~ T(.|s,a) O(.|a,s+). Returns the sample mean of total reward and
/// its standard error.
inline MonteCarloEstimate rollout_monte_carlo(const DecPomdpModel& model, const JointPolicy& policy,
                                              std::size_t episodes, std::uint64_t seed, unsigned workers = 1) {
  if (episodes == 0) throw std::invalid_argument("rollout_monte_carlo: episodes must be positive");
  if (!policy.matches(model)) throw std::invalid_argument("policy dimensions do not match the model");
  const std::size_t N = model.agent_count();
  const JointIndexer& obs = model.joint_observations();
  const JointIndexer& acts = model.joint_actions();
  const std::size_t shards = (episodes + kRolloutShardSize - 1) / kRolloutShardSize;

  struct Moments {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;
  };
  std::vector<Moments> moments(shards);

  auto run_shard = [&](std::size_t shard) {
    Engine engine(derive_seed(seed, shard));
    const std::size_t begin = shard * kRolloutShardSize;
    const std::size_t count = std::min(kRolloutShardSize, episodes - begin);
    std::vector<std::size_t> y_digits(N), z(N), a_digits(N);
    Moments m;
    for (std::size_t e = 0; e < count; ++e) {
      const std::size_t sy = sample_index(engine, model.initial_table());
      std::size_t s = sy / obs.size(), y = sy % obs.size();
      for (std::size_t i = 0; i < N; ++i) z[i] = sample_index(engine, policy.initial_state(i));
      double total = 0.0;
      for (std::size_t t = 0; t < policy.horizon(); ++t) {
        obs.decode(y, y_digits);
        for (std::size_t i = 0; i < N; ++i) {
          const DecisionRule& rule = policy.rule(t, i);
          const std::size_t c = sample_index(engine, rule.row(rule.row_index(y_digits[i], z[i])));
          a_digits[i] = c / rule.agent_states;
          z[i] = c % rule.agent_states;
        }
        const std::size_t a = acts.encode(a_digits);
        total += model.reward(s, a);
        if (t + 1 == policy.horizon()) break;
        const std::size_t sp = sample_index(engine, model.transition_row(s, a));
        y = sample_index(engine, model.observation_row(a, sp));
        s = sp;
      }
      m.count += 1.0;
      const double delta = total - m.mean;
      m.mean += delta / m.count;
      m.m2 += delta * (total - m.mean);
    }
    moments[shard] = m;
  };

  const unsigned pool = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(shards)));
  if (pool == 1) {
    for (std::size_t k = 0; k < shards; ++k) run_shard(k);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < pool; ++w)
      threads.emplace_back([&, w] {
        for (std::size_t k = w; k < shards; k += pool) run_shard(k);
      });
    for (auto& th : threads) th.join();
  }

  // Pairwise merge of the shard moments, in shard order.
  Moments all;
  for (const auto& m : moments) {
    const double count = all.count + m.count;
    const double delta = m.mean - all.mean;
    all.mean += delta * m.count / count;
    all.m2 += m.m2 + delta * delta * all.count * m.count / count;
    all.count = count;
  }
  MonteCarloEstimate out;
  out.episodes = episodes;
  out.mean = all.mean;
  if (episodes > 1) out.standard_error = std::sqrt(all.m2 / (all.count - 1.0) / all.count);
  return out;
}

}  // namespace rscpi
