#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

#include "rscpi/backup.hpp"
#include "rscpi/evaluation.hpp"
#include "rscpi/model.hpp"
#include "rscpi/policy.hpp"
#include "rscpi/risk.hpp"

namespace rscpi {

/// How agents are interleaved within a sweep.
enum class AgentOrdering {
  per_time_step,   // at each t (T down to 1), update agents 1..N in turn
  per_agent_sweep  // one full backward pass per agent, agents 1..N in turn
};

struct SolverConfig {
  double lambda0 = 1.0;
  std::size_t anneal_sweeps = 10;  // K1: sweeps over which lambda decays linearly to 0
  double alpha = 1.0;
  std::size_t max_sweeps = 300;    // K
  double tolerance = 1e-9;
  std::size_t restarts = 1;
  std::uint64_t seed = 0;
  std::vector<std::size_t> agent_states;  // |Z^i| per agent; a single entry is shared by all agents
  AgentOrdering ordering = AgentOrdering::per_time_step;
  InitialAgentState initial_agent_state = InitialAgentState::point_mass;
  bool disable_rs = false;   // lambda fixed at 0
  bool disable_cpi = false;  // alpha fixed at 1
  unsigned workers = 1;      // parallel restarts

  double effective_lambda0() const { return disable_rs ? 0.0 : lambda0; }
  double effective_alpha() const { return disable_cpi ? 1.0 : alpha; }

  /// lambda^(k) = lambda0 * max(0, 1 - (k - 1) / K1), k starting at 1.
  double lambda_at(std::size_t k) const {
    const double l0 = effective_lambda0();
    if (l0 == 0.0 || anneal_sweeps == 0) return 0.0;
    const double frac = 1.0 - static_cast<double>(k - 1) / static_cast<double>(anneal_sweeps);
    return l0 * std::max(0.0, frac);
  }

  std::vector<std::size_t> agent_state_counts(std::size_t agents) const {
    if (agent_states.empty()) return std::vector<std::size_t>(agents, 1);
    if (agent_states.size() == 1) return std::vector<std::size_t>(agents, agent_states.front());
    if (agent_states.size() != agents) throw std::invalid_argument("solver: one agent-state size per agent expected");
    return agent_states;
  }

  void validate() const {
    if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) throw std::invalid_argument("solver: lambda0 must be >= 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("solver: alpha must lie in (0, 1]");
    if (max_sweeps == 0) throw std::invalid_argument("solver: max_sweeps must be positive");
    if (max_sweeps < anneal_sweeps) throw std::invalid_argument("solver: max_sweeps must be >= anneal_sweeps");
    if (restarts == 0) throw std::invalid_argument("solver: restarts must be positive");
    for (auto z : agent_states)
      if (z == 0) throw std::invalid_argument("solver: agent-state sizes must be positive");
  }
};

/// Risk-seeking averaged local Q of one agent at one time step. `weight`
/// holds log(W / m) in tilted mode (W the tilted weight, m the row mass), which
/// equals lambda * Qbar, or Qbar itself in plain mode.
struct AveragedLocalQ {
  std::size_t agent = 0;
  std::size_t step = 0;  // 0-based
  std::size_t observations = 0;
  std::size_t agent_states = 0;
  std::size_t actions = 0;
  bool tilted = false;
  RiskParameter risk;
  std::vector<double> weight;  // [row][column], row = y * Z + z_prev, column = a * Z + z
  std::vector<double> mass;    // zeta_t(y^i, z^i_prev)

  std::size_t rows() const { return observations * agent_states; }
  std::size_t columns() const { return actions * agent_states; }
  bool reachable(std::size_t row) const { return mass[row] > 0.0; }
  double log_weight(std::size_t row, std::size_t col) const { return weight[row * columns() + col]; }
  /// Qbar in reward units.
  double value(std::size_t row, std::size_t col) const {
    const double w = log_weight(row, col);
    return tilted ? w / risk.lambda : w;
  }
};

/// Qbar for agent i at `step` from the occupancy slice zeta_t and a Q slice:
/// the conditional of zeta_t given (y^i, z^i_prev), multiplied by the other
/// agents' current decision rules, weights exp(Q) (or Q in plain mode).
inline AveragedLocalQ averaged_local_q(const PolicyLayout& layout, std::span<const double> marginal,
                                       const JointPolicy& policy, std::size_t step, const QSlice& q,
                                       RiskParameter risk, std::size_t agent) {
  const DecisionRule& own = policy.rule(step, agent);
  AveragedLocalQ out;
  out.agent = agent;
  out.step = step;
  out.observations = own.observations;
  out.agent_states = own.agent_states;
  out.actions = own.actions;
  out.tilted = q.tilted;
  out.risk = risk;
  const std::size_t rows = own.rows(), cols = own.columns();
  std::vector<RiskAccumulator> acc(rows * cols, RiskAccumulator(q.tilted));
  out.mass.assign(rows, 0.0);

  const std::size_t S = layout.states, joint_rows = layout.rows(), joint_cols = layout.columns();
  std::vector<double> others(joint_cols);
  const auto& row_of = layout.agent_row[agent];
  const auto& col_of = layout.agent_column[agent];
  for (std::size_t row = 0; row < joint_rows; ++row) {
    bool any = false;
    for (std::size_t s = 0; s < S && !any; ++s) any = marginal[s * joint_rows + row] > 0.0;
    if (!any) continue;
    layout.joint_row(policy, step, row, others, agent);
    const std::size_t own_row = row_of[row];
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t cell = s * joint_rows + row;
      const double zeta = marginal[cell];
      if (zeta == 0.0) continue;
      out.mass[own_row] += zeta;
      const double* qrow = q.data.data() + cell * joint_cols;
      for (std::size_t c = 0; c < joint_cols; ++c) acc[own_row * cols + col_of[c]].add(zeta * others[c], qrow[c]);
    }
  }
  out.weight.assign(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!out.reachable(r)) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      // W / m: the accumulator normalizes by the mass of its own column, which
      // equals the row mass because the other agents' rows sum to 1.
      out.weight[r * cols + c] = acc[r * cols + c].empty() ? -std::numeric_limits<double>::infinity()
                                                            : acc[r * cols + c].value();
    }
  }
  return out;
}

/// Per reachable row, the column maximizing Qbar with ties (within a relative
/// 1e-12) resolved toward the smallest flat (a, z) index. Unreachable rows
/// carry the incumbent's argmax and are flagged so mixing leaves them alone.
inline DeterministicAgentSlice greedy_agent_update(const AveragedLocalQ& qbar, const DecisionRule& incumbent) {
  DeterministicAgentSlice out;
  out.choice.assign(qbar.rows(), 0);
  out.reachable.assign(qbar.rows(), 0);
  for (std::size_t r = 0; r < qbar.rows(); ++r) {
    if (!qbar.reachable(r)) {
      out.choice[r] = incumbent.argmax(r);
      continue;
    }
    out.reachable[r] = 1;
    std::size_t best = 0;
    double best_value = qbar.log_weight(r, 0);
    for (std::size_t c = 1; c < qbar.columns(); ++c) {
      const double v = qbar.log_weight(r, c);
      if (v > best_value + 1e-12 * std::max(1.0, std::abs(best_value))) {
        best = c;
        best_value = v;
      }
    }
    out.choice[r] = best;
  }
  return out;
}

/// J^risk_{t:T}: the risk aggregate of L_t under the occupancy zeta_t.
inline double stage_risk_objective(std::span<const double> marginal, std::span<const double> values, bool tilted,
                                   RiskParameter risk) {
  return aggregate_values(marginal, values, tilted, risk);
}

/// Called after each agent update inside a sweep with the averaged local Q,
/// the greedy slice and the rule before mixing.
using SweepObserver =
    std::function<void(const AveragedLocalQ& qbar, const DeterministicAgentSlice& greedy, const DecisionRule& before)>;

struct SweepOptions {
  AgentOrdering ordering = AgentOrdering::per_time_step;
  FloatCounter* counter = nullptr;
  SweepObserver observer;
};

namespace detail {

/// One backward pass updating the agents in `agents` at every time step.
inline void backward_pass(const DecPomdpModel& model, JointPolicy& policy, RiskParameter risk, double alpha,
                          const std::vector<std::size_t>& agents, const SweepOptions& options) {
  const PolicyLayout layout(model, policy);
  const MarginalTrajectory zeta = forward_marginals(model, policy, options.counter);
  CountedTensor next(layout.value_size(), options.counter);
  CountedTensor cur(layout.value_size(), options.counter);
  QSlice q{CountedTensor(layout.q_slice_size(), options.counter), false};
  for (std::size_t t = policy.horizon(); t-- > 0;) {
    compute_q_slice(model, layout, next.span(), risk, t + 1, q);
    for (std::size_t agent : agents) {
      const AveragedLocalQ qbar = averaged_local_q(layout, zeta.slice(t), policy, t, q, risk, agent);
      DecisionRule& rule = policy.rule(t, agent);
      const DeterministicAgentSlice greedy = greedy_agent_update(qbar, rule);
      if (options.observer) options.observer(qbar, greedy, rule);
      rule = mix_policies(rule, greedy, alpha);
    }
    compute_values(policy, layout, t, q, cur.span());
    std::swap(next, cur);
  }
}

}  // namespace detail

/// One sweep: occupancies from the pre-sweep policy, then for t = T down to 1
/// each agent's greedy update against the current rules of the others, mixed
/// with weight alpha, before L_t is rebuilt with the updated step. Returns
/// evaluate_risk of the updated policy.
inline double sweep(const DecPomdpModel& model, JointPolicy& policy, RiskParameter risk, double alpha,
                    const SweepOptions& options = {}) {
  if (risk.lambda < 0.0) throw std::invalid_argument("sweep: lambda must be nonnegative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("sweep: alpha must lie in [0, 1]");
  const std::size_t N = policy.agent_count();
  if (options.ordering == AgentOrdering::per_time_step) {
    std::vector<std::size_t> all(N);
    for (std::size_t i = 0; i < N; ++i) all[i] = i;
    detail::backward_pass(model, policy, risk, alpha, all, options);
  } else {
    for (std::size_t i = 0; i < N; ++i) detail::backward_pass(model, policy, risk, alpha, {i}, options);
  }
  return evaluate_risk(model, policy, risk);
}

struct SweepRecord {
  double lambda = 0.0;
  double J_risk = 0.0;
  double J = 0.0;
};

struct SolveResult {
  JointPolicy policy;
  double J = 0.0;             // risk-neutral, exact
  double J_risk_final = 0.0;  // objective reported by the last sweep
  std::vector<SweepRecord> trace;
  std::size_t sweeps = 0;
  double wall_time_ms = 0.0;
  std::size_t peak_floats = 0;
  std::uint64_t seed = 0;  // seed of the initial policy that produced this result
};

/// Closed-form workspace size of one sweep: all occupancies, the value pair
/// and one Q slice.
inline std::size_t expected_peak_floats(const DecPomdpModel& model, const std::vector<std::size_t>& agent_state_counts) {
  std::size_t Z = 1;
  for (auto z : agent_state_counts) Z *= z;
  const std::size_t syz = model.state_count() * model.joint_observations().size() * Z;
  return model.horizon() * syz + 2 * syz + syz * model.joint_actions().size() * Z;
}

/// RS-CPI from a given initial policy (a single restart).
inline SolveResult solve_from(const DecPomdpModel& model, JointPolicy policy, const SolverConfig& config,
                              const SweepObserver& observer = {}) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  FloatCounter counter;
  SweepOptions options{config.ordering, &counter, observer};
  const double alpha = config.effective_alpha();

  SolveResult result;
  double previous_J = evaluate_exact(model, policy);
  bool previous_neutral = false;
  double previous_risk = 0.0;
  for (std::size_t k = 1; k <= config.max_sweeps; ++k) {
    const RiskParameter risk{config.lambda_at(k)};
    const double J_risk = sweep(model, policy, risk, alpha, options);
    const double J = evaluate_exact(model, policy);
    result.trace.push_back({risk.lambda, J_risk, J});
    result.sweeps = k;
    if (risk.neutral()) {
      const double before = previous_neutral ? previous_risk : previous_J;
      if (J_risk - before < config.tolerance) break;
    }
    previous_neutral = risk.neutral();
    previous_risk = J_risk;
    previous_J = J;
  }
  result.J = result.trace.back().J;
  result.J_risk_final = result.trace.back().J_risk;
  result.policy = std::move(policy);
  result.peak_floats = counter.peak();
  result.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// RS-CPI with random restarts. Restart r starts from random_policy(seed + r);
/// the restart with the highest exact J wins, the lowest seed on ties.
inline SolveResult solve(const DecPomdpModel& model, const SolverConfig& config) {
  config.validate();
  const auto counts = config.agent_state_counts(model.agent_count());
  std::vector<SolveResult> runs(config.restarts);
  auto run = [&](std::size_t r) {
    const std::uint64_t seed = config.seed + r;
    runs[r] = solve_from(model, random_policy(model, counts, seed, config.initial_agent_state), config);
    runs[r].seed = seed;
  };
  const unsigned pool = std::max(1u, std::min<unsigned>(config.workers, static_cast<unsigned>(config.restarts)));
  if (pool == 1) {
    for (std::size_t r = 0; r < config.restarts; ++r) run(r);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(pool);
    for (unsigned w = 0; w < pool; ++w)
      threads.emplace_back([&, w] {
        try {
          for (std::size_t r = w; r < config.restarts; r += pool) run(r);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : threads) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].J > runs[best].J) best = r;
  return std::move(runs[best]);
}

}  // namespace rscpi
