#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rscpi/model.hpp"
#include "rscpi/rng.hpp"

namespace rscpi {

/// One agent's stochastic decision rule at one time step:
/// pi(a, z | y, z_prev) stored row-major as [y][z_prev][a][z].
/// A row is a (y, z_prev) pair; a column is the flat (a, z) index a * Z + z.
struct DecisionRule {
  std::size_t observations = 0;
  std::size_t agent_states = 0;
  std::size_t actions = 0;
  std::vector<double> table;

  DecisionRule() = default;
  DecisionRule(std::size_t y, std::size_t z, std::size_t a)
      : observations(y), agent_states(z), actions(a), table(y * z * a * z, 0.0) {}

  std::size_t rows() const { return observations * agent_states; }
  std::size_t columns() const { return actions * agent_states; }
  std::size_t row_index(std::size_t y, std::size_t z_prev) const { return y * agent_states + z_prev; }
  std::size_t column_index(std::size_t a, std::size_t z) const { return a * agent_states + z; }

  std::span<double> row(std::size_t r) { return {table.data() + r * columns(), columns()}; }
  std::span<const double> row(std::size_t r) const { return {table.data() + r * columns(), columns()}; }
  double at(std::size_t r, std::size_t c) const { return table[r * columns() + c]; }

  /// Marginal probability of action a in row r (next agent state summed out).
  double action_probability(std::size_t r, std::size_t a) const {
    double p = 0.0;
    for (std::size_t z = 0; z < agent_states; ++z) p += at(r, column_index(a, z));
    return p;
  }

  /// Most probable column of a row; ties to the smallest index.
  std::size_t argmax(std::size_t r) const {
    const auto values = row(r);
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
  }

  bool operator==(const DecisionRule&) const = default;
};

/// Deterministic replacement for one agent at one time: a column per row.
/// Rows marked unreachable carry the incumbent's argmax and are left untouched
/// by mixing.
struct DeterministicAgentSlice {
  std::vector<std::size_t> choice;
  std::vector<unsigned char> reachable;
};

enum class InitialAgentState { point_mass, uniform };

/// Time-varying agent-state policies of all agents plus the initial
/// agent-state distributions phi^i. Step indices are 0-based (step 0 is t = 1).
class JointPolicy {
 public:
  JointPolicy() = default;

  JointPolicy(std::size_t horizon, std::vector<std::size_t> observation_counts, std::vector<std::size_t> action_counts,
              std::vector<std::size_t> agent_state_counts, InitialAgentState init = InitialAgentState::point_mass)
      : horizon_(horizon),
        observation_counts_(std::move(observation_counts)),
        action_counts_(std::move(action_counts)),
        agent_state_counts_(std::move(agent_state_counts)),
        joint_agent_states_(agent_state_counts_) {
    const std::size_t n = action_counts_.size();
    if (horizon_ == 0 || n == 0 || observation_counts_.size() != n || agent_state_counts_.size() != n)
      throw std::invalid_argument("policy: inconsistent dimensions");
    for (std::size_t i = 0; i < n; ++i)
      if (observation_counts_[i] == 0 || action_counts_[i] == 0 || agent_state_counts_[i] == 0)
        throw std::invalid_argument("policy: sizes must be positive");
    rules_.resize(horizon_ * n);
    for (std::size_t t = 0; t < horizon_; ++t)
      for (std::size_t i = 0; i < n; ++i)
        rules_[t * n + i] = DecisionRule(observation_counts_[i], agent_state_counts_[i], action_counts_[i]);
    initial_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t z = agent_state_counts_[i];
      initial_[i].assign(z, 0.0);
      if (init == InitialAgentState::point_mass) {
        initial_[i][0] = 1.0;
      } else {
        std::fill(initial_[i].begin(), initial_[i].end(), 1.0 / static_cast<double>(z));
      }
    }
  }

  JointPolicy(const DecPomdpModel& model, std::vector<std::size_t> agent_state_counts,
              InitialAgentState init = InitialAgentState::point_mass)
      : JointPolicy(model.horizon(), model.observation_counts(), model.action_counts(), std::move(agent_state_counts),
                    init) {}

  std::size_t horizon() const { return horizon_; }
  std::size_t agent_count() const { return action_counts_.size(); }
  const std::vector<std::size_t>& observation_counts() const { return observation_counts_; }
  const std::vector<std::size_t>& action_counts() const { return action_counts_; }
  const std::vector<std::size_t>& agent_state_counts() const { return agent_state_counts_; }
  std::size_t agent_states(std::size_t agent) const { return agent_state_counts_[agent]; }
  const JointIndexer& joint_agent_states() const { return joint_agent_states_; }

  DecisionRule& rule(std::size_t step, std::size_t agent) { return rules_.at(step * agent_count() + agent); }
  const DecisionRule& rule(std::size_t step, std::size_t agent) const { return rules_.at(step * agent_count() + agent); }

  const std::vector<double>& initial_state(std::size_t agent) const { return initial_[agent]; }
  void set_initial_state(std::size_t agent, std::vector<double> phi) {
    if (phi.size() != agent_state_counts_[agent]) throw std::invalid_argument("policy: phi size mismatch");
    initial_[agent] = std::move(phi);
  }
  /// phi(z_0) for a flat joint agent state.
  double initial_probability(std::size_t joint_state) const {
    double p = 1.0;
    for (std::size_t i = 0; i < agent_count(); ++i) p *= initial_[i][joint_agent_states_.digit(joint_state, i)];
    return p;
  }

  /// Throws unless every row and every phi^i is a probability vector within tol.
  void validate(double tol = 1e-9) const {
    auto check = [tol](std::span<const double> values, const char* what) {
      double sum = 0.0;
      for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("policy: invalid entry in ") + what);
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) throw std::invalid_argument(std::string("policy: ") + what + " not normalized");
    };
    for (const auto& rule : rules_)
      for (std::size_t r = 0; r < rule.rows(); ++r) check(rule.row(r), "decision rule row");
    for (const auto& phi : initial_) check(phi, "initial agent-state distribution");
  }

  /// True when the policy dimensions agree with the model's spaces and horizon.
  bool matches(const DecPomdpModel& model) const {
    return horizon_ == model.horizon() && observation_counts_ == model.observation_counts() &&
           action_counts_ == model.action_counts();
  }

  bool operator==(const JointPolicy& other) const {
    return horizon_ == other.horizon_ && agent_state_counts_ == other.agent_state_counts_ &&
           observation_counts_ == other.observation_counts_ && action_counts_ == other.action_counts_ &&
           rules_ == other.rules_ && initial_ == other.initial_;
  }

 private:
  std::size_t horizon_ = 0;
  std::vector<std::size_t> observation_counts_;
  std::vector<std::size_t> action_counts_;
  std::vector<std::size_t> agent_state_counts_;
  JointIndexer joint_agent_states_;
  std::vector<DecisionRule> rules_;
  std::vector<std::vector<double>> initial_;
};

/// Every row drawn independently from the flat Dirichlet over |A^i| * |Z^i|
/// outcomes. Draw order is (t, i, row, column), so (dims, seed) fixes the
/// result bitwise.
inline JointPolicy random_policy(std::size_t horizon, const std::vector<std::size_t>& observation_counts,
                                 const std::vector<std::size_t>& action_counts,
                                 const std::vector<std::size_t>& agent_state_counts, std::uint64_t seed,
                                 InitialAgentState init = InitialAgentState::point_mass) {
  JointPolicy policy(horizon, observation_counts, action_counts, agent_state_counts, init);
  Engine engine(seed);
  std::exponential_distribution<double> gamma_one(1.0);
  for (std::size_t t = 0; t < horizon; ++t)
    for (std::size_t i = 0; i < policy.agent_count(); ++i) {
      DecisionRule& rule = policy.rule(t, i);
      for (std::size_t r = 0; r < rule.rows(); ++r) {
        auto row = rule.row(r);
        double total = 0.0;
        for (double& v : row) total += (v = gamma_one(engine));
        if (total > 0.0) {
          for (double& v : row) v /= total;
        } else {
          std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
        }
      }
    }
  return policy;
}

inline JointPolicy random_policy(const DecPomdpModel& model, const std::vector<std::size_t>& agent_state_counts,
                                 std::uint64_t seed, InitialAgentState init = InitialAgentState::point_mass) {
  return random_policy(model.horizon(), model.observation_counts(), model.action_counts(), agent_state_counts, seed,
                       init);
}

/// Conservative update (1 - alpha) * old + alpha * greedy, applied to reachable
/// rows only. Rows are renormalized when rounding leaves them off 1.
inline DecisionRule mix_policies(const DecisionRule& old, const DeterministicAgentSlice& greedy, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("mix_policies: alpha must lie in [0, 1]");
  if (greedy.choice.size() != old.rows()) throw std::invalid_argument("mix_policies: slice does not match rule");
  DecisionRule out = old;
  if (alpha == 0.0) return out;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (!greedy.reachable.empty() && !greedy.reachable[r]) continue;
    auto row = out.row(r);
    double total = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = (1.0 - alpha) * row[c] + (c == greedy.choice[r] ? alpha : 0.0);
      total += row[c];
    }
    if (total != 1.0)
      for (double& v : row) v /= total;
  }
  return out;
}

namespace detail {

inline std::string label_or_index(const std::vector<std::string>& names, std::size_t k) {
  return k < names.size() ? names[k] : std::to_string(k);
}

}  // namespace detail

/// Human-readable policy listing. One block per time step; within it, one
/// row per observation symbol of each agent and one cell per previous agent
/// state. A cell shows the most probable action (and next agent state when
/// |Z^i| > 1), followed by its probability when that is below 0.999.
inline std::string dump_policy(const JointPolicy& policy, const ModelLabels& labels) {
  std::ostringstream out;
  for (std::size_t t = 0; t < policy.horizon(); ++t) {
    out << "t = " << (t + 1) << "\n";
    for (std::size_t i = 0; i < policy.agent_count(); ++i) {
      const DecisionRule& rule = policy.rule(t, i);
      static const std::vector<std::string> none;
      const auto& action_names = i < labels.actions.size() ? labels.actions[i] : none;
      const auto& obs_names = i < labels.observations.size() ? labels.observations[i] : none;
      out << "  agent " << (i + 1) << "\n";
      for (std::size_t y = 0; y < rule.observations; ++y) {
        out << "    " << std::left << std::setw(14) << detail::label_or_index(obs_names, y) << std::right;
        for (std::size_t zp = 0; zp < rule.agent_states; ++zp) {
          const std::size_t r = rule.row_index(y, zp);
          const std::size_t c = rule.argmax(r);
          std::string cell = detail::label_or_index(action_names, c / rule.agent_states);
          if (rule.agent_states > 1) cell = "z" + std::to_string(zp) + ": " + cell + "->z" + std::to_string(c % rule.agent_states);
          const double p = rule.at(r, c);
          if (p < 0.999) {
            std::ostringstream prob;
            prob << std::fixed << std::setprecision(2) << p;
            cell += " (" + prob.str() + ")";
          }
          out << " | " << cell;
        }
        out << "\n";
      }
    }
  }
  return out.str();
}

inline std::string dump_policy(const JointPolicy& policy, const DecPomdpModel& model) {
  return dump_policy(policy, model.labels());
}

}  // namespace rscpi
