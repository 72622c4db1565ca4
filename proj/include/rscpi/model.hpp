#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rscpi {

/// Mixed-radix map between per-agent digit tuples and a flat joint index.
/// The first agent is the most significant digit, so joint tables laid out
/// as (x^1, ..., x^N) are plain row-major.
class JointIndexer {
 public:
  JointIndexer() = default;

  explicit JointIndexer(std::vector<std::size_t> radices) : radices_(std::move(radices)) {
    strides_.assign(radices_.size(), 1);
    size_ = 1;
    for (std::size_t k = radices_.size(); k-- > 0;) {
      if (radices_[k] == 0) throw std::invalid_argument("JointIndexer: zero radix");
      strides_[k] = size_;
      size_ *= radices_[k];
    }
  }

  std::size_t size() const { return size_; }
  std::size_t digits() const { return radices_.size(); }
  const std::vector<std::size_t>& radices() const { return radices_; }
  std::size_t radix(std::size_t k) const { return radices_[k]; }
  std::size_t stride(std::size_t k) const { return strides_[k]; }

  std::size_t encode(std::span<const std::size_t> digits) const {
    if (digits.size() != radices_.size()) throw std::invalid_argument("JointIndexer: digit count mismatch");
    std::size_t flat = 0;
    for (std::size_t k = 0; k < digits.size(); ++k) {
      if (digits[k] >= radices_[k]) throw std::out_of_range("JointIndexer: digit out of range");
      flat += digits[k] * strides_[k];
    }
    return flat;
  }

  std::size_t digit(std::size_t flat, std::size_t k) const { return (flat / strides_[k]) % radices_[k]; }

  void decode(std::size_t flat, std::span<std::size_t> out) const {
    if (flat >= size_) throw std::out_of_range("JointIndexer: flat index out of range");
    for (std::size_t k = 0; k < radices_.size(); ++k) out[k] = digit(flat, k);
  }

  std::vector<std::size_t> decode(std::size_t flat) const {
    std::vector<std::size_t> out(radices_.size());
    decode(flat, out);
    return out;
  }

 private:
  std::vector<std::size_t> radices_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 1;
};

enum class InitialObservationMode { dummy_observation, uniform_observation };

inline const char* to_string(InitialObservationMode mode) {
  return mode == InitialObservationMode::dummy_observation ? "dummy" : "uniform";
}

/// Display names for the symbols of a model. Optional; empty vectors fall
/// back to numeric labels.
struct ModelLabels {
  std::vector<std::string> states;
  std::vector<std::vector<std::string>> actions;       // per agent
  std::vector<std::vector<std::string>> observations;  // per agent, including any augmented symbol
};

/// Joint initial distribution over (s, y) and the observation alphabet it lives on.
struct InitialCondition {
  std::vector<double> joint;                     // [s][y], y flat over observation_counts
  std::vector<std::size_t> observation_counts;   // per agent, possibly augmented
  bool augmented = false;                        // true when index |Y^i| is the start symbol
};

inline constexpr const char* kStartObservationName = "<start>";

/// Builds the initial (s, y) distribution. In dummy mode every agent's
/// observation set gains one extra symbol (the last index) that carries all
/// the initial mass and is never emitted by the dynamics afterwards.
inline InitialCondition make_initial_distribution(std::span<const double> start,
                                                  std::span<const std::size_t> observation_counts,
                                                  InitialObservationMode mode) {
  double total = 0.0;
  for (double p : start) {
    if (!(p >= 0.0)) throw std::invalid_argument("start distribution has a negative entry");
    total += p;
  }
  if (start.empty() || std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("start distribution must sum to 1");

  InitialCondition init;
  init.observation_counts.assign(observation_counts.begin(), observation_counts.end());
  if (mode == InitialObservationMode::dummy_observation) {
    for (auto& count : init.observation_counts) ++count;
    init.augmented = true;
  }
  const JointIndexer joint(init.observation_counts);
  init.joint.assign(start.size() * joint.size(), 0.0);
  if (mode == InitialObservationMode::dummy_observation) {
    std::vector<std::size_t> digits(init.observation_counts.size());
    for (std::size_t k = 0; k < digits.size(); ++k) digits[k] = init.observation_counts[k] - 1;
    const std::size_t start_symbol = joint.encode(digits);
    for (std::size_t s = 0; s < start.size(); ++s) init.joint[s * joint.size() + start_symbol] = start[s];
  } else {
    const double share = 1.0 / static_cast<double>(joint.size());
    for (std::size_t s = 0; s < start.size(); ++s)
      for (std::size_t y = 0; y < joint.size(); ++y) init.joint[s * joint.size() + y] = start[s] * share;
  }
  return init;
}

/// A finite-horizon Dec-POMDP with dynamics stored in factored form
/// P(s', y' | s, a) = T(s' | s, a) * O(y' | a, s').
///
/// Layouts (row-major):
///   transition  [s][a][s']
///   observation [a][s'][y']
///   reward      [s][a]        expected immediate reward r(s, a)
///   initial     [s][y]
/// Joint actions and observations are flat indices of the JointIndexers.
class DecPomdpModel {
 public:
  DecPomdpModel() = default;

  DecPomdpModel(std::size_t state_count, std::vector<std::size_t> action_counts,
                std::vector<std::size_t> observation_counts, std::vector<double> transition,
                std::vector<double> observation, std::vector<double> reward, std::vector<double> initial,
                std::size_t horizon, ModelLabels labels = {},
                InitialObservationMode mode = InitialObservationMode::dummy_observation)
      : state_count_(state_count),
        action_counts_(std::move(action_counts)),
        observation_counts_(std::move(observation_counts)),
        joint_actions_(action_counts_),
        joint_observations_(observation_counts_),
        transition_(std::move(transition)),
        observation_(std::move(observation)),
        reward_(std::move(reward)),
        initial_(std::move(initial)),
        horizon_(horizon),
        labels_(std::move(labels)),
        init_mode_(mode) {
    validate();
  }

  std::size_t agent_count() const { return action_counts_.size(); }
  std::size_t state_count() const { return state_count_; }
  std::size_t action_count(std::size_t agent) const { return action_counts_[agent]; }
  std::size_t observation_count(std::size_t agent) const { return observation_counts_[agent]; }
  const std::vector<std::size_t>& action_counts() const { return action_counts_; }
  const std::vector<std::size_t>& observation_counts() const { return observation_counts_; }
  const JointIndexer& joint_actions() const { return joint_actions_; }
  const JointIndexer& joint_observations() const { return joint_observations_; }
  std::size_t horizon() const { return horizon_; }
  const ModelLabels& labels() const { return labels_; }
  InitialObservationMode initial_observation_mode() const { return init_mode_; }

  double transition(std::size_t s, std::size_t a, std::size_t next) const {
    return transition_[(s * joint_actions_.size() + a) * state_count_ + next];
  }
  std::span<const double> transition_row(std::size_t s, std::size_t a) const {
    return {transition_.data() + (s * joint_actions_.size() + a) * state_count_, state_count_};
  }
  double observation(std::size_t a, std::size_t next, std::size_t y) const {
    return observation_[(a * state_count_ + next) * joint_observations_.size() + y];
  }
  std::span<const double> observation_row(std::size_t a, std::size_t next) const {
    return {observation_.data() + (a * state_count_ + next) * joint_observations_.size(), joint_observations_.size()};
  }
  /// P(s', y' | s, a)
  double dynamics(std::size_t s, std::size_t a, std::size_t next, std::size_t y) const {
    return transition(s, a, next) * observation(a, next, y);
  }
  double reward(std::size_t s, std::size_t a) const { return reward_[s * joint_actions_.size() + a]; }
  double initial(std::size_t s, std::size_t y) const { return initial_[s * joint_observations_.size() + y]; }

  const std::vector<double>& transition_table() const { return transition_; }
  const std::vector<double>& observation_table() const { return observation_; }
  const std::vector<double>& reward_table() const { return reward_; }
  const std::vector<double>& initial_table() const { return initial_; }

  DecPomdpModel with_horizon(std::size_t horizon) const {
    DecPomdpModel copy = *this;
    if (horizon == 0) throw std::invalid_argument("horizon must be positive");
    copy.horizon_ = horizon;
    return copy;
  }

 private:
  void validate() const {
    const std::size_t actions = joint_actions_.size();
    const std::size_t observations = joint_observations_.size();
    if (action_counts_.empty() || action_counts_.size() != observation_counts_.size())
      throw std::invalid_argument("model: agent count mismatch between action and observation spaces");
    if (state_count_ == 0) throw std::invalid_argument("model: empty state space");
    if (horizon_ == 0) throw std::invalid_argument("model: horizon must be positive");
    if (transition_.size() != state_count_ * actions * state_count_)
      throw std::invalid_argument("model: transition table has wrong size");
    if (observation_.size() != actions * state_count_ * observations)
      throw std::invalid_argument("model: observation table has wrong size");
    if (reward_.size() != state_count_ * actions) throw std::invalid_argument("model: reward table has wrong size");
    if (initial_.size() != state_count_ * observations) throw std::invalid_argument("model: initial table has wrong size");

    auto check_simplex = [](std::span<const double> row, const char* what) {
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument(std::string("model: invalid probability in ") + what);
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(std::string("model: ") + what + " does not sum to 1");
    };
    for (std::size_t s = 0; s < state_count_; ++s)
      for (std::size_t a = 0; a < actions; ++a) check_simplex(transition_row(s, a), "transition row");
    for (std::size_t a = 0; a < actions; ++a)
      for (std::size_t s = 0; s < state_count_; ++s) check_simplex(observation_row(a, s), "observation row");
    check_simplex(initial_, "initial distribution");
    for (double r : reward_)
      if (!std::isfinite(r)) throw std::invalid_argument("model: non-finite reward");
  }

  std::size_t state_count_ = 0;
  std::vector<std::size_t> action_counts_;
  std::vector<std::size_t> observation_counts_;
  JointIndexer joint_actions_;
  JointIndexer joint_observations_;
  std::vector<double> transition_;
  std::vector<double> observation_;
  std::vector<double> reward_;
  std::vector<double> initial_;
  std::size_t horizon_ = 1;
  ModelLabels labels_;
  InitialObservationMode init_mode_ = InitialObservationMode::dummy_observation;
};

/// Dynamics over the original (unaugmented) spaces, as read from a model file.
struct FactoredDynamics {
  std::size_t state_count = 0;
  std::vector<std::size_t> action_counts;
  std::vector<std::size_t> observation_counts;
  std::vector<double> transition;   // [s][a][s']
  std::vector<double> observation;  // [a][s'][y']
  std::vector<double> reward;       // [s][a]
  std::vector<double> start;        // [s]
  ModelLabels labels;
};

/// Attaches an initial condition to factored dynamics. In dummy mode the
/// observation kernel is widened with a zero column for the start symbol.
inline DecPomdpModel make_model(const FactoredDynamics& dyn, std::size_t horizon,
                                InitialObservationMode mode = InitialObservationMode::dummy_observation) {
  InitialCondition init = make_initial_distribution(dyn.start, dyn.observation_counts, mode);
  const JointIndexer original(dyn.observation_counts);
  const JointIndexer widened(init.observation_counts);
  const std::size_t actions = JointIndexer(dyn.action_counts).size();

  std::vector<double> observation(actions * dyn.state_count * widened.size(), 0.0);
  std::vector<std::size_t> digits(dyn.observation_counts.size());
  for (std::size_t a = 0; a < actions; ++a)
    for (std::size_t s = 0; s < dyn.state_count; ++s)
      for (std::size_t y = 0; y < original.size(); ++y) {
        original.decode(y, digits);
        observation[(a * dyn.state_count + s) * widened.size() + widened.encode(digits)] =
            dyn.observation[(a * dyn.state_count + s) * original.size() + y];
      }

  ModelLabels labels = dyn.labels;
  if (init.augmented) {
    labels.observations.resize(dyn.observation_counts.size());
    for (std::size_t i = 0; i < labels.observations.size(); ++i) {
      auto& names = labels.observations[i];
      if (names.size() != dyn.observation_counts[i]) {
        names.clear();
        for (std::size_t k = 0; k < dyn.observation_counts[i]; ++k) names.push_back(std::to_string(k));
      }
      names.emplace_back(kStartObservationName);
    }
  }
  return DecPomdpModel(dyn.state_count, dyn.action_counts, init.observation_counts, dyn.transition,
                       std::move(observation), dyn.reward, std::move(init.joint), horizon, std::move(labels), mode);
}

/// Single-stage, single-state two-player common-payoff game. payoffs[a1][a2]
/// is the shared reward.
inline DecPomdpModel matrix_game_model(const std::vector<std::vector<double>>& payoffs) {
  if (payoffs.empty() || payoffs.front().empty()) throw std::invalid_argument("matrix game: empty payoff table");
  const std::size_t rows = payoffs.size();
  const std::size_t cols = payoffs.front().size();
  std::vector<double> reward;
  reward.reserve(rows * cols);
  for (const auto& row : payoffs) {
    if (row.size() != cols) throw std::invalid_argument("matrix game: ragged payoff table");
    reward.insert(reward.end(), row.begin(), row.end());
  }
  ModelLabels labels;
  labels.states = {"s"};
  labels.actions.resize(2);
  // Actions named a1, b1, c1, ... for agent 1 and a2, b2, ... for agent 2.
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t count = i == 0 ? rows : cols;
    for (std::size_t k = 0; k < count; ++k)
      labels.actions[i].push_back(std::string(1, static_cast<char>('a' + k)) + std::to_string(i + 1));
  }
  labels.observations = {{"o1"}, {"o2"}};
  return DecPomdpModel(1, {rows, cols}, {1, 1}, std::vector<double>(rows * cols, 1.0),
                       std::vector<double>(rows * cols, 1.0), std::move(reward), {1.0}, 1, std::move(labels),
                       InitialObservationMode::uniform_observation);
}

}  // namespace rscpi
