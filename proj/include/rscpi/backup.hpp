#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rscpi/model.hpp"
#include "rscpi/policy.hpp"
#include "rscpi/risk.hpp"

namespace rscpi {

/// Raised when a recursion produces a non-finite or unnormalizable quantity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Counts live tensor elements registered with it and remembers the peak.
/// Only the solver workspace tensors register (marginals, value pair, Q slice).
class FloatCounter {
 public:
  void allocate(std::size_t n) {
    current_ += n;
    peak_ = std::max(peak_, current_);
  }
  void release(std::size_t n) { current_ -= std::min(n, current_); }
  std::size_t current() const { return current_; }
  std::size_t peak() const { return peak_; }
  void reset() { current_ = peak_ = 0; }

 private:
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
};

/// A dense double buffer that reports its size to an optional FloatCounter
/// for as long as it lives.
class CountedTensor {
 public:
  CountedTensor() = default;
  CountedTensor(std::size_t n, FloatCounter* counter, double fill = 0.0) : data_(n, fill), counter_(counter) {
    if (counter_) counter_->allocate(n);
  }
  CountedTensor(const CountedTensor& other) : data_(other.data_) {}
  CountedTensor& operator=(const CountedTensor& other) {
    if (this != &other) {
      release();
      data_ = other.data_;
    }
    return *this;
  }
  CountedTensor(CountedTensor&& other) noexcept : data_(std::move(other.data_)), counter_(other.counter_) {
    other.counter_ = nullptr;
    other.data_.clear();
  }
  CountedTensor& operator=(CountedTensor&& other) noexcept {
    if (this != &other) {
      release();
      data_ = std::move(other.data_);
      counter_ = other.counter_;
      other.counter_ = nullptr;
      other.data_.clear();
    }
    return *this;
  }
  ~CountedTensor() { release(); }

  std::size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& vector() const { return data_; }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  void release() {
    if (counter_) counter_->release(data_.size());
    counter_ = nullptr;
  }

  std::vector<double> data_;
  FloatCounter* counter_ = nullptr;
};

/// Flat sizes of the joint spaces and the per-agent row/column of every joint
/// (y, z_prev) row and (a, z) column of the joint decision rule.
struct PolicyLayout {
  std::size_t states = 0;
  std::size_t observations = 0;  // joint |Y|
  std::size_t agent_states = 0;  // joint |Z|
  std::size_t actions = 0;       // joint |A|
  std::size_t agents = 0;
  std::vector<std::vector<std::size_t>> agent_row;     // [i][y * Z + z_prev]
  std::vector<std::vector<std::size_t>> agent_column;  // [i][a * Z + z]

  PolicyLayout() = default;
  PolicyLayout(const DecPomdpModel& model, const JointPolicy& policy) {
    if (!policy.matches(model)) throw std::invalid_argument("policy dimensions do not match the model");
    agents = model.agent_count();
    states = model.state_count();
    observations = model.joint_observations().size();
    actions = model.joint_actions().size();
    const JointIndexer& zs = policy.joint_agent_states();
    agent_states = zs.size();
    agent_row.assign(agents, std::vector<std::size_t>(rows()));
    agent_column.assign(agents, std::vector<std::size_t>(columns()));
    for (std::size_t y = 0; y < observations; ++y)
      for (std::size_t zp = 0; zp < agent_states; ++zp)
        for (std::size_t i = 0; i < agents; ++i)
          agent_row[i][y * agent_states + zp] =
              model.joint_observations().digit(y, i) * zs.radix(i) + zs.digit(zp, i);
    for (std::size_t a = 0; a < actions; ++a)
      for (std::size_t z = 0; z < agent_states; ++z)
        for (std::size_t i = 0; i < agents; ++i)
          agent_column[i][a * agent_states + z] = model.joint_actions().digit(a, i) * zs.radix(i) + zs.digit(z, i);
  }

  std::size_t rows() const { return observations * agent_states; }
  std::size_t columns() const { return actions * agent_states; }
  std::size_t value_size() const { return states * observations * agent_states; }
  std::size_t q_slice_size() const { return value_size() * columns(); }

  /// Joint decision-rule row pi_t(., . | y, z_prev) over flat (a, z), skipping
  /// agent `skip` when it is a valid index (the product over the other agents).
  void joint_row(const JointPolicy& policy, std::size_t step, std::size_t row, std::span<double> out,
                 std::size_t skip = static_cast<std::size_t>(-1)) const {
    std::fill(out.begin(), out.end(), 1.0);
    for (std::size_t i = 0; i < agents; ++i) {
      if (i == skip) continue;
      const DecisionRule& rule = policy.rule(step, i);
      const double* r = rule.table.data() + agent_row[i][row] * rule.columns();
      const auto& cols = agent_column[i];
      for (std::size_t c = 0; c < out.size(); ++c) out[c] *= r[cols[c]];
    }
  }
};

/// Backward risk-seeking values at one time step, L_t(s, y, z) over state,
/// joint observation and joint agent state. Tilted tensors hold lambda * V_t;
/// plain tensors (lambda treated as zero) hold V_t.
struct TiltedValueTensor {
  std::size_t step = 0;  // 1-based time index; T + 1 is the terminal zero tensor
  RiskParameter risk;
  bool tilted = false;
  std::vector<double> values;

  double value(std::size_t flat) const { return tilted ? values[flat] / risk.lambda : values[flat]; }
};

/// The transient centralized Q slice Q_t(s, y, z_prev, a, z), stored in the
/// same tilted/plain representation as the value tensors.
struct QSlice {
  CountedTensor data;
  bool tilted = false;

  double at(const PolicyLayout& layout, std::size_t value_cell, std::size_t column) const {
    return data[value_cell * layout.columns() + column];
  }
};

namespace detail {

inline void require_finite(double v, std::size_t step, const char* what, std::size_t cell) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at t = " << step << ", cell " << cell;
    throw NumericError(msg.str());
  }
}

}  // namespace detail

/// Q_t = lambda * r(s, a) + log sum_{s+} T(s+|s,a) sum_{y+} O(y+|a,s+) exp(L_{t+1}(s+, y+, z)),
/// or the plain expectation form. The sum over y+ is taken first so the cost
/// is O(|A||S||Y||Z| + |A||S|^2|Z|) rather than the dense product. The result
/// does not depend on (y, z_prev) and is replicated across them.
inline void compute_q_slice(const DecPomdpModel& model, const PolicyLayout& layout, std::span<const double> next_values,
                            RiskParameter risk, std::size_t step, QSlice& out) {
  const std::size_t S = layout.states, Y = layout.observations, Z = layout.agent_states, A = layout.actions;
  const bool tilted = !risk.neutral();
  out.tilted = tilted;
  std::vector<double> inner(S * Z);
  std::vector<double> q(S * Z);
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t sp = 0; sp < S; ++sp) {
      const auto obs = model.observation_row(a, sp);
      for (std::size_t z = 0; z < Z; ++z) {
        RiskAccumulator acc(tilted);
        for (std::size_t y = 0; y < Y; ++y) acc.add(obs[y], next_values[(sp * Y + y) * Z + z]);
        inner[sp * Z + z] = acc.value();
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      const auto trans = model.transition_row(s, a);
      const double reward = tilted ? risk.lambda * model.reward(s, a) : model.reward(s, a);
      for (std::size_t z = 0; z < Z; ++z) {
        RiskAccumulator acc(tilted);
        for (std::size_t sp = 0; sp < S; ++sp) acc.add(trans[sp], inner[sp * Z + z]);
        const double v = reward + acc.value();
        detail::require_finite(v, step, "Q value", (s * A + a) * Z + z);
        q[s * Z + z] = v;
      }
    }
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t row = 0; row < Y * Z; ++row) {
        double* dst = out.data.data() + ((s * Y * Z + row) * A + a) * Z;
        std::copy_n(q.data() + s * Z, Z, dst);
      }
  }
}

/// L_t(s, y, z_prev) = log sum_{a,z} pi_t(a, z | y, z_prev) exp(Q_t(s, y, z_prev, a, z))
/// under the joint decision rule at `step` (0-based), or the plain average.
inline void compute_values(const JointPolicy& policy, const PolicyLayout& layout, std::size_t step, const QSlice& q,
                           std::span<double> out) {
  const std::size_t S = layout.states, rows = layout.rows(), cols = layout.columns();
  std::vector<double> joint(cols);
  for (std::size_t row = 0; row < rows; ++row) {
    layout.joint_row(policy, step, row, joint);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t cell = s * rows + row;
      const double* qrow = q.data.data() + cell * cols;
      RiskAccumulator acc(q.tilted);
      for (std::size_t c = 0; c < cols; ++c) acc.add(joint[c], qrow[c]);
      const double v = acc.value();
      detail::require_finite(v, step + 1, "value", cell);
      out[cell] = v;
    }
  }
}

/// Backward tilted values of a fixed policy, returned for t = T + 1 down to 1
/// (element 0 is the terminal zero tensor).
inline std::vector<TiltedValueTensor> backward_tilted_values(const DecPomdpModel& model, const JointPolicy& policy,
                                                             RiskParameter risk) {
  const PolicyLayout layout(model, policy);
  const std::size_t T = policy.horizon();
  std::vector<TiltedValueTensor> out(T + 1);
  for (std::size_t k = 0; k <= T; ++k) {
    out[k].step = T + 1 - k;
    out[k].risk = risk;
    out[k].tilted = !risk.neutral();
    out[k].values.assign(layout.value_size(), 0.0);
  }
  QSlice q{CountedTensor(layout.q_slice_size(), nullptr), false};
  for (std::size_t k = 1; k <= T; ++k) {
    const std::size_t step = T - k;  // 0-based decision step
    compute_q_slice(model, layout, out[k - 1].values, risk, step + 1, q);
    compute_values(policy, layout, step, q, out[k].values);
  }
  return out;
}

/// Aggregates a value tensor under weights w(s, y, z): (1/lambda) log sum w e^{L}
/// for tilted values, the weighted mean for plain ones.
inline double aggregate_values(std::span<const double> weights, std::span<const double> values, bool tilted,
                               RiskParameter risk) {
  RiskAccumulator acc(tilted);
  for (std::size_t k = 0; k < weights.size(); ++k) acc.add(weights[k], values[k]);
  const double v = acc.value();
  return tilted ? v / risk.lambda : v;
}

}  // namespace rscpi
