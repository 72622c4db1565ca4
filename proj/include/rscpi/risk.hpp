#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace rscpi {

/// Entropic risk parameter. |lambda| below zero_threshold is exactly risk neutral.
struct RiskParameter {
  double lambda = 0.0;
  double zero_threshold = 1e-9;

  bool neutral() const { return std::abs(lambda) < zero_threshold; }
};

/// log(scaled / mass) where excess = scaled - mass. The log1p form keeps
/// precision when the ratio is near 1; the direct form avoids cancellation
/// when most of the mass sits far below the maximum.
namespace detail {

inline double log_ratio(double excess, double scaled, double mass) {
  const double r = excess / mass;
  return r > -0.5 ? std::log1p(r) : std::log(scaled / mass);
}

}  // namespace detail

/// Streaming weighted aggregate of values x_k with weights w_k >= 0.
///
/// Tilted mode returns log sum_k (w_k / W) exp(x_k), accumulated against the
/// running maximum as m + log1p(sum_k (w_k / W) expm1(x_k - m)) so that
/// nearly-equal arguments (small lambda) keep full relative precision.
/// Plain mode returns the weighted mean.
class RiskAccumulator {
 public:
  explicit RiskAccumulator(bool tilted) : tilted_(tilted) {}

  void add(double weight, double x) {
    if (!(weight > 0.0)) return;
    if (tilted_) {
      if (x > max_) {
        if (mass_ > 0.0) {
          const double scale = std::exp(max_ - x);
          excess_ = scale * excess_ + mass_ * std::expm1(max_ - x);
          scaled_ *= scale;
        }
        max_ = x;
      }
      excess_ += weight * std::expm1(x - max_);
      scaled_ += weight * std::exp(x - max_);
    } else {
      sum_ += weight * x;
    }
    mass_ += weight;
  }

  double mass() const { return mass_; }
  bool empty() const { return !(mass_ > 0.0); }

  double value() const {
    if (empty()) throw std::domain_error("risk aggregate over zero total weight");
    if (tilted_) return max_ + detail::log_ratio(excess_, scaled_, mass_);
    return sum_ / mass_;
  }

 private:
  bool tilted_;
  double mass_ = 0.0;
  double max_ = -std::numeric_limits<double>::infinity();
  double excess_ = 0.0;  // sum w (e^{x - max} - 1)
  double scaled_ = 0.0;  // sum w e^{x - max}
  double sum_ = 0.0;
};

/// (1/lambda) log sum_k (w_k / W) exp(lambda v_k), shifted by the value with the
/// largest lambda * v_k over the support. Falls back to the weighted mean when
/// the parameter is risk neutral. Negative lambda (risk averse) is accepted.
inline double weighted_logmeanexp(std::span<const double> weights, std::span<const double> values, RiskParameter risk) {
  if (weights.size() != values.size()) throw std::invalid_argument("weighted_logmeanexp: length mismatch");
  double total = 0.0;
  std::size_t pivot = weights.size();
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] < 0.0 || !std::isfinite(weights[k])) throw std::invalid_argument("weighted_logmeanexp: invalid weight");
    if (weights[k] == 0.0) continue;
    total += weights[k];
    if (pivot == weights.size() || risk.lambda * values[k] > risk.lambda * values[pivot]) pivot = k;
  }
  if (!(total > 0.0)) throw std::invalid_argument("weighted_logmeanexp: all weights are zero");

  if (risk.neutral()) {
    double mean = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k)
      if (weights[k] > 0.0) mean += weights[k] * values[k];
    return mean / total;
  }
  const double shift = values[pivot];
  double excess = 0.0, scaled = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k)
    if (weights[k] > 0.0) {
      const double d = risk.lambda * (values[k] - shift);
      excess += weights[k] * std::expm1(d);
      scaled += weights[k] * std::exp(d);
    }
  return shift + detail::log_ratio(excess, scaled, total) / risk.lambda;
}

/// Entropic certainty equivalent (1/lambda) log E[exp(lambda X)] of a finite lottery.
inline double certainty_equivalent(std::span<const double> probabilities, std::span<const double> outcomes,
                                   RiskParameter risk) {
  return weighted_logmeanexp(probabilities, outcomes, risk);
}

/// Finite-horizon single-agent MDP used as a reference for the Dec-POMDP solver.
struct FiniteMdp {
  std::size_t state_count = 0;
  std::size_t action_count = 0;
  std::vector<double> transition;  // [s][a][s']
  std::vector<double> reward;      // [s][a]
  std::vector<double> initial;     // [s]
  std::size_t horizon = 1;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * action_count + a) * state_count + next];
  }
  std::span<const double> row(std::size_t s, std::size_t a) const {
    return {transition.data() + (s * action_count + a) * state_count, state_count};
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * action_count + a]; }

  void validate() const {
    if (state_count == 0 || action_count == 0 || horizon == 0) throw std::invalid_argument("mdp: empty dimension");
    if (transition.size() != state_count * action_count * state_count || reward.size() != state_count * action_count ||
        initial.size() != state_count)
      throw std::invalid_argument("mdp: table size mismatch");
    auto check = [](std::span<const double> row) {
      double sum = 0.0;
      for (double v : row) {
        if (v < 0.0) throw std::invalid_argument("mdp: negative probability");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("mdp: kernel not normalized");
    };
    for (std::size_t s = 0; s < state_count; ++s)
      for (std::size_t a = 0; a < action_count; ++a) check(row(s, a));
    check(initial);
  }
};

/// psi[t][s * A + a], t = 0 .. T-1
using MdpPolicy = std::vector<std::vector<double>>;

struct RiskOptimalSolution {
  std::vector<std::vector<double>> values;        // V*_t(s), t = 0 .. T (last is all zero)
  std::vector<std::vector<double>> action_values; // Q*_t(s, a), t = 0 .. T-1
  std::vector<std::vector<std::size_t>> policy;   // argmax action, t = 0 .. T-1
  double objective = 0.0;                         // aggregate of V*_1 under the initial distribution
};

struct RiskPolicyEvaluation {
  std::vector<std::vector<double>> values;  // V_t(s), t = 0 .. T
  double objective = 0.0;
};

namespace detail {

inline double mdp_backup(const FiniteMdp& mdp, std::size_t s, std::size_t a, const std::vector<double>& next,
                         RiskParameter risk) {
  return mdp.r(s, a) + weighted_logmeanexp(mdp.row(s, a), next, risk);
}

}  // namespace detail

/// Optimal risk-sensitive dynamic programming. Ties go to the smallest action.
inline RiskOptimalSolution risk_value_iteration(const FiniteMdp& mdp, RiskParameter risk) {
  mdp.validate();
  const std::size_t S = mdp.state_count, A = mdp.action_count, T = mdp.horizon;
  RiskOptimalSolution out;
  out.values.assign(T + 1, std::vector<double>(S, 0.0));
  out.action_values.assign(T, std::vector<double>(S * A, 0.0));
  out.policy.assign(T, std::vector<std::size_t>(S, 0));
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t best = 0;
      for (std::size_t a = 0; a < A; ++a) {
        const double q = detail::mdp_backup(mdp, s, a, out.values[t + 1], risk);
        out.action_values[t][s * A + a] = q;
        if (q > out.action_values[t][s * A + best]) best = a;
      }
      out.policy[t][s] = best;
      out.values[t][s] = out.action_values[t][s * A + best];
    }
  }
  out.objective = weighted_logmeanexp(mdp.initial, out.values[0], risk);
  return out;
}

/// Risk-sensitive evaluation of a (possibly stochastic) Markov policy.
inline RiskPolicyEvaluation risk_policy_evaluation_mdp(const FiniteMdp& mdp, const MdpPolicy& psi, RiskParameter risk) {
  mdp.validate();
  const std::size_t S = mdp.state_count, A = mdp.action_count, T = mdp.horizon;
  if (psi.size() != T) throw std::invalid_argument("mdp policy horizon mismatch");
  RiskPolicyEvaluation out;
  out.values.assign(T + 1, std::vector<double>(S, 0.0));
  std::vector<double> q(A);
  for (std::size_t t = T; t-- > 0;) {
    if (psi[t].size() != S * A) throw std::invalid_argument("mdp policy table size mismatch");
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) q[a] = detail::mdp_backup(mdp, s, a, out.values[t + 1], risk);
      out.values[t][s] = weighted_logmeanexp(std::span<const double>(psi[t]).subspan(s * A, A), q, risk);
    }
  }
  out.objective = weighted_logmeanexp(mdp.initial, out.values[0], risk);
  return out;
}

}  // namespace rscpi
