#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rscpi/policy.hpp"

namespace rscpi {

/// JSON form: {horizon, agent_state_sizes, observation_counts, action_counts,
/// tables[t][i][y][z_prev][a][z], phi[i][z]}.
inline nlohmann::json policy_to_json(const JointPolicy& policy) {
  nlohmann::json out;
  out["horizon"] = policy.horizon();
  out["agent_state_sizes"] = policy.agent_state_counts();
  out["observation_counts"] = policy.observation_counts();
  out["action_counts"] = policy.action_counts();
  nlohmann::json tables = nlohmann::json::array();
  for (std::size_t t = 0; t < policy.horizon(); ++t) {
    nlohmann::json per_agent = nlohmann::json::array();
    for (std::size_t i = 0; i < policy.agent_count(); ++i) {
      const DecisionRule& rule = policy.rule(t, i);
      nlohmann::json by_obs = nlohmann::json::array();
      for (std::size_t y = 0; y < rule.observations; ++y) {
        nlohmann::json by_prev = nlohmann::json::array();
        for (std::size_t zp = 0; zp < rule.agent_states; ++zp) {
          nlohmann::json by_action = nlohmann::json::array();
          const std::size_t r = rule.row_index(y, zp);
          for (std::size_t a = 0; a < rule.actions; ++a) {
            nlohmann::json by_next = nlohmann::json::array();
            for (std::size_t z = 0; z < rule.agent_states; ++z) by_next.push_back(rule.at(r, rule.column_index(a, z)));
            by_action.push_back(std::move(by_next));
          }
          by_prev.push_back(std::move(by_action));
        }
        by_obs.push_back(std::move(by_prev));
      }
      per_agent.push_back(std::move(by_obs));
    }
    tables.push_back(std::move(per_agent));
  }
  out["tables"] = std::move(tables);
  nlohmann::json phi = nlohmann::json::array();
  for (std::size_t i = 0; i < policy.agent_count(); ++i) phi.push_back(policy.initial_state(i));
  out["phi"] = std::move(phi);
  return out;
}

/// Inverse of policy_to_json. Observation and action counts are taken from
/// the document when present and otherwise inferred from the table shape.
inline JointPolicy policy_from_json(const nlohmann::json& doc) {
  try {
    const auto horizon = doc.at("horizon").get<std::size_t>();
    const auto z_sizes = doc.at("agent_state_sizes").get<std::vector<std::size_t>>();
    const auto& tables = doc.at("tables");
    if (tables.size() != horizon) throw std::invalid_argument("policy json: tables length differs from horizon");
    const std::size_t N = z_sizes.size();
    std::vector<std::size_t> obs(N), acts(N);
    if (doc.contains("observation_counts") && doc.contains("action_counts")) {
      obs = doc.at("observation_counts").get<std::vector<std::size_t>>();
      acts = doc.at("action_counts").get<std::vector<std::size_t>>();
    } else {
      for (std::size_t i = 0; i < N; ++i) {
        obs[i] = tables.at(0).at(i).size();
        acts[i] = tables.at(0).at(i).at(0).at(0).size();
      }
    }
    JointPolicy policy(horizon, obs, acts, z_sizes);
    for (std::size_t t = 0; t < horizon; ++t) {
      if (tables[t].size() != N) throw std::invalid_argument("policy json: wrong agent count at a time step");
      for (std::size_t i = 0; i < N; ++i) {
        DecisionRule& rule = policy.rule(t, i);
        const auto& by_obs = tables[t][i];
        if (by_obs.size() != rule.observations) throw std::invalid_argument("policy json: observation axis mismatch");
        for (std::size_t y = 0; y < rule.observations; ++y) {
          if (by_obs[y].size() != rule.agent_states) throw std::invalid_argument("policy json: agent-state axis mismatch");
          for (std::size_t zp = 0; zp < rule.agent_states; ++zp) {
            const auto& by_action = by_obs[y][zp];
            if (by_action.size() != rule.actions) throw std::invalid_argument("policy json: action axis mismatch");
            for (std::size_t a = 0; a < rule.actions; ++a) {
              const auto& by_next = by_action[a];
              if (by_next.size() != rule.agent_states) throw std::invalid_argument("policy json: next-state axis mismatch");
              for (std::size_t z = 0; z < rule.agent_states; ++z)
                rule.table[rule.row_index(y, zp) * rule.columns() + rule.column_index(a, z)] = by_next[z].get<double>();
            }
          }
        }
      }
    }
    if (doc.contains("phi")) {
      const auto& phi = doc.at("phi");
      if (phi.size() != N) throw std::invalid_argument("policy json: phi has wrong agent count");
      for (std::size_t i = 0; i < N; ++i) policy.set_initial_state(i, phi[i].get<std::vector<double>>());
    }
    policy.validate(1e-9);
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("policy json: ") + e.what());
  }
}

inline void write_policy_json(const std::string& path, const JointPolicy& policy) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << policy_to_json(policy).dump(1) << "\n";
}

inline JointPolicy read_policy_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("policy json: " + std::string(e.what()));
  }
  return policy_from_json(doc);
}

}  // namespace rscpi
