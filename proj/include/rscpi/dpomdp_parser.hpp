#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rscpi/model.hpp"

namespace rscpi {

enum class Severity { error, warning };

struct ParseDiagnostic {
  std::size_t line = 0;  // 0 when the problem is not tied to a line
  Severity severity = Severity::error;
  std::string message;
};

/// "file:line: severity: message"
inline std::string format_diagnostic(const std::string& file, const ParseDiagnostic& d) {
  std::ostringstream out;
  out << file << ':' << d.line << ": " << (d.severity == Severity::error ? "error" : "warning") << ": " << d.message;
  return out.str();
}

/// Thrown when parsing or compiling produced at least one error. Carries all
/// diagnostics collected up to that point.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(std::vector<ParseDiagnostic> diagnostics)
      : std::runtime_error(summary(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<ParseDiagnostic>& diagnostics() const { return diagnostics_; }

 private:
  static std::string summary(const std::vector<ParseDiagnostic>& diagnostics) {
    for (const auto& d : diagnostics)
      if (d.severity == Severity::error) return "line " + std::to_string(d.line) + ": " + d.message;
    return "parse error";
  }

  std::vector<ParseDiagnostic> diagnostics_;
};

enum class ValueKind { reward, cost };
enum class KernelKeyword { none, uniform, identity };

/// One pattern position: a resolved index or the wildcard `*`.
struct Slot {
  bool wildcard = true;
  std::size_t index = 0;

  bool matches(std::size_t k) const { return wildcard || index == k; }
};

/// Per-agent slots of a joint action or joint observation pattern.
struct JointPattern {
  std::vector<Slot> slots;

  bool matches(const JointIndexer& joint, std::size_t flat) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (!slots[i].matches(joint.digit(flat, i))) return false;
    return true;
  }
};

/// A `T:`, `O:` or `R:` statement. Which optional fields are present fixes
/// the shape:
///   T  state + next_state: single value; state only: row over s'; neither: matrix
///   O  next_state + observation: single value; next_state only: row over y'; neither: matrix
///   R  state + next_state + observation: single value; without observation: row
///      over y'; state only: matrix over (s', y')
/// Row and matrix forms carry either `values` or a keyword.
struct ModelEntry {
  std::size_t line = 0;
  JointPattern action;
  std::optional<Slot> state;
  std::optional<Slot> next_state;
  std::optional<JointPattern> observation;
  KernelKeyword keyword = KernelKeyword::none;
  std::vector<double> values;
};

/// A tokenized `.dpomdp` file with names resolved to indices.
struct RawDpomdpFile {
  std::size_t agent_count = 0;
  std::vector<std::string> agent_names;
  double discount = 1.0;
  ValueKind value_kind = ValueKind::reward;
  std::vector<std::string> state_names;
  std::vector<std::vector<std::string>> action_names;
  std::vector<std::vector<std::string>> observation_names;
  std::vector<double> start;
  std::vector<ModelEntry> transitions;
  std::vector<ModelEntry> observations;
  std::vector<ModelEntry> rewards;

  std::vector<std::size_t> action_counts() const {
    std::vector<std::size_t> out;
    for (const auto& names : action_names) out.push_back(names.size());
    return out;
  }
  std::vector<std::size_t> observation_counts() const {
    std::vector<std::size_t> out;
    for (const auto& names : observation_names) out.push_back(names.size());
    return out;
  }
};

namespace detail {

struct SourceLine {
  std::size_t number = 0;
  std::vector<std::string> tokens;
};

struct Statement {
  SourceLine header;
  std::vector<SourceLine> continuation;
};

inline std::vector<SourceLine> tokenize(std::string_view text) {
  std::vector<SourceLine> lines;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    ++number;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    SourceLine line{number, {}};
    std::string current;
    auto flush = [&] {
      if (!current.empty()) line.tokens.push_back(std::move(current));
      current.clear();
    };
    for (char c : raw) {
      if (c == ':') {
        flush();
        line.tokens.emplace_back(":");
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
        flush();
      } else {
        current.push_back(c);
      }
    }
    flush();
    if (!line.tokens.empty()) lines.push_back(std::move(line));
    if (end == text.size()) break;
    pos = end + 1;
  }
  return lines;
}

inline bool parse_number(const std::string& token, double& out) {
  if (token.empty()) return false;
  char* end = nullptr;
  out = std::strtod(token.c_str(), &end);
  return end == token.c_str() + token.size() && std::isfinite(out);
}

inline bool parse_count(const std::string& token, std::size_t& out) {
  if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos) return false;
  out = static_cast<std::size_t>(std::stoull(token));
  return true;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline bool is_keyword(const std::string& token) {
  static const char* const keywords[] = {"agents",  "discount",     "values", "states", "start",
                                         "actions", "observations", "T",      "O",      "R"};
  for (const char* k : keywords)
    if (token == k) return true;
  return false;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  RawDpomdpFile run(std::vector<ParseDiagnostic>* warnings) {
    for (const Statement& st : group(tokenize(text_))) statement(st);
    if (raw_.agent_count == 0 && !seen("agents")) error(0, "missing 'agents' declaration");
    if (!seen("states")) error(0, "missing 'states' declaration");
    if (!seen("actions")) error(0, "missing 'actions' declaration");
    if (!seen("observations")) error(0, "missing 'observations' declaration");
    if (!seen("start") && seen("states") && !raw_.state_names.empty()) {
      warn(0, "no start distribution given; using uniform");
      raw_.start.assign(raw_.state_names.size(), 1.0 / static_cast<double>(raw_.state_names.size()));
    }
    bool failed = false;
    for (const auto& d : diagnostics_) failed = failed || d.severity == Severity::error;
    if (failed) throw ParseError(diagnostics_);
    if (warnings)
      for (auto& d : diagnostics_) warnings->push_back(d);
    return std::move(raw_);
  }

 private:
  void error(std::size_t line, std::string message) {
    diagnostics_.push_back({line, Severity::error, std::move(message)});
  }
  void warn(std::size_t line, std::string message) {
    diagnostics_.push_back({line, Severity::warning, std::move(message)});
  }
  bool seen(const std::string& key) const { return preamble_.count(key) > 0; }

  std::vector<Statement> group(std::vector<SourceLine> lines) {
    std::vector<Statement> out;
    bool orphan_reported = false;
    for (auto& line : lines) {
      bool has_colon = false;
      for (const auto& t : line.tokens) has_colon = has_colon || t == ":";
      if (has_colon) {
        out.push_back({std::move(line), {}});
        orphan_reported = false;
      } else if (!out.empty()) {
        out.back().continuation.push_back(std::move(line));
      } else if (!orphan_reported) {
        error(line.number, "data before the first statement");
        orphan_reported = true;
      }
    }
    return out;
  }

  static std::vector<std::string> tail_tokens(const Statement& st, std::size_t from) {
    std::vector<std::string> out(st.header.tokens.begin() + static_cast<std::ptrdiff_t>(from), st.header.tokens.end());
    for (const auto& line : st.continuation) out.insert(out.end(), line.tokens.begin(), line.tokens.end());
    return out;
  }

  bool claim_preamble(const std::string& key, std::size_t line) {
    if (seen(key)) {
      error(line, "duplicate preamble key '" + key + "'");
      return false;
    }
    preamble_[key] = line;
    return true;
  }

  void statement(const Statement& st) {
    const auto& tokens = st.header.tokens;
    const std::size_t line = st.header.number;
    const std::string& key = tokens.front();
    if (key == "start" && tokens.size() > 1 && (tokens[1] == "include" || tokens[1] == "exclude")) {
      error(line, "unsupported form 'start " + tokens[1] + "'");
      return;
    }
    if (!is_keyword(key)) {
      error(line, "unknown keyword '" + key + "'");
      return;
    }
    if (tokens.size() < 2 || tokens[1] != ":") {
      error(line, "expected ':' after '" + key + "'");
      return;
    }
    if (key == "agents") return agents(st);
    if (key == "discount") return discount(st);
    if (key == "values") return values(st);
    if (key == "states") return states(st);
    if (key == "start") return start(st);
    if (key == "actions") return per_agent_names(st, "actions", raw_.action_names);
    if (key == "observations") return per_agent_names(st, "observations", raw_.observation_names);
    entry(st, key);
  }

  void agents(const Statement& st) {
    const std::size_t line = st.header.number;
    if (!claim_preamble("agents", line)) return;
    const auto toks = tail_tokens(st, 2);
    std::size_t n = 0;
    if (toks.size() == 1 && parse_count(toks[0], n)) {
      for (std::size_t k = 0; k < n; ++k) raw_.agent_names.push_back(std::to_string(k));
    } else {
      raw_.agent_names = toks;
      n = toks.size();
    }
    if (n == 0) error(line, "agent count must be at least 1");
    raw_.agent_count = n;
  }

  void discount(const Statement& st) {
    const std::size_t line = st.header.number;
    if (!claim_preamble("discount", line)) return;
    const auto toks = tail_tokens(st, 2);
    double v = 0.0;
    if (toks.size() != 1 || !parse_number(toks[0], v) || v < 0.0 || v > 1.0) {
      error(line, "discount must be a single number in [0, 1]");
      return;
    }
    raw_.discount = v;
  }

  void values(const Statement& st) {
    const std::size_t line = st.header.number;
    if (!claim_preamble("values", line)) return;
    const auto toks = tail_tokens(st, 2);
    if (toks.size() == 1 && toks[0] == "reward") {
      raw_.value_kind = ValueKind::reward;
    } else if (toks.size() == 1 && toks[0] == "cost") {
      raw_.value_kind = ValueKind::cost;
    } else {
      error(line, "values must be 'reward' or 'cost'");
    }
  }

  static std::vector<std::string> names_from(const std::vector<std::string>& toks) {
    std::size_t n = 0;
    if (toks.size() == 1 && parse_count(toks[0], n)) {
      std::vector<std::string> out;
      for (std::size_t k = 0; k < n; ++k) out.push_back(std::to_string(k));
      return out;
    }
    return toks;
  }

  void states(const Statement& st) {
    const std::size_t line = st.header.number;
    if (!claim_preamble("states", line)) return;
    raw_.state_names = names_from(tail_tokens(st, 2));
    if (raw_.state_names.empty()) error(line, "state list is empty");
  }

  void per_agent_names(const Statement& st, const std::string& key, std::vector<std::vector<std::string>>& target) {
    const std::size_t line = st.header.number;
    if (!claim_preamble(key, line)) return;
    if (raw_.agent_count == 0) {
      error(line, "'" + key + "' declared before 'agents'");
      return;
    }
    std::vector<std::vector<std::string>> rows;
    if (st.header.tokens.size() > 2) rows.emplace_back(st.header.tokens.begin() + 2, st.header.tokens.end());
    for (const auto& l : st.continuation) rows.push_back(l.tokens);
    if (rows.size() != raw_.agent_count) {
      error(line, key + ": expected one line per agent (" + std::to_string(raw_.agent_count) + "), found " +
                      std::to_string(rows.size()));
      return;
    }
    for (auto& r : rows) {
      target.push_back(names_from(r));
      if (target.back().empty()) error(line, key + ": empty list for an agent");
    }
  }

  std::optional<std::size_t> lookup(const std::vector<std::string>& names, const std::string& token) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == token) return k;
    std::size_t k = 0;
    if (parse_count(token, k) && k < names.size()) return k;
    return std::nullopt;
  }

  void start(const Statement& st) {
    const std::size_t line = st.header.number;
    if (!claim_preamble("start", line)) return;
    if (raw_.state_names.empty()) {
      error(line, "'start' declared before 'states'");
      return;
    }
    const auto toks = tail_tokens(st, 2);
    const std::size_t S = raw_.state_names.size();
    if (toks.size() == 1 && toks[0] == "uniform") {
      raw_.start.assign(S, 1.0 / static_cast<double>(S));
      return;
    }
    double v = 0.0;
    if (toks.size() == 1 && !parse_number(toks[0], v)) {
      const auto s = lookup(raw_.state_names, toks[0]);
      if (!s) {
        error(line, "undeclared state '" + toks[0] + "'");
        return;
      }
      raw_.start.assign(S, 0.0);
      raw_.start[*s] = 1.0;
      return;
    }
    if (toks.size() != S) {
      error(line, "start distribution needs " + std::to_string(S) + " entries, found " + std::to_string(toks.size()));
      return;
    }
    std::vector<double> p(S);
    double sum = 0.0;
    for (std::size_t k = 0; k < S; ++k) {
      if (!parse_number(toks[k], p[k])) {
        error(line, "malformed probability '" + toks[k] + "'");
        return;
      }
      if (p[k] < 0.0) {
        error(line, "negative probability in start distribution");
        return;
      }
      sum += p[k];
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      error(line, "start distribution sums to " + format_number(sum));
      return;
    }
    raw_.start = std::move(p);
  }

  std::optional<Slot> slot(const std::vector<std::string>& names, const std::string& token, const char* what,
                           std::size_t line) {
    if (token == "*") return Slot{};
    if (const auto k = lookup(names, token)) return Slot{false, *k};
    error(line, std::string("undeclared ") + what + " '" + token + "'");
    return std::nullopt;
  }

  std::optional<JointPattern> joint(const std::vector<std::vector<std::string>>& names,
                                    const std::vector<std::string>& tokens, const char* what, std::size_t line) {
    const std::size_t N = raw_.agent_count;
    JointPattern out;
    if (tokens.size() == 1 && tokens[0] == "*") {
      out.slots.assign(N, Slot{});
      return out;
    }
    if (tokens.size() == 1 && N > 1) {
      std::size_t flat = 0;
      std::vector<std::size_t> radices;
      for (const auto& n : names) radices.push_back(n.size());
      const JointIndexer indexer(radices);
      if (!parse_count(tokens[0], flat) || flat >= indexer.size()) {
        error(line, std::string("undeclared joint ") + what + " '" + tokens[0] + "'");
        return std::nullopt;
      }
      for (std::size_t i = 0; i < N; ++i) out.slots.push_back(Slot{false, indexer.digit(flat, i)});
      return out;
    }
    if (tokens.size() != N) {
      error(line, std::string("joint ") + what + " needs " + std::to_string(N) + " components");
      return std::nullopt;
    }
    for (std::size_t i = 0; i < N; ++i) {
      auto s = slot(names[i], tokens[i], what, line);
      if (!s) return std::nullopt;
      out.slots.push_back(*s);
    }
    return out;
  }

  bool numbers(const std::vector<std::string>& toks, std::size_t expected, std::vector<double>& out,
               std::size_t line) {
    if (toks.size() != expected) {
      error(line, "expected " + std::to_string(expected) + " numbers, found " + std::to_string(toks.size()));
      return false;
    }
    out.resize(expected);
    for (std::size_t k = 0; k < expected; ++k)
      if (!parse_number(toks[k], out[k])) {
        error(line, "malformed probability '" + toks[k] + "'");
        return false;
      }
    return true;
  }

  void entry(const Statement& st, const std::string& key) {
    const std::size_t line = st.header.number;
    if (raw_.state_names.empty() || raw_.action_names.empty() || raw_.observation_names.empty()) {
      error(line, "'" + key + "' entry before states, actions and observations are declared");
      return;
    }
    // Pattern segments are delimited by ':'; everything after the last ':'
    // (plus continuation lines) is data.
    std::vector<std::vector<std::string>> segments(1);
    for (std::size_t k = 2; k < st.header.tokens.size(); ++k) {
      if (st.header.tokens[k] == ":") {
        segments.emplace_back();
      } else {
        segments.back().push_back(st.header.tokens[k]);
      }
    }
    std::vector<std::string> data = segments.back();
    segments.pop_back();
    for (const auto& l : st.continuation) data.insert(data.end(), l.tokens.begin(), l.tokens.end());
    for (const auto& seg : segments)
      if (seg.empty()) {
        error(line, "empty pattern in '" + key + "' entry");
        return;
      }

    const std::size_t S = raw_.state_names.size();
    std::size_t Y = 1;
    for (const auto& n : raw_.observation_names) Y *= n.size();
    ModelEntry e;
    e.line = line;
    if (segments.empty()) {
      error(line, "'" + key + "' entry needs a joint action");
      return;
    }
    auto action = joint(raw_.action_names, segments[0], "action", line);
    if (!action) return;
    e.action = *action;

    auto state_slot = [&](std::size_t k) { return slot(raw_.state_names, segments[k].size() == 1 ? segments[k][0] : "", "state", line); };
    auto single_state_segment = [&](std::size_t k) {
      if (segments[k].size() != 1) {
        error(line, "state pattern must be a single token");
        return false;
      }
      return true;
    };
    auto keyword_or_numbers = [&](std::size_t expected, bool allow_identity) {
      if (data.size() == 1 && data[0] == "uniform") {
        e.keyword = KernelKeyword::uniform;
        return true;
      }
      if (data.size() == 1 && data[0] == "identity") {
        if (!allow_identity) {
          error(line, "'identity' is only valid for a transition matrix");
          return false;
        }
        e.keyword = KernelKeyword::identity;
        return true;
      }
      return numbers(data, expected, e.values, line);
    };

    if (key == "T") {
      if (segments.size() > 3) return error(line, "too many ':' segments in 'T' entry");
      if (segments.size() >= 2) {
        if (!single_state_segment(1)) return;
        auto s = state_slot(1);
        if (!s) return;
        e.state = *s;
      }
      if (segments.size() == 3) {
        if (!single_state_segment(2)) return;
        auto s = state_slot(2);
        if (!s) return;
        e.next_state = *s;
        if (!numbers(data, 1, e.values, line)) return;
      } else if (!keyword_or_numbers(segments.size() == 2 ? S : S * S, segments.size() == 1)) {
        return;
      }
      raw_.transitions.push_back(std::move(e));
    } else if (key == "O") {
      if (segments.size() > 3) return error(line, "too many ':' segments in 'O' entry");
      if (segments.size() >= 2) {
        if (!single_state_segment(1)) return;
        auto s = state_slot(1);
        if (!s) return;
        e.next_state = *s;
      }
      if (segments.size() == 3) {
        auto o = joint(raw_.observation_names, segments[2], "observation", line);
        if (!o) return;
        e.observation = *o;
        if (!numbers(data, 1, e.values, line)) return;
      } else if (!keyword_or_numbers(segments.size() == 2 ? Y : S * Y, false)) {
        return;
      }
      raw_.observations.push_back(std::move(e));
    } else {
      if (segments.size() < 2 || segments.size() > 4) return error(line, "malformed 'R' entry");
      if (!single_state_segment(1)) return;
      auto s = state_slot(1);
      if (!s) return;
      e.state = *s;
      if (segments.size() >= 3) {
        if (!single_state_segment(2)) return;
        auto sp = state_slot(2);
        if (!sp) return;
        e.next_state = *sp;
      }
      if (segments.size() == 4) {
        auto o = joint(raw_.observation_names, segments[3], "observation", line);
        if (!o) return;
        e.observation = *o;
      }
      const std::size_t expected = segments.size() == 4 ? 1 : segments.size() == 3 ? Y : S * Y;
      if (!numbers(data, expected, e.values, line)) return;
      raw_.rewards.push_back(std::move(e));
    }
  }

  std::string_view text_;
  RawDpomdpFile raw_;
  std::vector<ParseDiagnostic> diagnostics_;
  std::unordered_map<std::string, std::size_t> preamble_;
};

}  // namespace detail

/// Parses `.dpomdp` text. Throws ParseError carrying every diagnostic when any
/// error was found; warnings are appended to `warnings` on success.
inline RawDpomdpFile parse_dpomdp(std::string_view text, std::vector<ParseDiagnostic>* warnings = nullptr) {
  return detail::Parser(text).run(warnings);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Dense tables after wildcard expansion, in file order (last write wins).
/// rewards are per (a, s, s', y') and already sign-corrected for `values: cost`.
struct DenseTables {
  std::size_t states = 0;
  std::size_t actions = 0;       // joint
  std::size_t observations = 0;  // joint
  std::vector<double> transition;   // [s][a][s']
  std::vector<double> observation;  // [a][s'][y']
  std::vector<double> reward;       // [a][s][s'][y']
};

namespace detail {

inline std::vector<std::size_t> matching(const JointPattern& pattern, const JointIndexer& joint) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < joint.size(); ++k)
    if (pattern.matches(joint, k)) out.push_back(k);
  return out;
}

inline void apply_transitions(const RawDpomdpFile& raw, const JointIndexer& actions, std::vector<double>& T) {
  const std::size_t S = raw.state_names.size(), A = actions.size();
  auto cell = [&](std::size_t s, std::size_t a, std::size_t sp) -> double& { return T[(s * A + a) * S + sp]; };
  for (const auto& e : raw.transitions)
    for (std::size_t a : matching(e.action, actions))
      for (std::size_t s = 0; s < S; ++s) {
        if (e.state && !e.state->matches(s)) continue;
        for (std::size_t sp = 0; sp < S; ++sp) {
          if (e.next_state) {
            if (e.next_state->matches(sp)) cell(s, a, sp) = e.values[0];
          } else if (e.keyword == KernelKeyword::uniform) {
            cell(s, a, sp) = 1.0 / static_cast<double>(S);
          } else if (e.keyword == KernelKeyword::identity) {
            cell(s, a, sp) = s == sp ? 1.0 : 0.0;
          } else {
            cell(s, a, sp) = e.state ? e.values[sp] : e.values[s * S + sp];
          }
        }
      }
}

inline void apply_observations(const RawDpomdpFile& raw, const JointIndexer& actions, const JointIndexer& obs,
                               std::vector<double>& O) {
  const std::size_t S = raw.state_names.size(), Y = obs.size();
  auto cell = [&](std::size_t a, std::size_t sp, std::size_t y) -> double& { return O[(a * S + sp) * Y + y]; };
  for (const auto& e : raw.observations) {
    const std::vector<std::size_t> ys =
        e.observation ? matching(*e.observation, obs) : std::vector<std::size_t>{};
    for (std::size_t a : matching(e.action, actions))
      for (std::size_t sp = 0; sp < S; ++sp) {
        if (e.next_state && !e.next_state->matches(sp)) continue;
        if (e.observation) {
          for (std::size_t y : ys) cell(a, sp, y) = e.values[0];
          continue;
        }
        for (std::size_t y = 0; y < Y; ++y) {
          if (e.keyword == KernelKeyword::uniform) {
            cell(a, sp, y) = 1.0 / static_cast<double>(Y);
          } else {
            cell(a, sp, y) = e.next_state ? e.values[y] : e.values[sp * Y + y];
          }
        }
      }
  }
}

/// Reward slice R(a, ., ., .) over [s][s'][y'] for one joint action.
inline void apply_rewards(const RawDpomdpFile& raw, const JointIndexer& actions, const JointIndexer& obs,
                          std::size_t a, std::vector<double>& slice) {
  const std::size_t S = raw.state_names.size(), Y = obs.size();
  const double sign = raw.value_kind == ValueKind::cost ? -1.0 : 1.0;
  std::fill(slice.begin(), slice.end(), 0.0);
  for (const auto& e : raw.rewards) {
    if (!e.action.matches(actions, a)) continue;
    for (std::size_t s = 0; s < S; ++s) {
      if (!e.state->matches(s)) continue;
      for (std::size_t sp = 0; sp < S; ++sp) {
        if (e.next_state && !e.next_state->matches(sp)) continue;
        double* row = slice.data() + (s * S + sp) * Y;
        for (std::size_t y = 0; y < Y; ++y) {
          if (e.observation) {
            if (e.observation->matches(obs, y)) row[y] = sign * e.values[0];
          } else {
            row[y] = sign * (e.next_state ? e.values[y] : e.values[sp * Y + y]);
          }
        }
      }
    }
  }
}

/// Checks and repairs one conditional distribution. Deviations up to 1e-9
/// are left alone, up to 1e-6 renormalized silently, up to 1e-4 renormalized
/// with a warning; anything larger is an error.
inline void check_row(std::span<double> row, const std::string& what, std::vector<ParseDiagnostic>& diagnostics) {
  double sum = 0.0;
  for (double p : row) {
    if (p < 0.0) {
      diagnostics.push_back({0, Severity::error, what + " has a negative probability"});
      return;
    }
    sum += p;
  }
  const double dev = std::abs(sum - 1.0);
  if (dev > 1e-4) {
    diagnostics.push_back({0, Severity::error, what + " sums to " + format_number(sum)});
    return;
  }
  if (dev > 1e-6) diagnostics.push_back({0, Severity::warning, what + " sums to " + format_number(sum) + "; renormalized"});
  if (dev > 1e-9)
    for (double& p : row) p /= sum;
}

inline std::string joint_label(const std::vector<std::vector<std::string>>& names, const JointIndexer& joint,
                               std::size_t flat) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ' ';
    out += names[i][joint.digit(flat, i)];
  }
  return out;
}

inline void check_kernels(const RawDpomdpFile& raw, const JointIndexer& actions, const JointIndexer& obs,
                          std::vector<double>& T, std::vector<double>& O, std::vector<ParseDiagnostic>& diagnostics) {
  const std::size_t S = raw.state_names.size(), A = actions.size(), Y = obs.size();
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      check_row(std::span<double>(T.data() + (s * A + a) * S, S),
                "T row (" + joint_label(raw.action_names, actions, a) + " : " + raw.state_names[s] + ")", diagnostics);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t sp = 0; sp < S; ++sp)
      check_row(std::span<double>(O.data() + (a * S + sp) * Y, Y),
                "O row (" + joint_label(raw.action_names, actions, a) + " : " + raw.state_names[sp] + ")", diagnostics);
}

}  // namespace detail

/// Materializes T, O and the full reward tensor R(a, s, s', y'). Intended for
/// small models (tests and canonical serialization); compile_dynamics avoids
/// storing R.
inline DenseTables expand_tables(const RawDpomdpFile& raw, std::vector<ParseDiagnostic>* warnings = nullptr) {
  const JointIndexer actions(raw.action_counts()), obs(raw.observation_counts());
  DenseTables out;
  out.states = raw.state_names.size();
  out.actions = actions.size();
  out.observations = obs.size();
  const std::size_t S = out.states, A = out.actions, Y = out.observations;
  out.transition.assign(S * A * S, 0.0);
  out.observation.assign(A * S * Y, 0.0);
  detail::apply_transitions(raw, actions, out.transition);
  detail::apply_observations(raw, actions, obs, out.observation);
  std::vector<ParseDiagnostic> diagnostics;
  detail::check_kernels(raw, actions, obs, out.transition, out.observation, diagnostics);
  for (const auto& d : diagnostics)
    if (d.severity == Severity::error) throw ParseError(diagnostics);
  if (warnings) warnings->insert(warnings->end(), diagnostics.begin(), diagnostics.end());
  out.reward.assign(A * S * S * Y, 0.0);
  std::vector<double> slice(S * S * Y);
  for (std::size_t a = 0; a < A; ++a) {
    detail::apply_rewards(raw, actions, obs, a, slice);
    std::copy(slice.begin(), slice.end(), out.reward.begin() + static_cast<std::ptrdiff_t>(a * S * S * Y));
  }
  return out;
}

/// Expands the file into factored dynamics with expected rewards
/// r(s, a) = sum_{s'} T(s'|s,a) sum_{y'} O(y'|a,s') R(a, s, s', y'). R is built
/// one joint action at a time so memory stays at |S|^2 |Y|.
inline FactoredDynamics compile_dynamics(const RawDpomdpFile& raw, std::vector<ParseDiagnostic>* warnings = nullptr) {
  const JointIndexer actions(raw.action_counts()), obs(raw.observation_counts());
  const std::size_t S = raw.state_names.size(), A = actions.size(), Y = obs.size();
  FactoredDynamics dyn;
  dyn.state_count = S;
  dyn.action_counts = raw.action_counts();
  dyn.observation_counts = raw.observation_counts();
  dyn.transition.assign(S * A * S, 0.0);
  dyn.observation.assign(A * S * Y, 0.0);
  detail::apply_transitions(raw, actions, dyn.transition);
  detail::apply_observations(raw, actions, obs, dyn.observation);

  std::vector<ParseDiagnostic> diagnostics;
  if (raw.discount != 1.0)
    diagnostics.push_back({0, Severity::warning,
                           "discount " + detail::format_number(raw.discount) +
                               " is recorded but ignored; the objective is the undiscounted finite-horizon total"});
  detail::check_kernels(raw, actions, obs, dyn.transition, dyn.observation, diagnostics);
  for (const auto& d : diagnostics)
    if (d.severity == Severity::error) throw ParseError(diagnostics);

  dyn.reward.assign(S * A, 0.0);
  std::vector<double> slice(S * S * Y);
  for (std::size_t a = 0; a < A; ++a) {
    detail::apply_rewards(raw, actions, obs, a, slice);
    for (std::size_t s = 0; s < S; ++s) {
      double r = 0.0;
      for (std::size_t sp = 0; sp < S; ++sp) {
        const double t = dyn.transition[(s * A + a) * S + sp];
        if (t == 0.0) continue;
        const double* o = dyn.observation.data() + (a * S + sp) * Y;
        const double* row = slice.data() + (s * S + sp) * Y;
        double inner = 0.0;
        for (std::size_t y = 0; y < Y; ++y) inner += o[y] * row[y];
        r += t * inner;
      }
      dyn.reward[s * A + a] = r;
    }
  }
  dyn.start = raw.start;
  dyn.labels.states = raw.state_names;
  dyn.labels.actions = raw.action_names;
  dyn.labels.observations = raw.observation_names;
  if (warnings) warnings->insert(warnings->end(), diagnostics.begin(), diagnostics.end());
  return dyn;
}

inline DecPomdpModel compile_model(const RawDpomdpFile& raw, std::size_t horizon,
                                   InitialObservationMode mode = InitialObservationMode::dummy_observation,
                                   std::vector<ParseDiagnostic>* warnings = nullptr) {
  return make_model(compile_dynamics(raw, warnings), horizon, mode);
}

/// Reads, parses and compiles a `.dpomdp` file.
inline DecPomdpModel load_dpomdp(const std::string& path, std::size_t horizon,
                                 InitialObservationMode mode = InitialObservationMode::dummy_observation,
                                 std::vector<ParseDiagnostic>* warnings = nullptr) {
  const RawDpomdpFile raw = parse_dpomdp(read_text_file(path), warnings);
  return compile_model(raw, horizon, mode, warnings);
}

/// Canonical single-entry serialization: the expanded tables written cell by
/// cell (nonzero cells only) with 17 significant digits, so that re-parsing
/// reproduces the same dense tables bit for bit.
inline std::string write_canonical_dpomdp(const RawDpomdpFile& raw) {
  const DenseTables tables = expand_tables(raw);
  const JointIndexer actions(raw.action_counts()), obs(raw.observation_counts());
  const std::size_t S = tables.states, A = tables.actions, Y = tables.observations;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "agents: " << raw.agent_count << "\n";
  out << "discount: " << num(raw.discount) << "\n";
  out << "values: reward\n";
  out << "states:";
  for (const auto& s : raw.state_names) out << ' ' << s;
  out << "\nstart:\n";
  for (std::size_t s = 0; s < S; ++s) out << (s ? " " : "") << num(raw.start[s]);
  out << "\nactions:\n";
  for (const auto& names : raw.action_names) {
    for (std::size_t k = 0; k < names.size(); ++k) out << (k ? " " : "") << names[k];
    out << "\n";
  }
  out << "observations:\n";
  for (const auto& names : raw.observation_names) {
    for (std::size_t k = 0; k < names.size(); ++k) out << (k ? " " : "") << names[k];
    out << "\n";
  }
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t sp = 0; sp < S; ++sp) {
        const double p = tables.transition[(s * A + a) * S + sp];
        if (p != 0.0)
          out << "T: " << detail::joint_label(raw.action_names, actions, a) << " : " << raw.state_names[s] << " : "
              << raw.state_names[sp] << " : " << num(p) << "\n";
      }
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t sp = 0; sp < S; ++sp)
      for (std::size_t y = 0; y < Y; ++y) {
        const double p = tables.observation[(a * S + sp) * Y + y];
        if (p != 0.0)
          out << "O: " << detail::joint_label(raw.action_names, actions, a) << " : " << raw.state_names[sp] << " : "
              << detail::joint_label(raw.observation_names, obs, y) << " : " << num(p) << "\n";
      }
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t sp = 0; sp < S; ++sp)
        for (std::size_t y = 0; y < Y; ++y) {
          const double r = tables.reward[((a * S + s) * S + sp) * Y + y];
          if (r != 0.0)
            out << "R: " << detail::joint_label(raw.action_names, actions, a) << " : " << raw.state_names[s] << " : "
                << raw.state_names[sp] << " : " << detail::joint_label(raw.observation_names, obs, y) << " : "
                << num(r) << "\n";
        }
  return out.str();
}

}  // namespace rscpi
