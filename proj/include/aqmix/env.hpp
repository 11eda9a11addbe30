#pragma once

// ClueRelay: a deterministic synthetic team task. Each agent starts with a
// subset of K clues; an agent scores once it has assembled kappa of them.
// Clues travel along the round's communication graph in execution order, so
// accuracy depends on topology while tokens grow with every edge. An optional
// adversary sends nothing useful and poisons every agent it reaches.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/numerics.hpp"
#include "aqmix/topology.hpp"

namespace aqmix {

inline constexpr std::size_t kMaxClues = 64;

struct TaskSpec {
  std::size_t K = 0;      // total clue count
  std::size_t kappa = 1;  // clues one agent must hold for full credit
  std::vector<std::uint64_t> clues;  // initial clue bitmask per agent
  int adversary = -1;                // agent index or -1
  double poison_weight = 0.0;        // lambda

  std::size_t n_agents() const { return clues.size(); }

  bool easy() const {
    for (auto c : clues)
      if (static_cast<std::size_t>(std::popcount(c)) >= kappa) return true;
    return false;
  }

  void validate() const {
    if (K == 0 || K > kMaxClues) throw ConfigError("task: K must lie in [1, 64]");
    if (kappa < 1 || kappa > K) throw ConfigError("task: kappa must lie in [1, K]");
    if (clues.size() < 2) throw ConfigError("task: need at least two agents");
    const std::uint64_t mask = K == 64 ? ~0ULL : ((1ULL << K) - 1);
    for (auto c : clues)
      if (c & ~mask) throw ConfigError("task: clue id outside [0, K)");
    if (adversary < -1 || adversary >= static_cast<int>(clues.size()))
      throw ConfigError("task: adversary id out of range");
    if (!(poison_weight >= 0.0)) throw ConfigError("task: poison weight must be nonnegative");
  }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct EnvState {
  std::vector<std::uint64_t> clues;
  std::vector<std::uint32_t> poison;
  std::vector<std::vector<double>> flags;  // flags[i][j]: agent i believes j is adversarial
  double tokens = 0.0;
  std::size_t round = 0;
  int adversary = -1;
};

struct RewardWeights {
  double w_acc = 1.25;
  double w_tok = 0.10;
  double max_tokens = 10000.0;

  static RewardWeights from(const RunConfig& c) { return {c.w_acc, c.w_tok, c.max_tokens}; }
};

inline double reward(double accuracy, double tokens_used, double w_acc, double w_tok,
                     double max_tokens) {
  return w_acc * accuracy - w_tok * std::min(tokens_used / max_tokens, 1.0);
}

inline double reward(double accuracy, double tokens_used, const RewardWeights& w) {
  return reward(accuracy, tokens_used, w.w_acc, w.w_tok, w.max_tokens);
}

// Number of task features per agent for a team of n.
inline std::size_t task_feature_dim(std::size_t n) { return 3 + n; }

// [own clue count / K, kappa / K, reliability flags (n), difficulty bit]
inline std::vector<double> task_features(const TaskSpec& task, const EnvState& s, std::size_t agent) {
  std::vector<double> f;
  f.reserve(task_feature_dim(s.clues.size()));
  const double K = static_cast<double>(task.K);
  f.push_back(static_cast<double>(std::popcount(s.clues[agent])) / K);
  f.push_back(static_cast<double>(task.kappa) / K);
  f.insert(f.end(), s.flags[agent].begin(), s.flags[agent].end());
  f.push_back(task.easy() ? 1.0 : 0.0);
  return f;
}

// Clue sets start at the task's assignment (the adversary's is emptied);
// every reliability flag is correct with probability `reliability`.
inline EnvState reset(const TaskSpec& task, double reliability, Rng& rng) {
  task.validate();
  const std::size_t n = task.n_agents();
  EnvState s;
  s.clues = task.clues;
  s.poison.assign(n, 0);
  s.adversary = task.adversary;
  if (s.adversary >= 0) s.clues[static_cast<std::size_t>(s.adversary)] = 0;
  s.flags.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool truth = static_cast<int>(j) == s.adversary;
      const bool correct = reliability >= 1.0 || rng.uniform() < reliability;
      s.flags[i][j] = (truth == correct) ? 1.0 : 0.0;
    }
  }
  return s;
}

inline double round_tokens(const CommGraph& graph, const EnvConfig& cfg) {
  return cfg.base_tokens * static_cast<double>(graph.size()) +
         cfg.edge_tokens * static_cast<double>(graph.edge_count());
}

// One round of clue exchange along `graph` in `order`. A fresh edge (sender
// executed earlier) delivers the sender's updated set; a deferred edge
// delivers its round-start set. Edges from the adversary carry no clues and
// poison the receiver.
inline void propagate(EnvState& s, const CommGraph& graph, const ExecutionOrder& order,
                      const EnvConfig& cfg) {
  const std::size_t n = s.clues.size();
  if (graph.size() != n) throw ShapeError("propagate: graph size does not match team");
  if (!order_consistent(graph, order)) throw ShapeError("propagate: execution order does not match graph");
  const std::vector<std::uint64_t> start = s.clues;
  std::vector<std::size_t> pos(n);
  for (std::size_t k = 0; k < n; ++k) pos[order.order[k]] = k;
  for (std::size_t v : order.order) {
    for (std::size_t u = 0; u < n; ++u) {
      if (u == v || !graph.edge(u, v)) continue;
      if (static_cast<int>(u) == s.adversary) {
        s.poison[v] += 1;
        continue;
      }
      s.clues[v] |= (pos[u] < pos[v]) ? s.clues[u] : start[u];
    }
  }
  s.tokens += round_tokens(graph, cfg);
  s.round += 1;
}

struct EpisodeScore {
  double accuracy = 0.0;
  double tokens = 0.0;
};

// Best non-adversarial agent's clamp((clues - lambda * poison) / kappa, 0, 1).
inline EpisodeScore finish(const EnvState& s, const TaskSpec& task) {
  EpisodeScore out;
  out.tokens = s.tokens;
  for (std::size_t i = 0; i < s.clues.size(); ++i) {
    if (static_cast<int>(i) == s.adversary) continue;
    const double held = static_cast<double>(std::popcount(s.clues[i]));
    const double score = (held - task.poison_weight * s.poison[i]) / static_cast<double>(task.kappa);
    out.accuracy = std::max(out.accuracy, std::clamp(score, 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Open-loop oracle
// ---------------------------------------------------------------------------

struct OracleResult {
  std::vector<JointAction> sequence;
  double best_return = 0.0;
  double accuracy = 0.0;
  double tokens = 0.0;
  std::uint64_t evaluations = 0;
};

inline constexpr std::uint64_t kMaxOracleSequences = 10'077'696;  // 6^9

inline std::uint64_t open_loop_count(std::size_t n, std::size_t rounds) {
  std::uint64_t count = 1;
  for (std::size_t k = 0; k < n * rounds; ++k) {
    if (count > kMaxOracleSequences) return count;
    count *= kNumActions;
  }
  return count;
}

inline JointAction decode_joint(std::uint64_t code, std::size_t n) {
  JointAction joint(n, CommAction::solo_process);
  for (std::size_t i = n; i-- > 0;) {
    joint[i] = action_from_index(code % kNumActions);
    code /= kNumActions;
  }
  return joint;
}

// Runs a fixed joint-action sequence through the environment.
inline EpisodeScore evaluate_sequence(const TaskSpec& task, std::span<const JointAction> sequence,
                                      const EnvConfig& cfg) {
  Rng unused(0);
  EnvState s = reset(task, 1.0, unused);
  const std::size_t n = task.n_agents();
  for (const auto& joint : sequence) {
    const CommGraph g = action_to_adjacency(joint, n);
    propagate(s, g, execution_order(g), cfg);
  }
  return finish(s, task);
}

// Exhaustive search over all 6^(N*T) open-loop joint-action sequences,
// enumerated lexicographically (round 1 agent 0 most significant); the first
// maximum is kept.
inline OracleResult oracle_optimal(const TaskSpec& task, const EnvConfig& cfg, std::size_t rounds,
                                   const RewardWeights& weights) {
  task.validate();
  const std::size_t n = task.n_agents();
  const std::uint64_t total = open_loop_count(n, rounds);
  if (total > kMaxOracleSequences)
    throw ConfigError("oracle: 6^" + std::to_string(n * rounds) + " = " +
                      (n * rounds <= 24 ? std::to_string(total) : std::string("too many")) +
                      " open-loop sequences exceed the limit of " +
                      std::to_string(kMaxOracleSequences));

  // Per joint action: graph, order, position table and token cost.
  std::uint64_t per_round = 1;
  for (std::size_t i = 0; i < n; ++i) per_round *= kNumActions;
  struct Plan {
    std::vector<std::size_t> order;
    std::vector<std::size_t> pos;
    std::vector<std::vector<std::size_t>> senders;  // senders[v]
    double tokens = 0.0;
  };
  std::vector<Plan> plans(per_round);
  for (std::uint64_t code = 0; code < per_round; ++code) {
    const CommGraph g = action_to_adjacency(decode_joint(code, n), n);
    const ExecutionOrder eo = execution_order(g);
    Plan& p = plans[code];
    p.order = eo.order;
    p.pos.resize(n);
    for (std::size_t k = 0; k < n; ++k) p.pos[eo.order[k]] = k;
    p.senders.resize(n);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t u = 0; u < n; ++u)
        if (u != v && g.edge(u, v)) p.senders[v].push_back(u);
    p.tokens = round_tokens(g, cfg);
  }

  Rng unused(0);
  const EnvState initial = reset(task, 1.0, unused);
  OracleResult best;
  std::vector<std::uint64_t> codes(rounds, 0), best_codes(rounds, 0);
  std::vector<std::uint64_t> start(n);
  for (std::uint64_t seq = 0; seq < total; ++seq) {
    std::uint64_t rest = seq;
    for (std::size_t t = rounds; t-- > 0;) {
      codes[t] = rest % per_round;
      rest /= per_round;
    }
    EnvState s = initial;
    for (std::size_t t = 0; t < rounds; ++t) {
      const Plan& p = plans[codes[t]];
      start = s.clues;
      for (std::size_t v : p.order) {
        for (std::size_t u : p.senders[v]) {
          if (static_cast<int>(u) == s.adversary) {
            s.poison[v] += 1;
            continue;
          }
          s.clues[v] |= (p.pos[u] < p.pos[v]) ? s.clues[u] : start[u];
        }
      }
      s.tokens += p.tokens;
    }
    const EpisodeScore score = finish(s, task);
    const double r = reward(score.accuracy, score.tokens, weights);
    if (seq == 0 || r > best.best_return) {
      best.best_return = r;
      best.accuracy = score.accuracy;
      best.tokens = score.tokens;
      best_codes = codes;
    }
  }
  best.evaluations = total;
  for (auto c : best_codes) best.sequence.push_back(decode_joint(c, n));
  return best;
}

// ---------------------------------------------------------------------------
// Task suite text format
//
//   # comment
//   K kappa adversary lambda clues_0 clues_1 ... clues_{N-1}
//
// Each clue list is comma-separated clue ids, or "-" when empty; adversary is
// an agent index or -1.
// ---------------------------------------------------------------------------

inline std::string format_clues(std::uint64_t mask) {
  if (mask == 0) return "-";
  std::string out;
  for (std::size_t k = 0; k < kMaxClues; ++k) {
    if (!(mask >> k & 1ULL)) continue;
    if (!out.empty()) out += ',';
    out += std::to_string(k);
  }
  return out;
}

inline std::uint64_t parse_clues(const std::string& token, std::size_t line) {
  if (token == "-") return 0;
  std::uint64_t mask = 0;
  std::stringstream in(token);
  std::string part;
  while (std::getline(in, part, ',')) {
    std::size_t used = 0;
    unsigned long id = 0;
    try {
      id = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size() || id >= kMaxClues)
      throw ConfigError("suite line " + std::to_string(line) + ": bad clue id '" + part + "'");
    mask |= 1ULL << id;
  }
  return mask;
}

inline std::string format_task(const TaskSpec& t) {
  std::ostringstream out;
  out.precision(17);
  out << t.K << ' ' << t.kappa << ' ' << t.adversary << ' ' << t.poison_weight;
  for (auto c : t.clues) out << ' ' << format_clues(c);
  return out.str();
}

inline std::vector<TaskSpec> parse_suite(std::istream& in) {
  std::vector<TaskSpec> tasks;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream fields(raw);
    std::vector<std::string> tok;
    for (std::string w; fields >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    if (tok.size() < 6)
      throw ConfigError("suite line " + std::to_string(line) +
                        ": expected 'K kappa adversary lambda' and at least two clue lists");
    TaskSpec t;
    try {
      std::size_t used = 0;
      t.K = std::stoul(tok[0], &used);
      if (used != tok[0].size()) throw std::invalid_argument("K");
      t.kappa = std::stoul(tok[1], &used);
      if (used != tok[1].size()) throw std::invalid_argument("kappa");
      t.adversary = std::stoi(tok[2], &used);
      if (used != tok[2].size()) throw std::invalid_argument("adversary");
      t.poison_weight = std::stod(tok[3], &used);
      if (used != tok[3].size()) throw std::invalid_argument("lambda");
    } catch (const std::exception&) {
      throw ConfigError("suite line " + std::to_string(line) + ": malformed numeric field");
    }
    for (std::size_t k = 4; k < tok.size(); ++k) t.clues.push_back(parse_clues(tok[k], line));
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("suite line " + std::to_string(line) + ": " + e.what());
    }
    if (!tasks.empty() && tasks.front().n_agents() != t.n_agents())
      throw ConfigError("suite line " + std::to_string(line) + ": agent count differs from first task");
    tasks.push_back(std::move(t));
  }
  return tasks;
}

inline void write_suite(std::ostream& out, std::span<const TaskSpec> tasks) {
  out << "# K kappa adversary lambda clues_0 ... clues_{N-1}\n";
  for (const auto& t : tasks) out << format_task(t) << '\n';
}

}  // namespace aqmix
