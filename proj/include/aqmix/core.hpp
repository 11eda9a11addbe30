#pragma once

// Domain types of the networked multi-agent decision process: communication
// actions, the per-round communication graph, observation and global-state
// encodings, episodes and run configuration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aqmix/errors.hpp"

namespace aqmix {

inline constexpr std::size_t kNumActions = 6;

enum class CommAction : std::uint8_t {
  solo_process = 0,
  broadcast_all = 1,
  selective_query = 2,
  aggregate_refine = 3,
  execute_verify = 4,
  debate_check = 5,
};

inline constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "solo_process",     "broadcast_all",  "selective_query",
    "aggregate_refine", "execute_verify", "debate_check"};

inline std::size_t to_index(CommAction a) { return static_cast<std::size_t>(a); }

inline CommAction action_from_index(std::size_t code) {
  if (code >= kNumActions) throw ConfigError("action code out of range: " + std::to_string(code));
  return static_cast<CommAction>(code);
}

inline std::string_view action_name(CommAction a) { return kActionNames[to_index(a)]; }

inline CommAction action_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumActions; ++i)
    if (kActionNames[i] == name) return static_cast<CommAction>(i);
  throw ConfigError("unknown communication action: " + std::string(name));
}

// One action per agent for one round.
struct JointAction {
  std::vector<CommAction> actions;

  JointAction() = default;
  explicit JointAction(std::vector<CommAction> a) : actions(std::move(a)) {}
  JointAction(std::size_t n, CommAction fill) : actions(n, fill) {}

  std::size_t size() const { return actions.size(); }
  CommAction operator[](std::size_t i) const { return actions[i]; }
  CommAction& operator[](std::size_t i) { return actions[i]; }

  std::size_t count(CommAction a) const {
    std::size_t c = 0;
    for (auto x : actions) c += (x == a);
    return c;
  }

  friend bool operator==(const JointAction&, const JointAction&) = default;
};

// Directed communication graph with self-loops always present. adj(i, j)
// means information flows from i to j.
class CommGraph {
 public:
  CommGraph() = default;

  static CommGraph identity(std::size_t n) {
    if (n == 0) throw ConfigError("CommGraph: agent count must be positive");
    CommGraph g;
    g.n_ = n;
    g.adj_.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) g.adj_[i * n + i] = 1;
    return g;
  }

  static CommGraph complete(std::size_t n) {
    CommGraph g = identity(n);
    std::fill(g.adj_.begin(), g.adj_.end(), 1);
    return g;
  }

  std::size_t size() const { return n_; }

  bool edge(std::size_t from, std::size_t to) const { return adj_[from * n_ + to] != 0; }

  void add_edge(std::size_t from, std::size_t to) {
    if (from >= n_ || to >= n_) throw ShapeError("CommGraph: edge endpoint out of range");
    adj_[from * n_ + to] = 1;
  }

  // Non-self edges only.
  std::size_t edge_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) c += (i != j && edge(i, j));
    return c;
  }

  double density() const {
    if (n_ < 2) return 0.0;
    return static_cast<double>(edge_count()) / static_cast<double>(n_ * (n_ - 1));
  }

  std::size_t in_degree(std::size_t v) const {
    std::size_t c = 0;
    for (std::size_t u = 0; u < n_; ++u) c += (u != v && edge(u, v));
    return c;
  }

  std::size_t out_degree(std::size_t u) const {
    std::size_t c = 0;
    for (std::size_t v = 0; v < n_; ++v) c += (u != v && edge(u, v));
    return c;
  }

  std::span<const std::uint8_t> raw() const { return adj_; }

  friend bool operator==(const CommGraph&, const CommGraph&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> adj_;
};

// ---------------------------------------------------------------------------
// Observation / GlobalState
// ---------------------------------------------------------------------------

struct Observation {
  std::vector<double> features;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct GlobalState {
  std::vector<double> features;
  friend bool operator==(const GlobalState&, const GlobalState&) = default;
};

// Observation layout:
//   [agent id one-hot (N)] [t/T] [previous own action one-hot (6)]
//   [in-degree/(N-1), out-degree/(N-1)] [min(tokens/max_tokens, 1)]
//   [task features (F)]
struct ObservationLayout {
  std::size_t n_agents = 3;
  std::size_t rounds = 2;
  std::size_t task_features = 0;
  double max_tokens = 10000.0;

  std::size_t id_offset() const { return 0; }
  std::size_t round_offset() const { return n_agents; }
  std::size_t action_offset() const { return n_agents + 1; }
  std::size_t degree_offset() const { return n_agents + 1 + kNumActions; }
  std::size_t token_offset() const { return n_agents + 3 + kNumActions; }
  std::size_t task_offset() const { return n_agents + 4 + kNumActions; }
  std::size_t obs_dim() const { return task_offset() + task_features; }
  std::size_t state_dim() const { return n_agents * obs_dim() + 3; }
};

inline std::size_t observation_dim(std::size_t n_agents, std::size_t task_features) {
  return n_agents + 1 + kNumActions + 2 + 1 + task_features;
}

inline Observation encode_observation(const ObservationLayout& layout, std::size_t agent_id,
                                      std::size_t round, std::optional<CommAction> prev_action,
                                      const CommGraph& graph, double tokens_so_far,
                                      std::span<const double> task_features) {
  const std::size_t n = layout.n_agents;
  if (agent_id >= n) throw ConfigError("encode_observation: agent id out of range");
  if (round < 1 || round > layout.rounds) throw ConfigError("encode_observation: round out of range");
  if (task_features.size() != layout.task_features)
    throw ConfigError("encode_observation: expected " + std::to_string(layout.task_features) +
                      " task features, got " + std::to_string(task_features.size()));
  if (graph.size() != n) throw ConfigError("encode_observation: graph size mismatch");
  if (round == 1 && prev_action) throw ConfigError("encode_observation: no previous action at round 1");
  if (round > 1 && !prev_action) throw ConfigError("encode_observation: missing previous action");

  Observation obs;
  obs.features.assign(layout.obs_dim(), 0.0);
  auto& f = obs.features;
  f[layout.id_offset() + agent_id] = 1.0;
  f[layout.round_offset()] = static_cast<double>(round) / static_cast<double>(layout.rounds);
  if (prev_action) f[layout.action_offset() + to_index(*prev_action)] = 1.0;
  const double denom = static_cast<double>(n - 1);
  f[layout.degree_offset()] = n > 1 ? graph.in_degree(agent_id) / denom : 0.0;
  f[layout.degree_offset() + 1] = n > 1 ? graph.out_degree(agent_id) / denom : 0.0;
  f[layout.token_offset()] = std::clamp(tokens_so_far / layout.max_tokens, 0.0, 1.0);
  for (std::size_t k = 0; k < task_features.size(); ++k) {
    if (!std::isfinite(task_features[k])) throw ConfigError("encode_observation: non-finite task feature");
    f[layout.task_offset() + k] = task_features[k];
  }
  return obs;
}

inline std::size_t decode_agent_id(const ObservationLayout& layout, const Observation& obs) {
  for (std::size_t i = 0; i < layout.n_agents; ++i)
    if (obs.features[layout.id_offset() + i] == 1.0) return i;
  throw ConfigError("decode_agent_id: no identity bit set");
}

inline std::optional<CommAction> decode_prev_action(const ObservationLayout& layout,
                                                    const Observation& obs) {
  for (std::size_t a = 0; a < kNumActions; ++a)
    if (obs.features[layout.action_offset() + a] == 1.0) return action_from_index(a);
  return std::nullopt;
}

// Global state: all observations, then [edge_count/(N(N-1)), density,
// active_agents/N].
inline GlobalState encode_global_state(const ObservationLayout& layout,
                                       std::span<const Observation> observations,
                                       const CommGraph& graph, std::size_t active_agents) {
  const std::size_t n = layout.n_agents;
  if (observations.size() != n)
    throw ConfigError("encode_global_state: expected " + std::to_string(n) + " observations, got " +
                      std::to_string(observations.size()));
  if (graph.size() != n) throw ConfigError("encode_global_state: graph size mismatch");
  if (active_agents > n) throw ConfigError("encode_global_state: active agents exceed N");
  GlobalState s;
  s.features.reserve(layout.state_dim());
  for (const auto& o : observations) {
    if (o.features.size() != layout.obs_dim())
      throw ConfigError("encode_global_state: observation dimension mismatch");
    s.features.insert(s.features.end(), o.features.begin(), o.features.end());
  }
  const double pairs = static_cast<double>(n * (n - 1));
  s.features.push_back(static_cast<double>(graph.edge_count()) / pairs);
  s.features.push_back(graph.density());
  s.features.push_back(static_cast<double>(active_agents) / static_cast<double>(n));
  return s;
}

// Agents whose action is not solo_process.
inline std::size_t active_agents(const JointAction& joint) {
  return joint.size() - joint.count(CommAction::solo_process);
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct RoundRecord {
  std::vector<Observation> observations;
  JointAction actions;
  CommGraph graph;  // graph the observations were computed on
  GlobalState state;
  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct Episode {
  std::vector<RoundRecord> rounds;
  double reward = 0.0;  // terminal team reward
  double accuracy = 0.0;
  double tokens = 0.0;
  friend bool operator==(const Episode&, const Episode&) = default;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct EnvConfig {
  double base_tokens = 200.0;  // per agent per round
  double edge_tokens = 400.0;  // per non-self edge per round
  double reliability = 0.9;    // probability a reliability flag is correct
  double adversary_prob = 0.25;

  void validate() const {
    if (!(base_tokens >= 0.0) || !(edge_tokens >= 0.0))
      throw ConfigError("token costs must be nonnegative");
    if (!(reliability >= 0.5 && reliability <= 1.0))
      throw ConfigError("reliability must lie in [0.5, 1]");
    if (!(adversary_prob >= 0.0 && adversary_prob <= 1.0))
      throw ConfigError("adversary_prob must lie in [0, 1]");
  }
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

enum class InitMode : std::uint8_t { xavier, zero };

struct RunConfig {
  // Team and episode shape.
  std::size_t n_agents = 3;
  std::size_t rounds = 2;

  // Network widths.
  std::size_t gnn_layers = 2;
  std::size_t gnn_hidden = 128;
  std::size_t gru_hidden = 128;
  std::size_t head_hidden = 128;
  std::size_t mix_hidden = 64;
  std::size_t hyper_hidden = 64;

  // Optimization.
  double learning_rate = 5e-4;
  double gamma = 0.99;
  std::size_t buffer_capacity = 5000;
  std::size_t batch_size = 8;
  double clip_norm = 10.0;
  std::size_t target_interval = 200;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t episodes = 2000;
  InitMode init = InitMode::xavier;

  // Reward.
  double w_acc = 1.25;
  double w_tok = 0.10;
  double max_tokens = 10000.0;

  EnvConfig env;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 500;
  std::string suite;  // task suite path (may be empty)

  // ClueRelay task features: [own clues/K, kappa/K, N reliability flags, difficulty bit].
  std::size_t task_features() const { return 3 + n_agents; }
  std::size_t obs_dim() const { return observation_dim(n_agents, task_features()); }
  std::size_t state_dim() const { return n_agents * obs_dim() + 3; }

  ObservationLayout layout() const {
    return ObservationLayout{n_agents, rounds, task_features(), max_tokens};
  }

  void validate() const {
    if (n_agents < 2) throw ConfigError("n_agents must be >= 2");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(epsilon_end <= epsilon_start)) throw ConfigError("epsilon_end must be <= epsilon_start");
    if (!(epsilon_start <= 1.0 && epsilon_end >= 0.0)) throw ConfigError("epsilon bounds must lie in [0, 1]");
    if (gnn_layers == 0 || gnn_hidden == 0 || gru_hidden == 0 || head_hidden == 0 ||
        mix_hidden == 0 || hyper_hidden == 0)
      throw ConfigError("network widths must be positive");
    if (buffer_capacity == 0 || batch_size == 0 || target_interval == 0 || episodes == 0)
      throw ConfigError("capacities and counts must be positive");
    if (batch_size > buffer_capacity) throw ConfigError("batch_size exceeds buffer_capacity");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (!(max_tokens > 0.0)) throw ConfigError("max_tokens must be positive");
    if (!(w_acc >= 0.0) || !(w_tok >= 0.0)) throw ConfigError("reward weights must be nonnegative");
    env.validate();
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace aqmix
