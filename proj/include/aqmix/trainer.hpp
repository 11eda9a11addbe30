#pragma once

// Episode rollout, replay buffer, exploration schedule and the batched TD
// update loop with periodic hard target synchronization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/env.hpp"
#include "aqmix/numerics.hpp"
#include "aqmix/qmix.hpp"
#include "aqmix/topology.hpp"

namespace aqmix {

// Linear from `start` at episode 0 to `end` at episode `total`.
inline double epsilon(std::size_t episode, std::size_t total, double start = 1.0,
                      double end = 0.05) {
  if (total == 0) return end;
  const double frac = std::min(1.0, static_cast<double>(episode) / static_cast<double>(total));
  return start + (end - start) * frac;
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 5000) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  void push(Episode ep) {
    if (slots_.size() < capacity_) {
      slots_.push_back(std::move(ep));
    } else {
      slots_[inserted_ % capacity_] = std::move(ep);
    }
    ++inserted_;
  }

  std::size_t size() const { return slots_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }

  // i-th oldest episode still held.
  const Episode& oldest(std::size_t i) const {
    if (i >= slots_.size()) throw ConfigError("replay buffer index out of range");
    if (slots_.size() < capacity_) return slots_[i];
    return slots_[(inserted_ + i) % capacity_];
  }

  // Distinct episodes, uniformly at random.
  std::vector<Episode> sample(std::size_t batch, Rng& rng) const {
    if (slots_.size() < batch)
      throw ConfigError("replay buffer holds " + std::to_string(slots_.size()) +
                        " episodes, batch needs " + std::to_string(batch));
    std::vector<std::size_t> picked;
    picked.reserve(batch);
    while (picked.size() < batch) {
      const std::size_t k = rng.index(slots_.size());
      if (std::find(picked.begin(), picked.end(), k) == picked.end()) picked.push_back(k);
    }
    std::vector<Episode> out;
    out.reserve(batch);
    for (auto k : picked) out.push_back(slots_[k]);
    return out;
  }

  // Raw storage in slot order, for serialization.
  const std::vector<Episode>& slots() const { return slots_; }
  void restore(std::vector<Episode> slots, std::uint64_t inserted) {
    if (slots.size() > capacity_) throw ConfigError("replay buffer restore exceeds capacity");
    slots_ = std::move(slots);
    inserted_ = inserted;
  }

 private:
  std::size_t capacity_;
  std::vector<Episode> slots_;
  std::uint64_t inserted_ = 0;
};

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

// Chooses the joint action for round `round` (1-based) from the round's
// observations and the graph they were computed on.
using ActionSelector =
    std::function<JointAction(std::size_t round, std::span<const Observation>, const CommGraph&)>;

// Runs one episode: the graph starts at the identity; each round builds
// observations on the current graph, selects actions, maps them to the next
// graph and propagates clues along it in execution order.
inline Episode rollout(const TaskSpec& task, const RunConfig& cfg, Rng& env_rng,
                       const ActionSelector& select) {
  const std::size_t n = cfg.n_agents;
  if (task.n_agents() != n)
    throw ConfigError("task has " + std::to_string(task.n_agents()) + " agents, config expects " +
                      std::to_string(n));
  const ObservationLayout layout = cfg.layout();
  EnvState state = reset(task, cfg.env.reliability, env_rng);
  CommGraph graph = CommGraph::identity(n);
  std::optional<JointAction> prev;
  std::size_t active = n;
  Episode ep;
  ep.rounds.reserve(cfg.rounds);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundRecord rec;
    rec.observations.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto features = task_features(task, state, i);
      std::optional<CommAction> last;
      if (prev) last = (*prev)[i];
      rec.observations.push_back(
          encode_observation(layout, i, t, last, graph, state.tokens, features));
    }
    rec.state = encode_global_state(layout, rec.observations, graph, active);
    rec.graph = graph;
    rec.actions = select(t, rec.observations, graph);
    if (rec.actions.size() != n) throw ConfigError("selector returned wrong joint-action size");
    CommGraph next = action_to_adjacency(rec.actions, n);
    propagate(state, next, execution_order(next), cfg.env);
    active = active_agents(rec.actions);
    prev = rec.actions;
    graph = std::move(next);
    ep.rounds.push_back(std::move(rec));
  }
  const EpisodeScore score = finish(state, task);
  ep.accuracy = score.accuracy;
  ep.tokens = score.tokens;
  ep.reward = reward(score.accuracy, score.tokens, RewardWeights::from(cfg));
  return ep;
}

// Epsilon-greedy selector over the shared Q-network; keeps its own recurrent
// state, so create one per episode.
inline ActionSelector qmix_selector(const QMixModel& model, const ParameterStore& params,
                                    double eps, Rng& rng) {
  auto z = std::make_shared<std::vector<std::vector<double>>>(model.initial_states());
  return [&model, &params, eps, &rng, z](std::size_t, std::span<const Observation> obs,
                                         const CommGraph& graph) {
    const auto q = model.step(params, obs, graph, *z);
    return select_actions(q, eps, rng);
  };
}

// Replays a fixed open-loop sequence (the last entry repeats if short).
inline ActionSelector fixed_selector(std::vector<JointAction> sequence) {
  return [seq = std::move(sequence)](std::size_t round, std::span<const Observation>,
                                     const CommGraph&) {
    return seq[std::min(round, seq.size()) - 1];
  };
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct MetricsRecord {
  std::uint64_t episode = 0;
  double epsilon = 0.0;
  double reward = 0.0;
  double accuracy = 0.0;
  double tokens = 0.0;
  double td_loss = std::numeric_limits<double>::quiet_NaN();  // NaN before the first update
  std::array<std::uint64_t, kNumActions> action_counts{};
  double mean_density = 0.0;
};

inline MetricsRecord summarize(const Episode& ep, std::uint64_t index, double eps) {
  MetricsRecord m;
  m.episode = index;
  m.epsilon = eps;
  m.reward = ep.reward;
  m.accuracy = ep.accuracy;
  m.tokens = ep.tokens;
  double density = 0.0;
  for (const auto& r : ep.rounds) {
    for (auto a : r.actions.actions) m.action_counts[to_index(a)] += 1;
    density += action_to_adjacency(r.actions, r.actions.size()).density();
  }
  m.mean_density = ep.rounds.empty() ? 0.0 : density / static_cast<double>(ep.rounds.size());
  return m;
}

struct TrainerState {
  RunConfig config;
  ParameterStore online;
  ParameterStore target;
  AdamState adam;
  std::uint64_t gradient_steps = 0;
  std::uint64_t episodes_done = 0;
  Rng rng;
  ReplayBuffer buffer;
};

struct StepReport {
  double loss = 0.0;
  double grad_norm = 0.0;       // before clipping
  double clipped_norm = 0.0;    // after clipping
  bool target_synced = false;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<TaskSpec> suite) : suite_(std::move(suite)) {
    cfg.validate();
    state_.config = cfg;
    model_ = QMixModel(state_.online, ModelDims::from(cfg));
    state_.rng = Rng(cfg.seed);
    Rng init_rng = state_.rng.split();
    model_.initialize(state_.online, cfg.init, init_rng);
    state_.target = state_.online;
    state_.adam = AdamState(state_.online.size());
    state_.buffer = ReplayBuffer(cfg.buffer_capacity);
    check_suite();
  }

  // Adopts a previously saved state (e.g. from a checkpoint).
  Trainer(TrainerState state, std::vector<TaskSpec> suite)
      : suite_(std::move(suite)), state_(std::move(state)) {
    state_.config.validate();
    ParameterStore layout;
    model_ = QMixModel(layout, ModelDims::from(state_.config));
    if (!layout.same_layout(state_.online) || !layout.same_layout(state_.target))
      throw ConfigError("trainer state layout does not match its configuration");
    check_suite();
  }

  const RunConfig& config() const { return state_.config; }
  const QMixModel& model() const { return model_; }
  const TrainerState& state() const { return state_; }
  TrainerState& state() { return state_; }
  const std::vector<TaskSpec>& suite() const { return suite_; }

  Episode run_episode(const TaskSpec& task, double eps, Rng& rng) const {
    return rollout(task, state_.config, rng, qmix_selector(model_, state_.online, eps, rng));
  }

  // One TD update on a batch sampled from the buffer.
  StepReport train_step() {
    const RunConfig& cfg = state_.config;
    auto batch = state_.buffer.sample(cfg.batch_size, state_.rng);
    return train_on(batch);
  }

  StepReport train_on(std::span<const Episode> batch) {
    const RunConfig& cfg = state_.config;
    state_.online.zero_grad();
    const TdLossResult res = td_loss(batch, model_, state_.online, state_.target, cfg.gamma);
    if (!std::isfinite(res.loss)) throw TrainingFault("non-finite TD loss\n" + describe_batch(batch));
    StepReport report;
    report.loss = res.loss;
    report.grad_norm = clip_global_norm(state_.online.grads(), cfg.clip_norm);
    report.clipped_norm = global_norm(state_.online.grads());
    try {
      adam_step(state_.online.values(), state_.online.grads(), state_.adam,
                AdamOptions{cfg.learning_rate});
    } catch (const TrainingFault& e) {
      throw TrainingFault(std::string(e.what()) + "\n" + describe_batch(batch));
    }
    state_.gradient_steps += 1;
    if (state_.gradient_steps % cfg.target_interval == 0) {
      state_.target.copy_values_from(state_.online);
      report.target_synced = true;
    }
    return report;
  }

  // Samples a task (injecting an adversary with the configured probability),
  // rolls it out epsilon-greedily, stores it and runs one update once the
  // buffer holds a full batch.
  MetricsRecord train_episode() {
    if (suite_.empty()) throw ConfigError("training suite is empty");
    const RunConfig& cfg = state_.config;
    const std::uint64_t index = state_.episodes_done;
    const double eps = epsilon(index, cfg.episodes, cfg.epsilon_start, cfg.epsilon_end);
    TaskSpec task = suite_[state_.rng.index(suite_.size())];
    if (task.adversary < 0 && state_.rng.bernoulli(cfg.env.adversary_prob))
      task.adversary = static_cast<int>(state_.rng.index(cfg.n_agents));
    Episode ep = run_episode(task, eps, state_.rng);
    MetricsRecord m = summarize(ep, index, eps);
    state_.buffer.push(std::move(ep));
    if (state_.buffer.size() >= cfg.batch_size) m.td_loss = train_step().loss;
    state_.episodes_done += 1;
    return m;
  }

  // Greedy mean return over `tasks` (clean, reliability flags drawn from a
  // stream seeded by `seed`).
  double greedy_mean_return(std::span<const TaskSpec> tasks, std::uint64_t seed) const {
    double total = 0.0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      Rng rng(seed + k);
      total += run_episode(tasks[k], 0.0, rng).reward;
    }
    return tasks.empty() ? 0.0 : total / static_cast<double>(tasks.size());
  }

 private:
  void check_suite() const {
    for (const auto& t : suite_) {
      t.validate();
      if (t.n_agents() != state_.config.n_agents)
        throw ConfigError("suite task has " + std::to_string(t.n_agents()) +
                          " agents, config expects " + std::to_string(state_.config.n_agents));
    }
  }

  static std::string describe_batch(std::span<const Episode> batch) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out << "episode " << b << ": reward=" << batch[b].reward << " actions=";
      for (const auto& r : batch[b].rounds) {
        out << '[';
        for (auto a : r.actions.actions) out << to_index(a);
        out << ']';
      }
      out << '\n';
    }
    return out.str();
  }

  std::vector<TaskSpec> suite_;
  TrainerState state_;
  QMixModel model_;
};

}  // namespace aqmix
