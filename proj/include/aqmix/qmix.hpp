#pragma once

// Agent network + mixer bundle and the TD objective over replayed episodes.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/mixer.hpp"
#include "aqmix/numerics.hpp"
#include "aqmix/qnet.hpp"

namespace aqmix {

struct ModelDims {
  std::size_t n_agents = 3;
  AgentNetDims agent;
  MixerDims mixer;

  static ModelDims from(const RunConfig& c) {
    return {c.n_agents, AgentNetDims::from(c), MixerDims::from(c)};
  }
};

// Holds segment ids only; parameters live in a ParameterStore, so one model
// serves both the online and the target store.
class QMixModel {
 public:
  QMixModel() = default;
  QMixModel(ParameterStore& store, const ModelDims& dims, bool monotone = kMonotoneMixingDefault)
      : dims_(dims), agent_(store, dims.agent), mixer_(store, dims.mixer, monotone) {}

  const ModelDims& dims() const { return dims_; }
  const AgentNet& agent() const { return agent_; }
  const Mixer& mixer() const { return mixer_; }
  Mixer& mixer() { return mixer_; }

  void initialize(ParameterStore& store, InitMode mode, Rng& rng) const {
    if (mode == InitMode::zero) {
      std::fill(store.values().begin(), store.values().end(), 0.0);
      return;
    }
    std::unordered_map<std::string, std::size_t> blocks;
    for (auto& [name, count] : agent_.gate_blocks(store)) blocks[name] = count;
    xavier_init_store(store, rng, blocks);
  }

  // One round of decentralized inference: updates `z` in place and returns
  // each agent's action values.
  std::vector<QValues> step(const ParameterStore& p, std::span<const Observation> obs,
                            const CommGraph& graph, Batch& z) const {
    const Batch h = agent_.gnn_forward(p, obs, graph);
    z = agent_.temporal_forward(p, z, h);
    return agent_.head_forward(p, z);
  }

  Batch initial_states(std::size_t teams = 1) const {
    return Batch(teams * dims_.n_agents, agent_.initial_state());
  }

 private:
  ModelDims dims_;
  AgentNet agent_;
  Mixer mixer_;
};

struct TdLossResult {
  double loss = 0.0;
  std::size_t terms = 0;
  std::vector<double> targets;  // per (episode, round), row-major
  std::vector<double> q_tot;    // per (episode, round)
};

namespace detail {

// Round t of every episode as one graph of disjoint teams (node b*n + i).
struct StackedRound {
  std::vector<Observation> obs;
  CommGraph graph;
};

inline StackedRound stack_round(std::span<const Episode> batch, std::size_t t, std::size_t n) {
  StackedRound out;
  out.graph = CommGraph::identity(batch.size() * n);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const RoundRecord& r = batch[b].rounds[t];
    if (r.actions.size() != n || r.observations.size() != n || r.graph.size() != n)
      throw ConfigError("td_loss: round does not match agent count");
    out.obs.insert(out.obs.end(), r.observations.begin(), r.observations.end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && r.graph.edge(i, j)) out.graph.add_edge(b * n + i, b * n + j);
  }
  return out;
}

struct RoundForward {
  GnnCache gnn;
  std::vector<GruCache> temporal;
  std::vector<HeadCache> head;
  std::vector<MixCache> mix;    // per episode
  std::vector<double> q_tot;    // per episode
};

// max over joint actions of the target Q_tot at each round, via per-agent
// greedy values (valid because the target mixer is monotone). out[b][t].
inline std::vector<std::vector<double>> target_max_values(const QMixModel& model,
                                                          const ParameterStore& target,
                                                          std::span<const Episode> batch) {
  const std::size_t n = model.dims().n_agents;
  const std::size_t T = batch.front().rounds.size();
  Batch z = model.initial_states(batch.size());
  std::vector<std::vector<double>> out(batch.size(), std::vector<double>(T, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    const StackedRound sr = stack_round(batch, t, n);
    const auto q = model.step(target, sr.obs, sr.graph, z);
    if (t == 0) continue;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<double> best(n);
      for (std::size_t i = 0; i < n; ++i) best[i] = q[b * n + i][argmax(q[b * n + i])];
      out[b][t] = model.mixer().mix(target, best, batch[b].rounds[t].state.features);
    }
  }
  return out;
}

}  // namespace detail

// Mean squared TD error over all rounds of all episodes. Targets: gamma times
// the target network's greedy Q_tot at the next round, and the terminal reward
// at the last round. Gradients are accumulated into `online.grads()` (call
// zero_grad() first).
inline TdLossResult td_loss(std::span<const Episode> batch, const QMixModel& model,
                            ParameterStore& online, const ParameterStore& target, double gamma,
                            bool compute_grad = true) {
  if (batch.empty()) throw ConfigError("td_loss: empty batch");
  const std::size_t n = model.dims().n_agents;
  const std::size_t T = batch.front().rounds.size();
  const std::size_t E = batch.size();
  for (const auto& ep : batch) {
    if (ep.rounds.empty()) throw ConfigError("td_loss: episode without rounds");
    if (ep.rounds.size() != T) throw ConfigError("td_loss: episodes differ in round count");
  }
  TdLossResult result;
  result.terms = E * T;
  result.targets.assign(E * T, 0.0);
  result.q_tot.assign(E * T, 0.0);
  const double scale = 1.0 / static_cast<double>(result.terms);
  const AgentNet& net = model.agent();
  const std::size_t G = net.dims().gru_hidden;
  const std::size_t H = net.dims().gnn_hidden;

  const auto next_max = detail::target_max_values(model, target, batch);
  auto y = [&](std::size_t b, std::size_t t) {
    return (t + 1 == T) ? batch[b].reward : gamma * next_max[b][t + 1];
  };

  std::vector<detail::RoundForward> fw(T);
  Batch z = model.initial_states(E);
  for (std::size_t t = 0; t < T; ++t) {
    const detail::StackedRound sr = detail::stack_round(batch, t, n);
    auto& f = fw[t];
    const Batch h = net.gnn_forward(online, sr.obs, sr.graph, &f.gnn);
    z = net.temporal_forward(online, z, h, &f.temporal);
    const auto q = net.head_forward(online, z, &f.head);
    f.mix.resize(E);
    f.q_tot.resize(E);
    for (std::size_t b = 0; b < E; ++b) {
      const RoundRecord& r = batch[b].rounds[t];
      std::vector<double> chosen(n);
      for (std::size_t i = 0; i < n; ++i) chosen[i] = q[b * n + i][to_index(r.actions[i])];
      f.q_tot[b] = model.mixer().mix(online, chosen, r.state.features, &f.mix[b]);
      result.targets[b * T + t] = y(b, t);
      result.q_tot[b * T + t] = f.q_tot[b];
    }
  }
  // Summed in episode-major order so the loss does not depend on batching.
  for (std::size_t k = 0; k < E * T; ++k) {
    const double err = result.q_tot[k] - result.targets[k];
    result.loss += err * err * scale;
  }
  if (!compute_grad) return result;

  Batch dz_next(E * n, std::vector<double>(G, 0.0));
  for (std::size_t t = T; t-- > 0;) {
    auto& f = fw[t];
    std::vector<QValues> dq(E * n, QValues{});
    for (std::size_t b = 0; b < E; ++b) {
      const double dtot = 2.0 * (f.q_tot[b] - y(b, t)) * scale;
      const auto dqb = model.mixer().mix_backward(online, f.mix[b], dtot);
      const RoundRecord& r = batch[b].rounds[t];
      for (std::size_t i = 0; i < n; ++i) dq[b * n + i][to_index(r.actions[i])] = dqb[i];
    }
    Batch dz = dz_next;
    net.head_backward(online, f.head, dq, dz);
    Batch dh(E * n, std::vector<double>(H, 0.0));
    Batch dz_prev(E * n, std::vector<double>(G, 0.0));
    net.temporal_backward(online, f.temporal, dz, dh, dz_prev);
    net.gnn_backward(online, f.gnn, dh);
    dz_next = std::move(dz_prev);
  }
  return result;
}

}  // namespace aqmix
