#pragma once

// Metrics logging and the evaluation / topology diagnostics used by the CLI.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/env.hpp"
#include "aqmix/trainer.hpp"

namespace aqmix {

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

inline std::string metrics_header() {
  std::string h = "episode,epsilon,reward,accuracy,tokens,td_loss";
  for (auto name : kActionNames) h += "," + std::string(name);
  return h + ",mean_density";
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_row(const MetricsRecord& m) {
  std::string row = std::to_string(m.episode) + "," + num(m.epsilon) + "," + num(m.reward) + "," +
                    num(m.accuracy) + "," + num(m.tokens) + "," + num(m.td_loss);
  for (auto c : m.action_counts) row += "," + std::to_string(c);
  return row + "," + num(m.mean_density);
}

inline std::vector<MetricsRecord> parse_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != metrics_header())
    throw ConfigError("metrics: missing or unexpected header");
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7 + kNumActions)
      throw ConfigError("metrics line " + std::to_string(lineno) + ": expected " +
                        std::to_string(7 + kNumActions) + " fields");
    try {
      MetricsRecord m;
      m.episode = std::stoull(f[0]);
      m.epsilon = std::strtod(f[1].c_str(), nullptr);
      m.reward = std::strtod(f[2].c_str(), nullptr);
      m.accuracy = std::strtod(f[3].c_str(), nullptr);
      m.tokens = std::strtod(f[4].c_str(), nullptr);
      m.td_loss = std::strtod(f[5].c_str(), nullptr);
      for (std::size_t a = 0; a < kNumActions; ++a) m.action_counts[a] = std::stoull(f[6 + a]);
      m.mean_density = std::strtod(f[6 + kNumActions].c_str(), nullptr);
      out.push_back(m);
    } catch (const std::exception&) {
      throw ConfigError("metrics line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policies for evaluation
// ---------------------------------------------------------------------------

// Runs fn(0..count-1) on a pool of worker threads. Each index is handled
// exactly once; the first exception is rethrown after all workers stop.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(count, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < count;) {
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Makes a fresh selector per episode (recurrent state is per episode).
using PolicyFactory = std::function<ActionSelector(Rng&)>;

inline PolicyFactory greedy_policy(const QMixModel& model, const ParameterStore& params) {
  return [&model, &params](Rng& rng) { return qmix_selector(model, params, 0.0, rng); };
}

// Topology frozen to one joint action every round.
inline PolicyFactory fixed_policy(JointAction joint) {
  return [joint](Rng&) { return fixed_selector({joint}); };
}

inline std::string actions_string(const Episode& ep) {
  std::string s;
  for (std::size_t t = 0; t < ep.rounds.size(); ++t) {
    if (t) s += '|';
    for (std::size_t i = 0; i < ep.rounds[t].actions.size(); ++i) {
      if (i) s += ' ';
      s += action_name(ep.rounds[t].actions[i]);
    }
  }
  return s;
}

// Graph the joint action of round t induced.
inline CommGraph induced_graph(const RoundRecord& r) {
  return action_to_adjacency(r.actions, r.actions.size());
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalSummary {
  std::size_t tasks = 0;
  double accuracy = 0.0, tokens = 0.0, reward = 0.0;
  std::array<std::uint64_t, kNumActions> action_counts{};
};

struct AdversaryReport {
  EvalSummary attacked;
  double delta = 0.0;                 // clean accuracy - attacked accuracy
  double adversary_out_edges = 0.0;   // per round, adversary slot, attacked runs
  double clean_slot_out_edges = 0.0;  // per round, same slot, clean runs
};

struct EvalReport {
  EvalSummary clean;
  std::vector<Episode> clean_episodes;
  std::optional<AdversaryReport> adversary;
  std::vector<Episode> attacked_episodes;
  std::vector<std::size_t> adversary_slots;
};

// Slot the adversary occupies for task k: the task's own adversary if it
// names one, otherwise k mod N.
inline std::size_t adversary_slot(const TaskSpec& task, std::size_t k) {
  return task.adversary >= 0 ? static_cast<std::size_t>(task.adversary) : k % task.n_agents();
}

inline double mean_out_edges(const Episode& ep, std::size_t slot) {
  if (ep.rounds.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : ep.rounds) total += static_cast<double>(induced_graph(r).out_degree(slot));
  return total / static_cast<double>(ep.rounds.size());
}

// Greedy rollouts; task k's reliability flags come from Rng(seed + k) in both
// the clean and the attacked run. Clean runs drop any adversary the suite
// names.
inline EvalReport evaluate_policy(const PolicyFactory& policy, const RunConfig& cfg,
                                  std::span<const TaskSpec> suite, std::uint64_t seed,
                                  bool with_adversary) {
  if (suite.empty()) throw ConfigError("evaluation suite is empty");
  EvalReport rep;
  AdversaryReport adv;
  double clean_slot = 0.0, adv_slot = 0.0;
  auto add = [](EvalSummary& s, const Episode& ep) {
    s.tasks += 1;
    s.accuracy += ep.accuracy;
    s.tokens += ep.tokens;
    s.reward += ep.reward;
    for (const auto& r : ep.rounds)
      for (auto a : r.actions.actions) s.action_counts[to_index(a)] += 1;
  };
  const std::size_t count = suite.size();
  std::vector<Episode> clean_eps(count), attacked_eps(with_adversary ? count : 0);
  parallel_for(count, [&](std::size_t k) {
    TaskSpec clean = suite[k];
    clean.adversary = -1;
    Rng rng(seed + k);
    clean_eps[k] = rollout(clean, cfg, rng, policy(rng));
    if (with_adversary) {
      TaskSpec attacked = suite[k];
      attacked.adversary = static_cast<int>(adversary_slot(suite[k], k));
      Rng arng(seed + k);
      attacked_eps[k] = rollout(attacked, cfg, arng, policy(arng));
    }
  });
  // Reduced in task order so the sums do not depend on scheduling.
  for (std::size_t k = 0; k < count; ++k) {
    add(rep.clean, clean_eps[k]);
    if (with_adversary) {
      const std::size_t slot = adversary_slot(suite[k], k);
      clean_slot += mean_out_edges(clean_eps[k], slot);
      add(adv.attacked, attacked_eps[k]);
      adv_slot += mean_out_edges(attacked_eps[k], slot);
      rep.adversary_slots.push_back(slot);
    }
  }
  rep.clean_episodes = std::move(clean_eps);
  rep.attacked_episodes = std::move(attacked_eps);
  const double n = static_cast<double>(suite.size());
  auto finish_summary = [n](EvalSummary& s) {
    s.accuracy /= n;
    s.tokens /= n;
    s.reward /= n;
  };
  finish_summary(rep.clean);
  if (with_adversary) {
    finish_summary(adv.attacked);
    adv.delta = rep.clean.accuracy - adv.attacked.accuracy;
    adv.adversary_out_edges = adv_slot / n;
    adv.clean_slot_out_edges = clean_slot / n;
    rep.adversary = adv;
  }
  return rep;
}

inline double solo_share(const EvalSummary& s) {
  std::uint64_t total = 0;
  for (auto c : s.action_counts) total += c;
  return total ? static_cast<double>(s.action_counts[0]) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------------------
// Topology diagnostics
// ---------------------------------------------------------------------------

struct TopologyReport {
  std::size_t n_agents = 0;
  std::vector<std::array<std::uint64_t, kNumActions>> histogram;  // per round
  std::vector<double> mean_density;                               // per round
  std::vector<std::vector<double>> mean_adjacency;                // per round, N*N row-major
};

inline TopologyReport analyze_topology(std::span<const Episode> episodes, std::size_t n) {
  TopologyReport rep;
  rep.n_agents = n;
  if (episodes.empty()) return rep;
  const std::size_t T = episodes.front().rounds.size();
  rep.histogram.assign(T, {});
  rep.mean_density.assign(T, 0.0);
  rep.mean_adjacency.assign(T, std::vector<double>(n * n, 0.0));
  for (const auto& ep : episodes) {
    if (ep.rounds.size() != T) throw ConfigError("analyze: episodes differ in length");
    for (std::size_t t = 0; t < T; ++t) {
      const auto& r = ep.rounds[t];
      for (auto a : r.actions.actions) rep.histogram[t][to_index(a)] += 1;
      const CommGraph g = induced_graph(r);
      rep.mean_density[t] += g.density();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) rep.mean_adjacency[t][i * n + j] += g.edge(i, j) ? 1.0 : 0.0;
    }
  }
  const double m = static_cast<double>(episodes.size());
  for (std::size_t t = 0; t < T; ++t) {
    rep.mean_density[t] /= m;
    for (double& v : rep.mean_adjacency[t]) v /= m;
  }
  return rep;
}

inline void write_topology_csv(std::ostream& out, const TopologyReport& rep) {
  out << "# action histogram\nround";
  for (auto name : kActionNames) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < rep.histogram.size(); ++t) {
    out << t + 1;
    for (auto c : rep.histogram[t]) out << ',' << c;
    out << '\n';
  }
  out << "\n# mean density\nround,density\n";
  for (std::size_t t = 0; t < rep.mean_density.size(); ++t)
    out << t + 1 << ',' << num(rep.mean_density[t]) << '\n';
  out << "\n# mean adjacency\nround,from";
  for (std::size_t j = 0; j < rep.n_agents; ++j) out << ",to_" << j;
  out << '\n';
  for (std::size_t t = 0; t < rep.mean_adjacency.size(); ++t)
    for (std::size_t i = 0; i < rep.n_agents; ++i) {
      out << t + 1 << ',' << i;
      for (std::size_t j = 0; j < rep.n_agents; ++j)
        out << ',' << num(rep.mean_adjacency[t][i * rep.n_agents + j]);
      out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Oracle table
// ---------------------------------------------------------------------------

inline std::string sequence_string(std::span<const JointAction> seq) {
  std::string s;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (t) s += '|';
    for (std::size_t i = 0; i < seq[t].size(); ++i) {
      if (i) s += ' ';
      s += action_name(seq[t][i]);
    }
  }
  return s;
}

struct OracleTable {
  std::vector<OracleResult> rows;
  double mean_return = 0.0;
};

inline OracleTable oracle_table(const RunConfig& cfg, std::span<const TaskSpec> suite) {
  if (suite.empty()) throw ConfigError("oracle: suite is empty");
  for (const auto& t : suite)
    if (t.n_agents() != cfg.n_agents)
      throw ConfigError("oracle: task has " + std::to_string(t.n_agents()) + " agents, config expects " +
                        std::to_string(cfg.n_agents));
  // Refuse oversized searches before starting any work.
  const std::uint64_t total = open_loop_count(cfg.n_agents, cfg.rounds);
  if (total > kMaxOracleSequences) oracle_optimal(suite.front(), cfg.env, cfg.rounds, RewardWeights::from(cfg));
  OracleTable tab;
  tab.rows.resize(suite.size());
  parallel_for(suite.size(), [&](std::size_t k) {
    tab.rows[k] = oracle_optimal(suite[k], cfg.env, cfg.rounds, RewardWeights::from(cfg));
  });
  for (const auto& r : tab.rows) tab.mean_return += r.best_return;
  tab.mean_return /= static_cast<double>(suite.size());
  return tab;
}

inline void write_oracle_csv(std::ostream& out, const OracleTable& tab) {
  out << "task,best_return,accuracy,tokens,evaluations,sequence\n";
  for (std::size_t k = 0; k < tab.rows.size(); ++k) {
    const auto& r = tab.rows[k];
    out << k << ',' << num(r.best_return) << ',' << num(r.accuracy) << ',' << num(r.tokens) << ','
        << r.evaluations << ',' << sequence_string(r.sequence) << '\n';
  }
  out << "mean," << num(tab.mean_return) << ",,,,\n";
}

}  // namespace aqmix
