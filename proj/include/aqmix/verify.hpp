#pragma once

// Executable property checks: mixer monotonicity, IGM equivalence, full-stack
// gradient check against central differences, and run determinism.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "aqmix/analysis.hpp"
#include "aqmix/checkpoint.hpp"
#include "aqmix/mixer.hpp"
#include "aqmix/qmix.hpp"
#include "aqmix/trainer.hpp"

namespace aqmix {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // worst-case deviation in the check's own unit
  std::string detail;
};

namespace detail {

// Xavier weights plus N(0, bias_scale) biases.
inline void randomize_store(ParameterStore& p, Rng& rng, double bias_scale = 0.5) {
  xavier_init_store(p, rng);
  for (std::size_t id = 0; id < p.segments().size(); ++id) {
    const Segment& seg = p.segment(id);
    if (!seg.is_bias) continue;
    double* v = p.value(id);
    for (std::size_t k = 0; k < seg.size(); ++k) v[k] = bias_scale * rng.normal();
  }
}

inline std::vector<double> uniform_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform();
  return v;
}

}  // namespace detail

struct MixerDrawOptions {
  std::size_t draws = 1000;
  std::size_t n_agents = 3;
  std::size_t state_dim = 60;
  std::size_t mix_hidden = 64;
  std::size_t hyper_hidden = 64;
  std::uint64_t seed = 7;
  bool monotone = kMonotoneMixingDefault;
};

// Per-agent argmax versus exhaustive joint argmax of Q_tot.
inline CheckResult check_igm(const MixerDrawOptions& o) {
  ParameterStore p;
  Mixer mixer(p, {o.n_agents, o.state_dim, o.mix_hidden, o.hyper_hidden}, o.monotone);
  Rng rng(o.seed);
  CheckResult r{"igm", true, 0.0, {}};
  std::size_t mismatches = 0;
  for (std::size_t d = 0; d < o.draws; ++d) {
    detail::randomize_store(p, rng);
    const auto s = detail::uniform_vector(o.state_dim, rng);
    std::vector<QValues> q(o.n_agents);
    for (auto& qi : q)
      for (double& v : qi) v = rng.normal();
    const MixWeights w = mixer.weights(p, s);
    const JointAction dec = decentralized_argmax(q);
    const JointAction joint = joint_bruteforce_argmax(q, w);
    if (dec.actions != joint.actions) {
      if (mismatches == 0) {
        std::vector<double> qd(o.n_agents), qj(o.n_agents);
        for (std::size_t i = 0; i < o.n_agents; ++i) {
          qd[i] = q[i][to_index(dec[i])];
          qj[i] = q[i][to_index(joint[i])];
        }
        std::ostringstream msg;
        msg.precision(10);
        msg << "draw " << d << ": per-agent argmax Q_tot=" << w.evaluate(qd)
            << " < joint argmax Q_tot=" << w.evaluate(qj);
        r.detail = msg.str();
      }
      ++mismatches;
    }
  }
  r.worst = static_cast<double>(mismatches);
  r.passed = mismatches == 0;
  if (r.passed) r.detail = std::to_string(o.draws) + " draws, all matched";
  else r.detail = std::to_string(mismatches) + " of " + std::to_string(o.draws) + " draws mismatched; first at " + r.detail;
  return r;
}

// Largest decrease of Q_tot when one agent's value rises by `step`.
inline CheckResult check_monotonicity(const MixerDrawOptions& o, double step = 0.1,
                                      double tolerance = 1e-12) {
  ParameterStore p;
  Mixer mixer(p, {o.n_agents, o.state_dim, o.mix_hidden, o.hyper_hidden}, o.monotone);
  Rng rng(o.seed + 1);
  CheckResult r{"monotonicity", true, 0.0, {}};
  for (std::size_t d = 0; d < o.draws; ++d) {
    detail::randomize_store(p, rng);
    const auto s = detail::uniform_vector(o.state_dim, rng);
    std::vector<double> q(o.n_agents);
    for (double& v : q) v = rng.normal();
    const MixWeights w = mixer.weights(p, s);
    const double base = w.evaluate(q);
    for (std::size_t i = 0; i < o.n_agents; ++i) {
      auto up = q;
      up[i] += step;
      r.worst = std::max(r.worst, base - w.evaluate(up));
    }
  }
  r.passed = r.worst <= tolerance;
  std::ostringstream msg;
  msg << o.draws << " draws x " << o.n_agents << " coordinates, largest decrease " << r.worst;
  r.detail = msg.str();
  return r;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  std::size_t n_agents = 2;
  std::size_t rounds = 2;
  std::size_t obs_dim = 12;
  std::size_t gnn_layers = 2;
  std::size_t hidden = 128;  // GNN, temporal GRU and head width
  std::size_t mix_hidden = 64;
  std::size_t hyper_hidden = 64;
  std::size_t episodes = 2;
  double gamma = 0.99;
  double step = 1e-5;
  double floor = 1e-6;           // relative error denominator floor
  std::size_t per_segment = 0;   // 0 = every parameter
  std::uint64_t seed = 11;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_parameter;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Random instance of the whole stack; analytic TD-loss gradients against
// central differences.
inline GradCheckResult gradient_check(const GradCheckOptions& o) {
  ModelDims dims;
  dims.n_agents = o.n_agents;
  dims.agent = {o.obs_dim, o.gnn_layers, o.hidden, o.hidden, o.hidden};
  dims.mixer = {o.n_agents, o.n_agents * o.obs_dim + 3, o.mix_hidden, o.hyper_hidden};
  ParameterStore online;
  QMixModel model(online, dims);
  ParameterStore target = online;
  Rng rng(o.seed);
  detail::randomize_store(online, rng);
  detail::randomize_store(target, rng);

  std::vector<Episode> batch(o.episodes);
  for (auto& ep : batch) {
    CommGraph g = CommGraph::identity(o.n_agents);
    for (std::size_t t = 0; t < o.rounds; ++t) {
      RoundRecord r;
      for (std::size_t i = 0; i < o.n_agents; ++i)
        r.observations.push_back({detail::uniform_vector(o.obs_dim, rng)});
      for (std::size_t i = 0; i < o.n_agents; ++i) r.actions.actions.push_back(action_from_index(rng.index(kNumActions)));
      r.graph = g;
      r.state.features = detail::uniform_vector(dims.mixer.state_dim, rng);
      g = action_to_adjacency(r.actions, o.n_agents);
      ep.rounds.push_back(std::move(r));
    }
    ep.reward = rng.uniform(-1.0, 1.5);
  }

  online.zero_grad();
  td_loss(batch, model, online, target, o.gamma);
  const std::vector<double> analytic(online.grads().begin(), online.grads().end());

  GradCheckResult res;
  auto check_one = [&](std::size_t id, std::size_t k) {
    double* v = online.value(id) + k;
    const double saved = *v;
    *v = saved + o.step;
    const double up = td_loss(batch, model, online, target, o.gamma, false).loss;
    *v = saved - o.step;
    const double down = td_loss(batch, model, online, target, o.gamma, false).loss;
    *v = saved;
    const double numeric = (up - down) / (2.0 * o.step);
    const double a = analytic[online.segment(id).offset + k];
    const double err = relative_error(a, numeric, o.floor);
    ++res.checked;
    if (res.checked == 1 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_parameter = online.segment(id).name + "[" + std::to_string(k) + "]";
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
  };
  Rng pick(o.seed + 1);
  for (std::size_t id = 0; id < online.segments().size(); ++id) {
    const std::size_t size = online.segment(id).size();
    if (o.per_segment == 0 || o.per_segment >= size) {
      for (std::size_t k = 0; k < size; ++k) check_one(id, k);
    } else {
      for (std::size_t s = 0; s < o.per_segment; ++s) check_one(id, pick.index(size));
    }
  }
  return res;
}

inline CheckResult check_gradients(double tolerance = 1e-4) {
  CheckResult r{"gradient", true, 0.0, {}};
  GradCheckOptions small;
  small.hidden = 8;
  small.mix_hidden = 8;
  small.hyper_hidden = 8;
  GradCheckOptions full;
  full.per_segment = 24;
  const GradCheckResult a = gradient_check(small);
  const GradCheckResult b = gradient_check(full);
  r.worst = std::max(a.max_rel_error, b.max_rel_error);
  r.passed = r.worst <= tolerance;
  std::ostringstream msg;
  msg << "max relative error " << r.worst << " (all " << a.checked << " parameters at width 8: "
      << a.max_rel_error << " worst " << a.worst_parameter << "; " << b.checked
      << " sampled at width 128: " << b.max_rel_error << " worst " << b.worst_parameter << ")";
  r.detail = msg.str();
  return r;
}

// ---------------------------------------------------------------------------
// Determinism
// ---------------------------------------------------------------------------

inline std::vector<TaskSpec> builtin_tasks() {
  std::istringstream in(
      "3 3 -1 0.5 0 1 2\n"
      "4 4 -1 0.5 0,1 2 3\n"
      "3 3 -1 0.5 0,1,2 - -\n"
      "4 2 -1 0.5 0,1 2 3\n");
  return parse_suite(in);
}

inline RunConfig small_run_config(std::uint64_t seed = 3) {
  RunConfig cfg;
  cfg.gnn_hidden = cfg.gru_hidden = cfg.head_hidden = 16;
  cfg.mix_hidden = cfg.hyper_hidden = 8;
  cfg.episodes = 40;
  cfg.target_interval = 10;
  cfg.seed = seed;
  return cfg;
}

struct RunTrace {
  std::vector<std::string> metrics;
  std::string checkpoint;
};

inline RunTrace trace_run(const RunConfig& cfg, const std::vector<TaskSpec>& suite) {
  Trainer tr(cfg, suite);
  RunTrace out;
  for (std::size_t e = 0; e < cfg.episodes; ++e) out.metrics.push_back(metrics_row(tr.train_episode()));
  out.checkpoint = serialize_checkpoint(tr.state());
  return out;
}

inline CheckResult check_determinism() {
  CheckResult r{"determinism", true, 0.0, {}};
  const RunConfig cfg = small_run_config();
  const auto suite = builtin_tasks();
  const RunTrace a = trace_run(cfg, suite);
  const RunTrace b = trace_run(cfg, suite);
  std::size_t diff_rows = 0, diff_bytes = 0;
  for (std::size_t k = 0; k < a.metrics.size(); ++k) diff_rows += a.metrics[k] != b.metrics[k];
  const std::size_t len = std::min(a.checkpoint.size(), b.checkpoint.size());
  for (std::size_t k = 0; k < len; ++k) diff_bytes += a.checkpoint[k] != b.checkpoint[k];
  diff_bytes += std::max(a.checkpoint.size(), b.checkpoint.size()) - len;
  const std::string again = serialize_checkpoint(deserialize_checkpoint(a.checkpoint));
  const bool round_trip = again == a.checkpoint;
  r.worst = static_cast<double>(diff_rows + diff_bytes + (round_trip ? 0 : 1));
  r.passed = r.worst == 0.0;
  r.detail = std::to_string(diff_rows) + " differing metrics rows, " + std::to_string(diff_bytes) +
             " differing checkpoint bytes, save/load/save " + (round_trip ? "identical" : "differs");
  return r;
}

inline std::vector<CheckResult> run_verify_suite() {
  MixerDrawOptions o;
  return {check_monotonicity(o), check_igm(o), check_gradients(), check_determinism()};
}

}  // namespace aqmix
