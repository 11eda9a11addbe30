#pragma once

// Monotonic value mixing. Four state-conditioned hypernetworks (one ReLU
// hidden layer each) produce W1 (M x N), b1 (M), W2 (M) and b2; with
// nonnegative weights
//
//   Q_tot = |W2| . ELU(|W1| q + b1) + b2
//
// is nondecreasing in every agent value q_i.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/numerics.hpp"
#include "aqmix/qnet.hpp"

namespace aqmix {

#ifdef AQMIX_FAULT_SIGNED_MIXING
inline constexpr bool kMonotoneMixingDefault = false;
#else
inline constexpr bool kMonotoneMixingDefault = true;
#endif

struct MixerDims {
  std::size_t n_agents = 3;
  std::size_t state_dim = 0;
  std::size_t mix_hidden = 64;
  std::size_t hyper_hidden = 64;

  static MixerDims from(const RunConfig& c) {
    return {c.n_agents, c.state_dim(), c.mix_hidden, c.hyper_hidden};
  }
};

// Mixing weights for one global state, after the absolute-value transform.
struct MixWeights {
  std::size_t n = 0, m = 0;
  std::vector<double> w1;  // m x n
  std::vector<double> b1;  // m
  std::vector<double> w2;  // m
  double b2 = 0.0;

  double evaluate(std::span<const double> q) const {
    double total = b2;
    for (std::size_t k = 0; k < m; ++k) {
      double pre = b1[k];
      const double* row = w1.data() + k * n;
      for (std::size_t i = 0; i < n; ++i) pre += row[i] * q[i];
      total += w2[k] * elu(pre);
    }
    return total;
  }
};

struct HyperCache {
  std::vector<double> pre;     // hidden pre-activation
  std::vector<double> hidden;  // relu(pre)
  std::vector<double> out;     // raw output before any transform
};

struct MixCache {
  std::vector<double> s;
  std::vector<double> q;
  HyperCache w1, b1, w2, b2;
  std::vector<double> pre;  // per mixing unit
};

class Mixer {
 public:
  Mixer() = default;

  Mixer(ParameterStore& store, const MixerDims& dims, bool monotone = kMonotoneMixingDefault)
      : dims_(dims), monotone_(monotone) {
    const std::size_t M = dims.mix_hidden;
    w1_ = add_hyper(store, "mixer.hyper_w1", M * dims.n_agents);
    b1_ = add_hyper(store, "mixer.hyper_b1", M);
    w2_ = add_hyper(store, "mixer.hyper_w2", M);
    b2_ = add_hyper(store, "mixer.hyper_b2", 1);
  }

  const MixerDims& dims() const { return dims_; }
  bool monotone() const { return monotone_; }
  void set_monotone(bool on) { monotone_ = on; }

  MixWeights weights(const ParameterStore& p, std::span<const double> s,
                     MixCache* cache = nullptr) const {
    if (s.size() != dims_.state_dim) throw ShapeError("mixer: global state dimension mismatch");
    HyperCache hw1, hb1, hw2, hb2;
    hyper_forward(p, w1_, s, hw1);
    hyper_forward(p, b1_, s, hb1);
    hyper_forward(p, w2_, s, hw2);
    hyper_forward(p, b2_, s, hb2);
    MixWeights w;
    w.n = dims_.n_agents;
    w.m = dims_.mix_hidden;
    w.w1.resize(hw1.out.size());
    for (std::size_t k = 0; k < w.w1.size(); ++k) w.w1[k] = transform(hw1.out[k]);
    w.b1 = hb1.out;
    w.w2.resize(hw2.out.size());
    for (std::size_t k = 0; k < w.w2.size(); ++k) w.w2[k] = transform(hw2.out[k]);
    w.b2 = hb2.out[0];
    if (cache) {
      cache->s.assign(s.begin(), s.end());
      cache->w1 = std::move(hw1);
      cache->b1 = std::move(hb1);
      cache->w2 = std::move(hw2);
      cache->b2 = std::move(hb2);
    }
    return w;
  }

  double mix(const ParameterStore& p, std::span<const double> q, std::span<const double> s,
             MixCache* cache = nullptr) const {
    if (q.size() != dims_.n_agents) throw ShapeError("mixer: expected one value per agent");
    MixWeights w = weights(p, s, cache);
    if (cache) {
      cache->q.assign(q.begin(), q.end());
      cache->pre.resize(w.m);
      for (std::size_t k = 0; k < w.m; ++k) {
        double pre = w.b1[k];
        for (std::size_t i = 0; i < w.n; ++i) pre += w.w1[k * w.n + i] * q[i];
        cache->pre[k] = pre;
      }
    }
    return w.evaluate(q);
  }

  // Accumulates hypernetwork gradients for dL/dQ_tot = dtot; returns dL/dq.
  std::vector<double> mix_backward(ParameterStore& p, const MixCache& c, double dtot) const {
    const std::size_t N = dims_.n_agents;
    const std::size_t M = dims_.mix_hidden;
    std::vector<double> dq(N, 0.0);
    std::vector<double> dw1(M * N), db1(M), dw2(M), db2(1, dtot);
    for (std::size_t k = 0; k < M; ++k) {
      const double raw_w2 = c.w2.out[k];
      const double e = elu(c.pre[k]);
      dw2[k] = dtot * e * transform_grad(raw_w2);
      const double dpre = dtot * transform(raw_w2) * elu_grad(c.pre[k]);
      db1[k] = dpre;
      for (std::size_t i = 0; i < N; ++i) {
        const double raw = c.w1.out[k * N + i];
        dw1[k * N + i] = dpre * transform_grad(raw) * c.q[i];
        dq[i] += dpre * transform(raw);
      }
    }
    hyper_backward(p, w1_, c.s, c.w1, dw1);
    hyper_backward(p, b1_, c.s, c.b1, db1);
    hyper_backward(p, w2_, c.s, c.w2, dw2);
    hyper_backward(p, b2_, c.s, c.b2, db2);
    return dq;
  }

 private:
  struct Hyper {
    std::size_t W1 = 0, b1 = 0, W2 = 0, b2 = 0;
    std::size_t out = 0;
  };

  Hyper add_hyper(ParameterStore& store, const std::string& prefix, std::size_t out) {
    Hyper h;
    h.out = out;
    h.W1 = store.add(prefix + ".W1", dims_.hyper_hidden, dims_.state_dim, false);
    h.b1 = store.add(prefix + ".b1", dims_.hyper_hidden, 1, true);
    h.W2 = store.add(prefix + ".W2", out, dims_.hyper_hidden, false);
    h.b2 = store.add(prefix + ".b2", out, 1, true);
    return h;
  }

  void hyper_forward(const ParameterStore& p, const Hyper& h, std::span<const double> s,
                     HyperCache& c) const {
    const std::size_t P = dims_.hyper_hidden;
    c.pre.resize(P);
    c.hidden.resize(P);
    c.out.resize(h.out);
    kernel::matvec(p.value(h.W1), P, dims_.state_dim, s.data(), p.value(h.b1), c.pre.data());
    for (std::size_t k = 0; k < P; ++k) c.hidden[k] = relu(c.pre[k]);
    kernel::matvec(p.value(h.W2), h.out, P, c.hidden.data(), p.value(h.b2), c.out.data());
  }

  void hyper_backward(ParameterStore& p, const Hyper& h, std::span<const double> s,
                      const HyperCache& c, std::span<const double> dout) const {
    const std::size_t P = dims_.hyper_hidden;
    kernel::outer_acc(p.grad(h.W2), h.out, P, dout.data(), c.hidden.data());
    kernel::add_to(p.grad(h.b2), dout.data(), h.out);
    std::vector<double> dhid(P, 0.0);
    kernel::matvec_t_acc(p.value(h.W2), h.out, P, dout.data(), dhid.data());
    for (std::size_t k = 0; k < P; ++k) dhid[k] = c.pre[k] > 0.0 ? dhid[k] : 0.0;
    kernel::outer_acc(p.grad(h.W1), P, dims_.state_dim, dhid.data(), s.data());
    kernel::add_to(p.grad(h.b1), dhid.data(), P);
  }

  double transform(double w) const { return monotone_ ? std::abs(w) : w; }
  double transform_grad(double w) const {
    if (!monotone_) return 1.0;
    return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0);
  }

  MixerDims dims_;
  bool monotone_ = kMonotoneMixingDefault;
  Hyper w1_, b1_, w2_, b2_;
};

// Per-agent greedy choice (lowest index on ties).
inline JointAction decentralized_argmax(std::span<const QValues> tables) {
  JointAction joint;
  for (const auto& t : tables) joint.actions.push_back(action_from_index(argmax(t)));
  return joint;
}

inline constexpr std::size_t kMaxBruteForceAgents = 6;

// Exhaustive maximization of Q_tot over all 6^N joint actions, enumerated in
// lexicographic order (agent 0 most significant); the first maximum wins.
inline JointAction joint_bruteforce_argmax(std::span<const QValues> tables, const MixWeights& w,
                                           std::uint64_t* evaluations = nullptr) {
  const std::size_t n = tables.size();
  if (n > kMaxBruteForceAgents)
    throw ConfigError("joint_bruteforce_argmax: 6^" + std::to_string(n) + " joint actions is too many");
  if (n != w.n) throw ShapeError("joint_bruteforce_argmax: table count != mixer agents");
  std::uint64_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= kNumActions;
  std::vector<std::size_t> idx(n, 0), best(n, 0);
  std::vector<double> q(n);
  double best_value = 0.0;
  std::uint64_t count = 0;
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t rest = code;
    for (std::size_t i = n; i-- > 0;) {
      idx[i] = static_cast<std::size_t>(rest % kNumActions);
      rest /= kNumActions;
    }
    for (std::size_t i = 0; i < n; ++i) q[i] = tables[i][idx[i]];
    const double v = w.evaluate(q);
    if (count == 0 || v > best_value) {
      best_value = v;
      best = idx;
    }
    ++count;
  }
  if (evaluations) *evaluations = count;
  JointAction joint;
  for (auto a : best) joint.actions.push_back(action_from_index(a));
  return joint;
}

inline JointAction joint_bruteforce_argmax(std::span<const QValues> tables, std::span<const double> s,
                                           const ParameterStore& p, const Mixer& mixer,
                                           std::uint64_t* evaluations = nullptr) {
  if (tables.size() > kMaxBruteForceAgents)
    throw ConfigError("joint_bruteforce_argmax: 6^" + std::to_string(tables.size()) +
                      " joint actions is too many");
  return joint_bruteforce_argmax(tables, mixer.weights(p, s), evaluations);
}

}  // namespace aqmix
