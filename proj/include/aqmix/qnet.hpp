#pragma once

// Topology-aware agent Q-network shared by all agents: an L-layer message
// passing encoder over the round's graph (mean aggregation over in-neighbours
// including self, GRU update), a temporal GRU across rounds and a two-layer
// ELU head producing one value per communication action.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aqmix/core.hpp"
#include "aqmix/numerics.hpp"

namespace aqmix {

using QValues = std::array<double, kNumActions>;

struct AgentNetDims {
  std::size_t obs_dim = 0;
  std::size_t gnn_layers = 2;
  std::size_t gnn_hidden = 128;
  std::size_t gru_hidden = 128;
  std::size_t head_hidden = 128;

  static AgentNetDims from(const RunConfig& c) {
    return {c.obs_dim(), c.gnn_layers, c.gnn_hidden, c.gru_hidden, c.head_hidden};
  }
};

struct GnnLayerCache {
  Batch msg;                 // per node
  Batch agg;                 // per node
  std::vector<GruCache> gru; // per node
};

struct GnnCache {
  Batch x;                                              // observations
  std::vector<Batch> h;                                 // h[l][node], l = 0..L
  std::vector<std::vector<std::size_t>> in_neighbours;  // including self
  std::vector<GnnLayerCache> layers;
};

struct HeadCache {
  std::vector<double> z, pre, act;
};

class AgentNet {
 public:
  AgentNet() = default;

  // Registers the network's segments in `store` (names prefixed "agent.").
  AgentNet(ParameterStore& store, const AgentNetDims& dims) : dims_(dims) {
    const std::size_t H = dims.gnn_hidden;
    in_W_ = store.add("agent.input.W", H, dims.obs_dim, false);
    in_b_ = store.add("agent.input.b", H, 1, true);
    for (std::size_t l = 0; l < dims.gnn_layers; ++l) {
      const std::string p = "agent.gnn" + std::to_string(l);
      Layer layer;
      layer.msg_W = store.add(p + ".msg.W", H, H, false);
      layer.msg_b = store.add(p + ".msg.b", H, 1, true);
      layer.gru = add_gru(store, p + ".gru", H, H);
      layers_.push_back(layer);
    }
    temporal_ = add_gru(store, "agent.temporal.gru", H, dims.gru_hidden);
    head_W1_ = store.add("agent.head.W1", dims.head_hidden, dims.gru_hidden, false);
    head_b1_ = store.add("agent.head.b1", dims.head_hidden, 1, true);
    head_W2_ = store.add("agent.head.W2", kNumActions, dims.head_hidden, false);
    head_b2_ = store.add("agent.head.b2", kNumActions, 1, true);
  }

  const AgentNetDims& dims() const { return dims_; }

  // Segment names of stacked gate matrices and their gate count, for
  // block-wise initialization.
  std::vector<std::pair<std::string, std::size_t>> gate_blocks(const ParameterStore& store) const {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& layer : layers_) {
      out.emplace_back(store.segment(layer.gru.Wx).name, 3);
      out.emplace_back(store.segment(layer.gru.Uh).name, 3);
    }
    out.emplace_back(store.segment(temporal_.Wx).name, 3);
    out.emplace_back(store.segment(temporal_.Uh).name, 3);
    return out;
  }

  // Returns layer-L embeddings, one per node. The graph may hold several
  // episodes' teams as disjoint blocks.
  Batch gnn_forward(const ParameterStore& p, std::span<const Observation> obs,
                    const CommGraph& graph, GnnCache* cache = nullptr) const {
    const std::size_t n = obs.size();
    const std::size_t H = dims_.gnn_hidden;
    if (graph.size() != n) throw ShapeError("gnn_forward: graph/observation count mismatch");
    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t u = 0; u < n; ++u)
        if (u == v || graph.edge(u, v)) nbrs[v].push_back(u);

    std::vector<const double*> xs;
    for (const auto& o : obs) {
      if (o.features.size() != dims_.obs_dim) throw ShapeError("gnn_forward: observation dimension mismatch");
      xs.push_back(o.features.data());
    }
    Batch h(n, std::vector<double>(H));
    kernel::matvec_batch(p.value(in_W_), H, dims_.obs_dim, xs, p.value(in_b_), mptrs(h));
    if (cache) {
      cache->x.clear();
      for (const auto& o : obs) cache->x.push_back(o.features);
      cache->h.assign(1, h);
      cache->in_neighbours = nbrs;
      cache->layers.assign(layers_.size(), {});
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Batch msg(n, std::vector<double>(H));
      kernel::matvec_batch(p.value(layer.msg_W), H, H, cptrs(h), p.value(layer.msg_b), mptrs(msg));
      Batch agg(n, std::vector<double>(H, 0.0));
      for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t u : nbrs[v]) kernel::add_to(agg[v].data(), msg[u].data(), H);
        const double inv = 1.0 / static_cast<double>(nbrs[v].size());
        for (double& a : agg[v]) a *= inv;
      }
      GnnLayerCache* lc = cache ? &cache->layers[l] : nullptr;
      Batch next = gru_forward_batch(p, layer.gru, agg, h, lc ? &lc->gru : nullptr);
      if (lc) {
        lc->msg = std::move(msg);
        lc->agg = std::move(agg);
        cache->h.push_back(next);
      }
      h = std::move(next);
    }
    return h;
  }

  // Accumulates parameter gradients given dL/dh^(L) per node. Returns dL/dx
  // per node.
  Batch gnn_backward(ParameterStore& p, const GnnCache& c, const Batch& dh_out) const {
    const std::size_t n = c.x.size();
    const std::size_t H = dims_.gnn_hidden;
    Batch dh = dh_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      const GnnLayerCache& lc = c.layers[l];
      Batch dagg(n, std::vector<double>(H, 0.0));
      Batch dprev(n, std::vector<double>(H, 0.0));
      gru_backward_batch(p, layer.gru, lc.gru, dh, dagg, dprev);
      Batch dmsg(n, std::vector<double>(H, 0.0));
      for (std::size_t v = 0; v < n; ++v) {
        const double inv = 1.0 / static_cast<double>(c.in_neighbours[v].size());
        for (std::size_t u : c.in_neighbours[v])
          for (std::size_t k = 0; k < H; ++k) dmsg[u][k] += dagg[v][k] * inv;
      }
      kernel::outer_acc_batch(p.grad(layer.msg_W), H, H, cptrs(dmsg), cptrs(c.h[l]));
      for (const auto& d : dmsg) kernel::add_to(p.grad(layer.msg_b), d.data(), H);
      kernel::matvec_t_acc_batch(p.value(layer.msg_W), H, H, cptrs(dmsg), mptrs(dprev));
      dh = std::move(dprev);
    }
    Batch dx(n, std::vector<double>(dims_.obs_dim, 0.0));
    kernel::outer_acc_batch(p.grad(in_W_), H, dims_.obs_dim, cptrs(dh), cptrs(c.x));
    for (const auto& d : dh) kernel::add_to(p.grad(in_b_), d.data(), H);
    kernel::matvec_t_acc_batch(p.value(in_W_), H, dims_.obs_dim, cptrs(dh), mptrs(dx));
    return dx;
  }

  // z = GRU(z_prev, h) per node: h is the cell input, z_prev the carried state.
  Batch temporal_forward(const ParameterStore& p, const Batch& z_prev, const Batch& h,
                         std::vector<GruCache>* caches = nullptr) const {
    return gru_forward_batch(p, temporal_, h, z_prev, caches);
  }

  void temporal_backward(ParameterStore& p, std::span<const GruCache> cs, const Batch& dz,
                         Batch& dh, Batch& dz_prev) const {
    gru_backward_batch(p, temporal_, cs, dz, dh, dz_prev);
  }

  std::vector<QValues> head_forward(const ParameterStore& p, const Batch& z,
                                    std::vector<HeadCache>* caches = nullptr) const {
    const std::size_t Hh = dims_.head_hidden;
    const std::size_t B = z.size();
    for (const auto& zi : z)
      if (zi.size() != dims_.gru_hidden) throw ShapeError("head_forward: dimension mismatch");
    Batch pre(B, std::vector<double>(Hh)), act(B, std::vector<double>(Hh));
    kernel::matvec_batch(p.value(head_W1_), Hh, dims_.gru_hidden, cptrs(z), p.value(head_b1_), mptrs(pre));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < Hh; ++k) act[b][k] = elu(pre[b][k]);
    std::vector<QValues> q(B);
    std::vector<double*> qp;
    for (auto& qi : q) qp.push_back(qi.data());
    kernel::matvec_batch(p.value(head_W2_), kNumActions, Hh, cptrs(act), p.value(head_b2_), qp);
    if (caches) {
      caches->resize(B);
      for (std::size_t b = 0; b < B; ++b) {
        (*caches)[b].z = z[b];
        (*caches)[b].pre = std::move(pre[b]);
        (*caches)[b].act = std::move(act[b]);
      }
    }
    return q;
  }

  // Accumulates parameter gradients; adds dL/dz into `dz`.
  void head_backward(ParameterStore& p, std::span<const HeadCache> cs, std::span<const QValues> dq,
                     Batch& dz) const {
    const std::size_t Hh = dims_.head_hidden;
    const std::size_t B = cs.size();
    std::vector<const double*> dqp, act, zs;
    for (std::size_t b = 0; b < B; ++b) {
      dqp.push_back(dq[b].data());
      act.push_back(cs[b].act.data());
      zs.push_back(cs[b].z.data());
    }
    kernel::outer_acc_batch(p.grad(head_W2_), kNumActions, Hh, dqp, act);
    for (const auto& d : dq) kernel::add_to(p.grad(head_b2_), d.data(), kNumActions);
    Batch dact(B, std::vector<double>(Hh, 0.0));
    kernel::matvec_t_acc_batch(p.value(head_W2_), kNumActions, Hh, dqp, mptrs(dact));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < Hh; ++k) dact[b][k] *= elu_grad(cs[b].pre[k]);
    kernel::outer_acc_batch(p.grad(head_W1_), Hh, dims_.gru_hidden, cptrs(dact), zs);
    for (const auto& d : dact) kernel::add_to(p.grad(head_b1_), d.data(), Hh);
    kernel::matvec_t_acc_batch(p.value(head_W1_), Hh, dims_.gru_hidden, cptrs(dact), mptrs(dz));
  }

  std::vector<double> initial_state() const { return std::vector<double>(dims_.gru_hidden, 0.0); }

 private:
  struct Layer {
    std::size_t msg_W = 0, msg_b = 0;
    GruIds gru;
  };

  AgentNetDims dims_;
  std::size_t in_W_ = 0, in_b_ = 0;
  std::vector<Layer> layers_;
  GruIds temporal_;
  std::size_t head_W1_ = 0, head_b1_ = 0, head_W2_ = 0, head_b2_ = 0;
};

// Lowest index wins ties.
inline std::size_t argmax(const QValues& q) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < q.size(); ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

// Epsilon-greedy, independently per agent.
inline JointAction select_actions(std::span<const QValues> q, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("select_actions: epsilon outside [0,1]");
  JointAction joint;
  joint.actions.reserve(q.size());
  for (const auto& qi : q) {
    if (epsilon > 0.0 && rng.uniform() < epsilon)
      joint.actions.push_back(action_from_index(rng.index(kNumActions)));
    else
      joint.actions.push_back(action_from_index(argmax(qi)));
  }
  return joint;
}

}  // namespace aqmix
