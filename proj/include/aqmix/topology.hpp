#pragma once

// Joint action -> adjacency mapping and the per-round execution order.

#include <algorithm>
#include <cstddef>
#include <set>
#include <utility>
#include <vector>

#include "aqmix/core.hpp"

namespace aqmix {

// Partner used by selective_query, execute_verify and debate_check.
inline std::size_t partner_of(std::size_t agent, std::size_t n) { return (agent + 1) % n; }

// Starts from the identity graph and takes the union of each agent's edges:
//   solo_process      none
//   broadcast_all     i -> j for all j != i
//   selective_query   i -> partner
//   aggregate_refine  j -> i for all j != i
//   execute_verify    i -> partner
//   debate_check      i -> partner, partner -> i
inline CommGraph action_to_adjacency(const JointAction& joint, std::size_t n) {
  if (n < 2) throw ConfigError("action_to_adjacency: need at least two agents");
  if (joint.size() != n)
    throw ConfigError("action_to_adjacency: joint action has " + std::to_string(joint.size()) +
                      " entries, expected " + std::to_string(n));
  CommGraph g = CommGraph::identity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = partner_of(i, n);
    switch (joint[i]) {
      case CommAction::solo_process:
        break;
      case CommAction::broadcast_all:
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) g.add_edge(i, j);
        break;
      case CommAction::selective_query:
      case CommAction::execute_verify:
        g.add_edge(i, p);
        break;
      case CommAction::aggregate_refine:
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) g.add_edge(j, i);
        break;
      case CommAction::debate_check:
        g.add_edge(i, p);
        g.add_edge(p, i);
        break;
    }
  }
  return g;
}

using Edge = std::pair<std::size_t, std::size_t>;

struct ExecutionOrder {
  std::vector<std::size_t> order;
  // Edges u -> v where u executes after v; v sees u's round-start output.
  std::set<Edge> deferred_edges;

  friend bool operator==(const ExecutionOrder&, const ExecutionOrder&) = default;
};

// Kahn's algorithm on non-self edges, ties broken by ascending id. When a
// cycle blocks progress the lowest-id remaining agent is emitted and its
// unsatisfied incoming edges become deferred.
inline ExecutionOrder execution_order(const CommGraph& graph) {
  const std::size_t n = graph.size();
  ExecutionOrder result;
  result.order.reserve(n);
  std::vector<bool> done(n, false);
  std::vector<std::size_t> indeg(n, 0);
  for (std::size_t v = 0; v < n; ++v) indeg[v] = graph.in_degree(v);
  std::set<std::size_t> ready;
  for (std::size_t v = 0; v < n; ++v)
    if (indeg[v] == 0) ready.insert(v);

  auto emit = [&](std::size_t v) {
    done[v] = true;
    result.order.push_back(v);
    for (std::size_t w = 0; w < n; ++w) {
      if (w == v || done[w] || !graph.edge(v, w)) continue;
      if (--indeg[w] == 0) ready.insert(w);
    }
  };

  while (result.order.size() < n) {
    if (!ready.empty()) {
      const std::size_t v = *ready.begin();
      ready.erase(ready.begin());
      emit(v);
      continue;
    }
    std::size_t v = 0;
    while (done[v]) ++v;
    for (std::size_t u = 0; u < n; ++u)
      if (u != v && !done[u] && graph.edge(u, v)) result.deferred_edges.insert({u, v});
    indeg[v] = 0;
    emit(v);
  }
  return result;
}

// Checks that `order` is a permutation and that its deferred edges are exactly
// the graph edges whose sender runs after the receiver.
inline bool order_consistent(const CommGraph& graph, const ExecutionOrder& eo) {
  const std::size_t n = graph.size();
  if (eo.order.size() != n) return false;
  std::vector<std::size_t> pos(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t v = eo.order[k];
    if (v >= n || pos[v] != n) return false;
    pos[v] = k;
  }
  std::set<Edge> late;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u != v && graph.edge(u, v) && pos[u] > pos[v]) late.insert({u, v});
  return late == eo.deferred_edges;
}

}  // namespace aqmix
