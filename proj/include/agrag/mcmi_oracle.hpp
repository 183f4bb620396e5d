#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "agrag/error.hpp"
#include "agrag/mcmi.hpp"
#include "agrag/topology.hpp"

namespace agrag {

inline constexpr std::size_t kOracleNodeLimit = 12;

/// Exact minimum Steiner tree by exhaustion, for testing only. With
/// non-negative costs some optimum is an MST of the subgraph induced by its
/// node set, so every node superset of the terminals is tried and its MST
/// taken (Prim over the cheapest parallel edge per pair).
inline SteinerTree brute_force_steiner(const Topology& topo, std::span<const double> costs,
                                       std::span<const NodeId> terminals) {
  const std::size_t n = topo.node_count();
  if (n > kOracleNodeLimit) {
    throw Error(ErrorKind::size_limit, "brute_force_steiner refuses graphs over " +
                                           std::to_string(kOracleNodeLimit) + " nodes");
  }
  if (terminals.empty()) throw Error(ErrorKind::domain, "brute_force_steiner: no terminals");

  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr auto none = std::numeric_limits<EdgeId>::max();
  std::vector<double> w(n * n, inf);
  std::vector<EdgeId> via(n * n, none);
  for (EdgeId e = 0; e < topo.edge_count(); ++e) {
    const auto [u, v] = topo.ends(e);
    if (u == v) continue;
    for (auto [a, b] : {std::pair{u, v}, std::pair{v, u}}) {
      if (costs[e] < w[a * n + b]) {
        w[a * n + b] = costs[e];
        via[a * n + b] = e;
      }
    }
  }

  std::uint32_t required = 0;
  for (auto t : terminals) required |= 1u << t;

  SteinerTree best;
  best.total_cost = inf;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if ((mask & required) != required) continue;
    std::vector<NodeId> members;
    for (NodeId v = 0; v < n; ++v) {
      if (mask >> v & 1u) members.push_back(v);
    }
    // Prim
    std::vector<double> key(n, inf);
    std::vector<EdgeId> link(n, none);
    std::vector<char> done(n, 0);
    key[members.front()] = 0;
    double total = 0;
    std::vector<EdgeId> edges;
    bool connected = true;
    for (std::size_t step = 0; step < members.size(); ++step) {
      NodeId pick = 0;
      double pick_key = inf;
      for (auto v : members) {
        if (!done[v] && key[v] < pick_key) {
          pick_key = key[v];
          pick = v;
        }
      }
      if (pick_key == inf) {
        connected = false;
        break;
      }
      done[pick] = 1;
      total += pick_key;
      if (link[pick] != none) edges.push_back(link[pick]);
      for (auto v : members) {
        if (!done[v] && w[pick * n + v] < key[v]) {
          key[v] = w[pick * n + v];
          link[v] = via[pick * n + v];
        }
      }
    }
    if (connected && total < best.total_cost) {
      best.total_cost = total;
      best.nodes = members;
      std::sort(edges.begin(), edges.end());
      best.edges = std::move(edges);
    }
  }
  if (best.total_cost == inf) {
    throw Error(ErrorKind::unreachable_terminal, "terminals are not connected");
  }
  return best;
}

}  // namespace agrag
