#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agrag/error.hpp"
#include "agrag/graph.hpp"
#include "agrag/topology.hpp"
#include "agrag/weighting.hpp"

namespace agrag {

enum class McmiMode { full, steiner_only };

struct SteinerTree {
  std::vector<NodeId> nodes;  // ascending
  std::vector<EdgeId> edges;  // ascending
  double total_cost = 0;
};

struct TraceEntry {
  NodeId node;
  EdgeId edge;
  double ratio;           // s_v / c of the admitted connector
  double ratio_before;    // r_MCMI the admission was tested against
  double ratio_after;     // r_MCMI after the admission
  bool bootstrap = false; // admitted unconditionally into an edgeless seed
};

struct McmiSubgraph {
  std::vector<NodeId> nodes;  // in addition order
  std::vector<EdgeId> edges;  // in addition order
  std::vector<NodeId> terminals;
  double ratio = 0;
  std::vector<TraceEntry> trace;
  std::size_t seed_node_count = 0;
  std::size_t seed_edge_count = 0;
  bool pseudo_stripped = false;  // the Steiner seed routed through the pseudo node
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::uint8_t> rank_;
};

inline double floored(double c) { return std::max(kCostFloor, c); }

}  // namespace detail

/// Mehlhorn's 2-approximate Steiner tree:
///  1. one multi-source Dijkstra from all terminals gives each node its
///     nearest terminal (Voronoi region) and a shortest-path predecessor;
///  2. every edge joining two regions yields a candidate auxiliary edge
///     between their terminals of length d(s,u) + c(u,v) + d(v,t);
///  3. an MST of the auxiliary graph is expanded back into graph paths;
///  4. an MST of that subgraph is taken and non-terminal leaves pruned.
/// An `excluded` node is treated as absent from the graph.
inline SteinerTree steiner_tree(const Topology& topo, std::span<const double> costs,
                                std::span<const NodeId> terminals,
                                std::optional<NodeId> excluded = std::nullopt) {
  if (terminals.empty()) throw Error(ErrorKind::domain, "steiner_tree: no terminals");
  if (costs.size() != topo.edge_count()) {
    throw Error(ErrorKind::domain, "steiner_tree: cost vector size mismatch");
  }
  std::vector<NodeId> terms(terminals.begin(), terminals.end());
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  const std::size_t n = topo.node_count();
  for (auto t : terms) {
    if (t >= n) throw Error(ErrorKind::domain, "steiner_tree: terminal out of range");
    if (excluded && t == *excluded) {
      throw Error(ErrorKind::domain, "steiner_tree: excluded node is a terminal");
    }
  }
  for (double c : costs) {
    if (!(c >= 0)) throw Error(ErrorKind::domain, "steiner_tree: negative edge cost");
  }
  SteinerTree tree;
  if (terms.size() == 1) {
    tree.nodes = terms;
    return tree;
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr auto none = std::numeric_limits<std::uint32_t>::max();
  std::vector<double> dist(n, inf);
  std::vector<std::uint32_t> origin(n, none);  // index into terms
  std::vector<EdgeId> pred(n, none);
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (std::uint32_t i = 0; i < terms.size(); ++i) {
    dist[terms[i]] = 0;
    origin[terms[i]] = i;
    heap.push({0.0, terms[i]});
  }
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (const auto& inc : topo.incident(u)) {
      if (excluded && inc.neighbor == *excluded) continue;
      const double nd = d + costs[inc.edge];
      if (nd < dist[inc.neighbor]) {
        dist[inc.neighbor] = nd;
        origin[inc.neighbor] = origin[u];
        pred[inc.neighbor] = inc.edge;
        heap.push({nd, inc.neighbor});
      }
    }
  }

  struct Bridge {
    double length;
    EdgeId edge;
  };
  std::map<std::pair<std::uint32_t, std::uint32_t>, Bridge> bridges;
  for (EdgeId e = 0; e < topo.edge_count(); ++e) {
    const auto [u, v] = topo.ends(e);
    if (u == v || origin[u] == none || origin[v] == none || origin[u] == origin[v]) continue;
    const double len = dist[u] + costs[e] + dist[v];
    const std::pair key{std::min(origin[u], origin[v]), std::max(origin[u], origin[v])};
    auto it = bridges.find(key);
    if (it == bridges.end() || len < it->second.length ||
        (len == it->second.length && e < it->second.edge)) {
      bridges[key] = {len, e};
    }
  }

  std::vector<std::pair<std::pair<std::uint32_t, std::uint32_t>, Bridge>> aux(
      bridges.begin(), bridges.end());
  std::stable_sort(aux.begin(), aux.end(), [](const auto& a, const auto& b) {
    return a.second.length < b.second.length;
  });
  detail::DisjointSets aux_sets(terms.size());
  std::vector<char> in_subgraph(topo.edge_count(), 0);
  std::size_t joined = 0;
  for (const auto& [pair, bridge] : aux) {
    if (!aux_sets.unite(pair.first, pair.second)) continue;
    ++joined;
    in_subgraph[bridge.edge] = 1;
    for (NodeId end : {topo.ends(bridge.edge).u, topo.ends(bridge.edge).v}) {
      for (NodeId x = end; pred[x] != none; x = topo.other(pred[x], x)) {
        in_subgraph[pred[x]] = 1;
      }
    }
  }
  if (joined + 1 < terms.size()) {
    for (auto t : terms) {
      if (aux_sets.find(origin[t]) != aux_sets.find(origin[terms.front()])) {
        throw Error(ErrorKind::unreachable_terminal,
                    "terminal node " + std::to_string(t) + " is unreachable from node " +
                        std::to_string(terms.front()));
      }
    }
  }

  std::vector<EdgeId> sub;
  for (EdgeId e = 0; e < topo.edge_count(); ++e) {
    if (in_subgraph[e]) sub.push_back(e);
  }
  std::stable_sort(sub.begin(), sub.end(),
                   [&](EdgeId a, EdgeId b) { return costs[a] < costs[b]; });
  detail::DisjointSets sets(n);
  std::vector<EdgeId> mst;
  for (auto e : sub) {
    if (sets.unite(topo.ends(e).u, topo.ends(e).v)) mst.push_back(e);
  }

  std::vector<char> is_term(n, 0);
  for (auto t : terms) is_term[t] = 1;
  std::vector<std::uint32_t> degree(n, 0);
  for (auto e : mst) {
    ++degree[topo.ends(e).u];
    ++degree[topo.ends(e).v];
  }
  std::vector<char> alive(mst.size(), 1);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < mst.size(); ++i) {
      if (!alive[i]) continue;
      const auto [u, v] = topo.ends(mst[i]);
      if ((degree[u] == 1 && !is_term[u]) || (degree[v] == 1 && !is_term[v])) {
        alive[i] = 0;
        --degree[u];
        --degree[v];
        changed = true;
      }
    }
  }

  std::vector<char> in_tree(n, 0);
  for (auto t : terms) in_tree[t] = 1;
  for (std::size_t i = 0; i < mst.size(); ++i) {
    if (!alive[i]) continue;
    tree.edges.push_back(mst[i]);
    tree.total_cost += costs[mst[i]];
    in_tree[topo.ends(mst[i]).u] = 1;
    in_tree[topo.ends(mst[i]).v] = 1;
  }
  std::sort(tree.edges.begin(), tree.edges.end());
  for (NodeId v = 0; v < n; ++v) {
    if (in_tree[v]) tree.nodes.push_back(v);
  }
  return tree;
}

/// Average score-cost ratio
///   r = sum_{(u,v)} (s_u + s_v) / (2 c_uv |E|)
/// with costs floored at kCostFloor; +inf for an edgeless subgraph.
inline double avg_ratio(const Topology& topo, std::span<const EdgeId> edges,
                        std::span<const double> node_scores,
                        std::span<const double> edge_costs) {
  if (edges.empty()) return std::numeric_limits<double>::infinity();
  double sum = 0;
  for (auto e : edges) {
    const auto [u, v] = topo.ends(e);
    sum += (node_scores[u] + node_scores[v]) / (2.0 * detail::floored(edge_costs[e]));
  }
  return sum / static_cast<double>(edges.size());
}

struct McmiInput {
  std::span<const NodeId> terminals;
  std::span<const EdgeId> required_edges;  // edges of the mapped triples
  std::optional<NodeId> excluded;          // the pseudo node
  McmiMode mode = McmiMode::full;
};

/// Greedy MCMI growth from a Steiner seed. Each step takes the outside
/// neighbour v maximising s_v / c, where c is the cheapest edge from the
/// subgraph to v (ties: lower node id; connector ties: lower cost, then
/// lower edge id), and admits it while that ratio strictly exceeds the
/// current average ratio. An edgeless seed admits its best neighbour once
/// unconditionally.
inline McmiSubgraph expand_mcmi(const Topology& topo, std::span<const double> node_scores,
                                std::span<const double> edge_costs,
                                const SteinerTree& seed, const McmiInput& in) {
  const std::size_t n = topo.node_count();
  if (node_scores.size() != n || edge_costs.size() != topo.edge_count()) {
    throw Error(ErrorKind::domain, "expand_mcmi: weighted view does not match graph");
  }
  McmiSubgraph out;
  std::vector<char> node_in(n, 0), edge_in(topo.edge_count(), 0);
  const auto excluded = [&](NodeId v) { return in.excluded && *in.excluded == v; };
  double ratio_sum = 0;

  auto add_node = [&](NodeId v) {
    if (!node_in[v] && !excluded(v)) {
      node_in[v] = 1;
      out.nodes.push_back(v);
    }
  };
  auto add_edge = [&](EdgeId e) {
    if (edge_in[e]) return;
    const auto [u, v] = topo.ends(e);
    if (excluded(u) || excluded(v)) {
      out.pseudo_stripped = true;
      return;
    }
    edge_in[e] = 1;
    out.edges.push_back(e);
    add_node(u);
    add_node(v);
    ratio_sum += (node_scores[u] + node_scores[v]) / (2.0 * detail::floored(edge_costs[e]));
  };
  auto current_ratio = [&] {
    return out.edges.empty() ? std::numeric_limits<double>::infinity()
                             : ratio_sum / static_cast<double>(out.edges.size());
  };

  for (auto t : in.terminals) add_node(t);
  for (auto v : seed.nodes) {
    if (excluded(v)) out.pseudo_stripped = true;
    add_node(v);
  }
  for (auto e : seed.edges) add_edge(e);
  for (auto e : in.required_edges) add_edge(e);
  out.terminals.assign(in.terminals.begin(), in.terminals.end());
  out.seed_node_count = out.nodes.size();
  out.seed_edge_count = out.edges.size();
  out.ratio = current_ratio();
  if (in.mode == McmiMode::steiner_only) return out;

  constexpr auto none = std::numeric_limits<EdgeId>::max();
  std::vector<EdgeId> best_edge(n, none);
  std::vector<NodeId> frontier;
  auto offer = [&](NodeId from) {
    for (const auto& inc : topo.incident(from)) {
      const NodeId w = inc.neighbor;
      if (node_in[w] || excluded(w)) continue;
      const EdgeId cur = best_edge[w];
      if (cur == none) {
        frontier.push_back(w);
        best_edge[w] = inc.edge;
      } else if (edge_costs[inc.edge] < edge_costs[cur] ||
                 (edge_costs[inc.edge] == edge_costs[cur] && inc.edge < cur)) {
        best_edge[w] = inc.edge;
      }
    }
  };
  for (auto v : out.nodes) offer(v);

  bool bootstrapped = false;
  while (!frontier.empty()) {
    std::size_t best = 0;
    double best_ratio = -1;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      const NodeId v = frontier[i];
      const double r = node_scores[v] / detail::floored(edge_costs[best_edge[v]]);
      if (r > best_ratio || (r == best_ratio && v < frontier[best])) {
        best_ratio = r;
        best = i;
      }
    }
    const double before = current_ratio();
    const bool bootstrap = out.edges.empty() && !bootstrapped;
    if (!bootstrap && !(best_ratio > before)) break;
    bootstrapped = bootstrapped || bootstrap;

    const NodeId v = frontier[best];
    const EdgeId e = best_edge[v];
    frontier[best] = frontier.back();
    frontier.pop_back();
    best_edge[v] = none;
    add_edge(e);
    out.trace.push_back({v, e, best_ratio, before, current_ratio(), bootstrap});
    offer(v);
  }
  out.ratio = current_ratio();
  return out;
}

/// Terminals, required edges and Steiner seed derived from mapped facts,
/// then expanded. The pseudo node is never part of the result.
inline McmiSubgraph generate_mcmi(const KnowledgeGraph& g, const WeightedView& view,
                                  std::span<const FactId> mapped, McmiMode mode,
                                  SteinerTree* seed_out = nullptr) {
  std::vector<NodeId> terminals;
  std::vector<EdgeId> required;
  for (auto f : mapped) {
    const auto& fact = g.facts().at(f);
    for (auto ent : {fact.subject, fact.object}) {
      const auto node = g.entity_node(ent);
      if (std::find(terminals.begin(), terminals.end(), node) == terminals.end()) {
        terminals.push_back(node);
      }
    }
    if (std::find(required.begin(), required.end(), fact.edge) == required.end()) {
      required.push_back(fact.edge);
    }
  }
  if (terminals.empty()) return {};
  // Prefer a seed that avoids the pseudo node; it is only scaffolding for
  // terminals that are otherwise disconnected.
  const auto pseudo = g.pseudo_node();
  auto seed = steiner_tree(g.topology(), view.edge_costs, terminals);
  if (std::binary_search(seed.nodes.begin(), seed.nodes.end(), pseudo)) {
    try {
      seed = steiner_tree(g.topology(), view.edge_costs, terminals, pseudo);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::unreachable_terminal) throw;
    }
  }
  auto result = expand_mcmi(g.topology(), view.node_scores, view.edge_costs, seed,
                            {terminals, required, pseudo, mode});
  if (seed_out) *seed_out = std::move(seed);
  return result;
}

/// Text form of the subgraph: an "Entities:" block (entity surfaces, and
/// passages as "[passage <id>] <first 12 tokens>") followed by a
/// "Relations:" block of "u —[label]→ v" lines, both in addition order.
inline std::string serialize_subgraph(const McmiSubgraph& m, const KnowledgeGraph& g) {
  auto label = [&](NodeId n) -> std::string {
    const auto ref = g.node(n);
    if (ref.kind == NodeKind::passage) return "passage " + g.chunks()[ref.index].id;
    return g.node_label(n);
  };
  std::string out = "Entities:\n";
  for (auto n : m.nodes) {
    const auto ref = g.node(n);
    if (ref.kind == NodeKind::passage) {
      const auto& c = g.chunks()[ref.index];
      const auto head = std::span<const Token>(c.tokens).first(
          std::min(c.tokens.size(), kChunkHeadTokens));
      out += "[passage " + c.id + "] " + join_tokens(head) + "\n";
    } else {
      out += label(n) + "\n";
    }
  }
  out += "Relations:\n";
  for (auto e : m.edges) {
    const auto& edge = g.edges()[e];
    out += label(edge.u) + " —[" + edge.label + "]→ " + label(edge.v) + "\n";
  }
  return out;
}

}  // namespace agrag
