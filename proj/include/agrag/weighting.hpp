#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <spdlog/spdlog.h>

#include "agrag/error.hpp"
#include "agrag/graph.hpp"
#include "agrag/topology.hpp"

namespace agrag {

inline constexpr double kDefaultDamping = 0.5;
inline constexpr double kDefaultPprTolerance = 1e-7;
inline constexpr double kDefaultPassageFactor = 0.05;
inline constexpr std::size_t kPprIterationCap = 10000;
inline constexpr double kCostFloor = 1e-6;

/// Per-query scores and costs layered over an immutable graph.
struct WeightedView {
  std::vector<double> raw_scores;   // PPR fixed point, sums to 1
  std::vector<double> node_scores;  // after passage damping
  std::vector<double> edge_costs;
  Vector query_embedding;
  double damping = kDefaultDamping;
  double tolerance = kDefaultPprTolerance;
  std::size_t ppr_iterations = 0;
};

/// Uniform restart mass over the distinct seed nodes; uniform over all nodes
/// when there are no seeds.
inline std::vector<double> personalization_from_nodes(std::size_t node_count,
                                                      std::span<const NodeId> seeds) {
  std::vector<double> p(node_count, 0.0);
  if (node_count == 0) return p;
  std::vector<NodeId> distinct(seeds.begin(), seeds.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.empty()) {
    spdlog::info("personalization: no seed nodes, falling back to uniform restart");
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(node_count));
    return p;
  }
  for (auto n : distinct) {
    if (n >= node_count) {
      throw Error(ErrorKind::index_corruption, "personalization seed out of range");
    }
    p[n] = 1.0 / static_cast<double>(distinct.size());
  }
  return p;
}

/// Restart vector spread uniformly over the subject/object entities of the
/// mapped facts.
inline std::vector<double> personalization_vector(const KnowledgeGraph& g,
                                                  std::span<const FactId> facts) {
  std::vector<NodeId> seeds;
  for (auto f : facts) {
    if (f >= g.facts().size()) {
      throw Error(ErrorKind::index_corruption, "mapped fact id out of range");
    }
    seeds.push_back(g.entity_node(g.facts()[f].subject));
    seeds.push_back(g.entity_node(g.facts()[f].object));
  }
  return personalization_from_nodes(g.node_count(), seeds);
}

struct PprResult {
  std::vector<double> scores;
  std::size_t iterations = 0;
  double last_delta = 0;
};

/// Personalized PageRank by power iteration:
///   x <- (1 - d) p + d * sum_u x[u] P[u, .]
/// where P[u, .] is uniform over u's distinct neighbours, or over all nodes
/// when u has none. Stops once the max-norm change drops below `tolerance`.
inline PprResult ppr(const Topology& topo, std::span<const double> p, double damping,
                     double tolerance, std::size_t max_iterations = kPprIterationCap) {
  const std::size_t n = topo.node_count();
  if (p.size() != n) throw Error(ErrorKind::domain, "personalization size mismatch");
  if (!(damping >= 0.0 && damping < 1.0)) {
    throw Error(ErrorKind::config, "damping must lie in [0, 1)");
  }
  if (!(tolerance > 0.0)) throw Error(ErrorKind::config, "ppr tolerance must be > 0");
  PprResult out;
  if (n == 0) return out;
  const double mass = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(mass - 1.0) > 1e-9) {
    throw Error(ErrorKind::domain, "personalization vector must sum to 1");
  }

  std::vector<double> x(p.begin(), p.end());
  std::vector<double> next(n);
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    double dangling = 0;
    for (std::size_t v = 0; v < n; ++v) next[v] = (1.0 - damping) * p[v];
    for (NodeId u = 0; u < n; ++u) {
      const auto nb = topo.neighbors(u);
      if (nb.empty()) {
        dangling += x[u];
        continue;
      }
      const double share = damping * x[u] / static_cast<double>(nb.size());
      for (auto v : nb) next[v] += share;
    }
    if (dangling != 0) {
      const double share = damping * dangling / static_cast<double>(n);
      for (auto& v : next) v += share;
    }
    double delta = 0;
    for (std::size_t v = 0; v < n; ++v) delta = std::max(delta, std::abs(next[v] - x[v]));
    x.swap(next);
    out.iterations = it;
    out.last_delta = delta;
    if (delta < tolerance) {
      out.scores = std::move(x);
      return out;
    }
  }
  throw Error(ErrorKind::non_convergence,
              "PPR did not converge in " + std::to_string(max_iterations) +
                  " iterations (last max-norm delta " + std::to_string(out.last_delta) +
                  ")");
}

inline std::vector<double> apply_passage_damping(std::vector<double> scores,
                                                 std::span<const NodeKind> kinds,
                                                 double factor = kDefaultPassageFactor) {
  for (std::size_t i = 0; i < scores.size() && i < kinds.size(); ++i) {
    if (kinds[i] == NodeKind::passage) scores[i] *= factor;
  }
  return scores;
}

inline std::vector<double> apply_passage_damping(const KnowledgeGraph& g,
                                                 std::vector<double> scores,
                                                 double factor = kDefaultPassageFactor) {
  const auto first = g.passage_node(0);
  const auto last = g.pseudo_node();
  for (NodeId n = first; n < last && n < scores.size(); ++n) scores[n] *= factor;
  return scores;
}

/// (1 - MS) / 2, before the positive floor.
inline double edge_cost_from_similarity(double similarity) {
  return (1.0 - similarity) / 2.0;
}

/// Per-edge query costs: relation edges price by their most similar backing
/// fact, contains/synonym edges by their surrogate embedding, pseudo edges
/// cost a flat 10. All non-pseudo costs are floored at kCostFloor.
inline std::vector<double> edge_costs(const KnowledgeGraph& g,
                                      std::span<const float> query_embedding) {
  const auto& edges = g.edges();
  if (g.edge_embeddings.size() != edges.size() ||
      g.fact_embeddings.size() != g.facts().size()) {
    throw Error(ErrorKind::index_corruption, "edge or fact embeddings missing");
  }
  std::vector<double> costs(edges.size());
  for (EdgeId id = 0; id < edges.size(); ++id) {
    const auto& e = edges[id];
    double ms = 0;
    switch (e.kind) {
      case EdgeKind::pseudo_relation:
        costs[id] = KnowledgeGraph::kPseudoEdgeCost;
        continue;
      case EdgeKind::relation: {
        if (e.fact_ids.empty()) {
          throw Error(ErrorKind::index_corruption, "relation edge without facts");
        }
        ms = -1.0;
        for (auto f : e.fact_ids) {
          ms = std::max(ms, cosine(query_embedding, g.fact_embeddings.row(f)));
        }
        break;
      }
      case EdgeKind::contains:
      case EdgeKind::synonym:
        ms = cosine(query_embedding, g.edge_embeddings.row(id));
        break;
    }
    costs[id] = std::max(kCostFloor, edge_cost_from_similarity(ms));
  }
  return costs;
}

/// Full graph weighting for one query.
inline WeightedView weight_graph(const KnowledgeGraph& g, std::span<const FactId> facts,
                                 Vector query_embedding, double damping = kDefaultDamping,
                                 double tolerance = kDefaultPprTolerance,
                                 double passage_factor = kDefaultPassageFactor) {
  WeightedView view;
  const auto p = personalization_vector(g, facts);
  auto result = ppr(g.topology(), p, damping, tolerance);
  view.raw_scores = result.scores;
  view.node_scores = apply_passage_damping(g, std::move(result.scores), passage_factor);
  view.ppr_iterations = result.iterations;
  view.edge_costs = edge_costs(g, query_embedding);
  view.query_embedding = std::move(query_embedding);
  view.damping = damping;
  view.tolerance = tolerance;
  return view;
}

}  // namespace agrag
