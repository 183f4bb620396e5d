#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "agrag/error.hpp"

namespace agrag {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

struct EdgeEnds {
  NodeId u = 0;
  NodeId v = 0;

  friend bool operator==(const EdgeEnds&, const EdgeEnds&) = default;
};

struct Incidence {
  NodeId neighbor;
  EdgeId edge;
};

// Undirected multigraph in CSR form. Self-loops are kept as edges but never
// appear in incidence or neighbour lists.
class Topology {
 public:
  Topology() = default;

  Topology(std::size_t node_count, std::vector<EdgeEnds> edges)
      : node_count_(node_count), edges_(std::move(edges)) {
    std::vector<std::uint32_t> degree(node_count_ + 1, 0);
    for (const auto& e : edges_) {
      if (e.u >= node_count_ || e.v >= node_count_) {
        throw Error(ErrorKind::index_corruption, "edge endpoint out of range");
      }
      if (e.u == e.v) continue;
      ++degree[e.u];
      ++degree[e.v];
    }
    inc_offsets_.assign(node_count_ + 1, 0);
    for (std::size_t i = 0; i < node_count_; ++i) {
      inc_offsets_[i + 1] = inc_offsets_[i] + degree[i];
    }
    incidence_.resize(inc_offsets_.back());
    std::vector<std::uint32_t> fill(inc_offsets_.begin(), inc_offsets_.end() - 1);
    for (EdgeId id = 0; id < edges_.size(); ++id) {
      const auto& e = edges_[id];
      if (e.u == e.v) continue;
      incidence_[fill[e.u]++] = {e.v, id};
      incidence_[fill[e.v]++] = {e.u, id};
    }

    nb_offsets_.assign(node_count_ + 1, 0);
    for (NodeId n = 0; n < node_count_; ++n) {
      std::vector<NodeId> nb;
      for (const auto& inc : incident(n)) nb.push_back(inc.neighbor);
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
      neighbors_.insert(neighbors_.end(), nb.begin(), nb.end());
      nb_offsets_[n + 1] = static_cast<std::uint32_t>(neighbors_.size());
    }
  }

  std::size_t node_count() const { return node_count_; }
  std::size_t edge_count() const { return edges_.size(); }
  const EdgeEnds& ends(EdgeId e) const { return edges_[e]; }
  const std::vector<EdgeEnds>& edges() const { return edges_; }

  std::span<const Incidence> incident(NodeId n) const {
    return {incidence_.data() + inc_offsets_[n], incidence_.data() + inc_offsets_[n + 1]};
  }

  /// Distinct neighbours in ascending order.
  std::span<const NodeId> neighbors(NodeId n) const {
    return {neighbors_.data() + nb_offsets_[n], neighbors_.data() + nb_offsets_[n + 1]};
  }

  NodeId other(EdgeId e, NodeId x) const {
    return edges_[e].u == x ? edges_[e].v : edges_[e].u;
  }

 private:
  std::size_t node_count_ = 0;
  std::vector<EdgeEnds> edges_;
  std::vector<std::uint32_t> inc_offsets_{0};
  std::vector<Incidence> incidence_;
  std::vector<std::uint32_t> nb_offsets_{0};
  std::vector<NodeId> neighbors_;
};

}  // namespace agrag
