#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <spdlog/spdlog.h>

#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/extraction.hpp"
#include "agrag/providers.hpp"
#include "agrag/topology.hpp"

namespace agrag {

using FactId = std::uint32_t;

enum class NodeKind : std::uint8_t { entity = 0, passage = 1, pseudo = 2 };
enum class EdgeKind : std::uint8_t {
  relation = 0,
  contains = 1,
  synonym = 2,
  pseudo_relation = 3
};

inline std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::entity: return "entity";
    case NodeKind::passage: return "passage";
    case NodeKind::pseudo: return "pseudo";
  }
  return "?";
}

inline std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::relation: return "relation";
    case EdgeKind::contains: return "contains";
    case EdgeKind::synonym: return "synonym";
    case EdgeKind::pseudo_relation: return "pseudo_relation";
  }
  return "?";
}

inline constexpr std::string_view kContainsLabel = "Contains";
inline constexpr std::string_view kSynonymLabel = "synonym";
inline constexpr std::string_view kPseudoLabel = "pseudo_relation";
inline constexpr std::size_t kChunkHeadTokens = 12;

struct NodeRef {
  NodeKind kind;
  std::uint32_t index;  // entity index, chunk index, or 0 for the pseudo node

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Edge {
  NodeId u = 0;
  NodeId v = 0;
  EdgeKind kind = EdgeKind::relation;
  std::string label;
  std::vector<FactId> fact_ids;  // relation edges only

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct TripleFact {
  std::uint32_t subject = 0;  // entity index
  std::string relation;
  std::uint32_t object = 0;  // entity index
  std::uint32_t source_chunk = 0;
  EdgeId edge = 0;  // the relation edge carrying this fact

  friend bool operator==(const TripleFact&, const TripleFact&) = default;
};

/// Dense row-major float matrix; rows are embeddings.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ ? data_.size() / dim_ : 0; }
  bool empty() const { return data_.empty(); }

  void push_back(std::span<const float> row) {
    if (dim_ == 0) dim_ = row.size();
    if (row.size() != dim_) {
      throw Error(ErrorKind::index_corruption, "embedding dimension mismatch");
    }
    data_.insert(data_.end(), row.begin(), row.end());
  }
  void push_zero() { data_.resize(data_.size() + dim_, 0.0f); }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const std::vector<float>& raw() const { return data_; }
  std::vector<float>& raw() { return data_; }
  void reset(std::size_t dim) {
    dim_ = dim;
    data_.clear();
  }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::domain, "cosine: dimension mismatch " +
                                       std::to_string(a.size()) + " vs " +
                                       std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Entity nodes occupy ids [0, E), passage nodes [E, E + C), and the single
/// pseudo node is E + C. Mutations invalidate the topology until finalize().
class KnowledgeGraph {
 public:
  static constexpr double kPseudoEdgeCost = 10.0;

  KnowledgeGraph() = default;
  KnowledgeGraph(std::vector<Entity> entities, std::vector<Chunk> chunks)
      : entities_(std::move(entities)), chunks_(std::move(chunks)) {
    for (std::uint32_t i = 0; i < entities_.size(); ++i) {
      if (!entity_index_.emplace(entities_[i].surface, i).second) {
        throw Error(ErrorKind::index_corruption,
                    "duplicate entity surface '" + entities_[i].surface + "'");
      }
    }
  }

  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<Chunk>& chunks() const { return chunks_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<TripleFact>& facts() const { return facts_; }

  std::size_t node_count() const { return entities_.size() + chunks_.size() + 1; }
  NodeId entity_node(std::size_t i) const { return static_cast<NodeId>(i); }
  NodeId passage_node(std::size_t i) const {
    return static_cast<NodeId>(entities_.size() + i);
  }
  NodeId pseudo_node() const {
    return static_cast<NodeId>(entities_.size() + chunks_.size());
  }

  NodeRef node(NodeId n) const {
    if (n < entities_.size()) return {NodeKind::entity, n};
    if (n < pseudo_node()) {
      return {NodeKind::passage, static_cast<std::uint32_t>(n - entities_.size())};
    }
    if (n == pseudo_node()) return {NodeKind::pseudo, 0};
    throw Error(ErrorKind::index_corruption, "node id out of range");
  }

  std::optional<std::uint32_t> find_entity(std::string_view surface) const {
    auto it = entity_index_.find(std::string(surface));
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::uint32_t> find_chunk(std::string_view id) const {
    for (std::uint32_t i = 0; i < chunks_.size(); ++i) {
      if (chunks_[i].id == id) return i;
    }
    return std::nullopt;
  }

  /// Human-readable node label: entity surface, "passage <chunk id>", or
  /// "<pseudo>".
  std::string node_label(NodeId n) const {
    auto ref = node(n);
    switch (ref.kind) {
      case NodeKind::entity: return entities_[ref.index].surface;
      case NodeKind::passage: return "passage " + chunks_[ref.index].id;
      case NodeKind::pseudo: return "<pseudo>";
    }
    return {};
  }

  std::optional<EdgeId> find_edge(NodeId u, NodeId v, EdgeKind kind,
                                  std::string_view label) const {
    auto it = edge_index_.find(key(u, v, kind, label));
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Adds an undirected typed edge, or returns the existing one with the same
  /// endpoints, kind and label.
  EdgeId add_edge(NodeId u, NodeId v, EdgeKind kind, std::string label) {
    check_edge_kinds(u, v, kind);
    auto k = key(u, v, kind, label);
    if (auto it = edge_index_.find(k); it != edge_index_.end()) return it->second;
    const auto id = static_cast<EdgeId>(edges_.size());
    edges_.push_back({u, v, kind, std::move(label), {}});
    edge_index_.emplace(std::move(k), id);
    dirty_ = true;
    return id;
  }

  /// Registers a fact and attaches it to the (possibly shared) relation edge.
  FactId add_fact(std::uint32_t subject, std::string relation, std::uint32_t object,
                  std::uint32_t source_chunk) {
    if (subject >= entities_.size() || object >= entities_.size()) {
      throw Error(ErrorKind::index_corruption, "fact references unknown entity");
    }
    if (source_chunk >= chunks_.size()) {
      throw Error(ErrorKind::index_corruption, "fact references unknown chunk");
    }
    const EdgeId e = add_edge(entity_node(subject), entity_node(object),
                              EdgeKind::relation, relation);
    const auto id = static_cast<FactId>(facts_.size());
    facts_.push_back({subject, std::move(relation), object, source_chunk, e});
    edges_[e].fact_ids.push_back(id);
    return id;
  }

  /// Connects every passage to the pseudo node. Idempotent; returns the
  /// number of edges added.
  std::size_t attach_pseudo_node() {
    std::size_t added = 0;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      const auto before = edges_.size();
      add_edge(passage_node(i), pseudo_node(), EdgeKind::pseudo_relation,
               std::string(kPseudoLabel));
      added += edges_.size() - before;
    }
    return added;
  }

  void finalize() {
    std::vector<EdgeEnds> ends;
    ends.reserve(edges_.size());
    for (const auto& e : edges_) ends.push_back({e.u, e.v});
    topology_ = Topology(node_count(), std::move(ends));
    dirty_ = false;
  }

  bool finalized() const { return !dirty_ && topology_.node_count() == node_count(); }

  const Topology& topology() const {
    if (!finalized()) {
      throw Error(ErrorKind::index_corruption, "graph topology not finalized");
    }
    return topology_;
  }

  /// Text embedded for a contains/synonym edge in place of a triple.
  std::string surrogate_text(EdgeId id) const {
    const auto& e = edges_[id];
    switch (e.kind) {
      case EdgeKind::contains: {
        const auto ent = node(e.u).kind == NodeKind::entity ? e.u : e.v;
        const auto pas = ent == e.u ? e.v : e.u;
        const auto& tokens = chunks_[node(pas).index].tokens;
        const auto head = std::span<const Token>(tokens).first(
            std::min(tokens.size(), kChunkHeadTokens));
        return entities_[ent].surface + " " + std::string(kContainsLabel) + " " +
               join_tokens(head);
      }
      case EdgeKind::synonym:
        return entities_[e.u].surface + " " + std::string(kSynonymLabel) + " " +
               entities_[e.v].surface;
      default: return {};
    }
  }

  std::string fact_text(FactId f) const {
    const auto& fact = facts_[f];
    return entities_[fact.subject].surface + " " + fact.relation + " " +
           entities_[fact.object].surface;
  }

  EmbeddingTable entity_embeddings;
  EmbeddingTable fact_embeddings;
  EmbeddingTable chunk_embeddings;
  EmbeddingTable edge_embeddings;  // one row per edge; zero for relation/pseudo
  std::uint64_t config_fingerprint = 0;
  std::string provider_identity;

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.entities_ == b.entities_ && a.chunks_ == b.chunks_ &&
           a.edges_ == b.edges_ && a.facts_ == b.facts_ &&
           a.entity_embeddings == b.entity_embeddings &&
           a.fact_embeddings == b.fact_embeddings &&
           a.chunk_embeddings == b.chunk_embeddings &&
           a.edge_embeddings == b.edge_embeddings &&
           a.config_fingerprint == b.config_fingerprint &&
           a.provider_identity == b.provider_identity;
  }

  // Used by the index reader to restore facts without re-deriving edges.
  void restore(std::vector<Edge> edges, std::vector<TripleFact> facts) {
    edges_.clear();
    edge_index_.clear();
    for (auto& e : edges) {
      auto fact_ids = std::move(e.fact_ids);
      const auto id = add_edge(e.u, e.v, e.kind, std::move(e.label));
      if (id != edges_.size() - 1) {
        throw Error(ErrorKind::index_corruption, "duplicate edge in index");
      }
      edges_[id].fact_ids = std::move(fact_ids);
    }
    for (const auto& f : facts) {
      if (f.subject >= entities_.size() || f.object >= entities_.size() ||
          f.source_chunk >= chunks_.size() || f.edge >= edges_.size() ||
          edges_[f.edge].kind != EdgeKind::relation) {
        throw Error(ErrorKind::index_corruption, "fact references missing node or edge");
      }
    }
    facts_ = std::move(facts);
    for (const auto& e : edges_) {
      for (auto fid : e.fact_ids) {
        if (fid >= facts_.size()) {
          throw Error(ErrorKind::index_corruption, "edge references missing fact");
        }
      }
    }
    dirty_ = true;
  }

 private:
  using EdgeKey = std::tuple<NodeId, NodeId, std::uint8_t, std::string>;

  static EdgeKey key(NodeId u, NodeId v, EdgeKind kind, std::string_view label) {
    return {std::min(u, v), std::max(u, v), static_cast<std::uint8_t>(kind),
            std::string(label)};
  }

  void check_edge_kinds(NodeId u, NodeId v, EdgeKind kind) const {
    const auto a = node(u).kind;
    const auto b = node(v).kind;
    auto is = [&](NodeKind x, NodeKind y) {
      return (a == x && b == y) || (a == y && b == x);
    };
    bool ok = false;
    switch (kind) {
      case EdgeKind::relation:
      case EdgeKind::synonym: ok = is(NodeKind::entity, NodeKind::entity); break;
      case EdgeKind::contains: ok = is(NodeKind::entity, NodeKind::passage); break;
      case EdgeKind::pseudo_relation: ok = is(NodeKind::passage, NodeKind::pseudo); break;
    }
    if (!ok) {
      throw Error(ErrorKind::index_corruption,
                  std::string(to_string(kind)) + " edge between " +
                      std::string(to_string(a)) + " and " + std::string(to_string(b)));
    }
  }

  std::vector<Entity> entities_;
  std::vector<Chunk> chunks_;
  std::vector<Edge> edges_;
  std::vector<TripleFact> facts_;
  std::unordered_map<std::string, std::uint32_t> entity_index_;
  std::map<EdgeKey, EdgeId> edge_index_;
  Topology topology_;
  bool dirty_ = true;
};

/// Adds a synonym edge for every entity pair with cosine similarity above
/// `threshold`. Returns the number of edges added.
inline std::size_t add_synonym_edges(KnowledgeGraph& graph, double threshold) {
  const auto n = graph.entities().size();
  if (graph.entity_embeddings.size() != n) {
    throw Error(ErrorKind::index_corruption,
                "entity embeddings missing: have " +
                    std::to_string(graph.entity_embeddings.size()) + " for " +
                    std::to_string(n) + " entities");
  }
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (float x : graph.entity_embeddings.row(i)) s += static_cast<double>(x) * x;
    norms[i] = std::sqrt(s);
  }
  std::size_t added = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0) continue;
    const auto a = graph.entity_embeddings.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norms[j] == 0) continue;
      const auto b = graph.entity_embeddings.row(j);
      double dot = 0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += static_cast<double>(a[k]) * b[k];
      if (dot / (norms[i] * norms[j]) > threshold) {
        const auto before = graph.edges().size();
        graph.add_edge(graph.entity_node(i), graph.entity_node(j), EdgeKind::synonym,
                       std::string(kSynonymLabel));
        added += graph.edges().size() - before;
      }
    }
  }
  return added;
}

/// Embeds the surrogate text of every contains/synonym edge lacking a row.
inline void embed_edge_surrogates(KnowledgeGraph& graph, EmbeddingProvider& provider) {
  const auto& edges = graph.edges();
  const std::size_t have = graph.edge_embeddings.size();
  std::vector<std::string> texts;
  std::vector<EdgeId> ids;
  for (EdgeId id = static_cast<EdgeId>(have); id < edges.size(); ++id) {
    if (edges[id].kind == EdgeKind::contains || edges[id].kind == EdgeKind::synonym) {
      texts.push_back(graph.surrogate_text(id));
      ids.push_back(id);
    }
  }
  auto vecs = provider.embed(texts);
  if (graph.edge_embeddings.dim() == 0) graph.edge_embeddings.reset(provider.dimension());
  std::size_t next = 0;
  for (EdgeId id = static_cast<EdgeId>(have); id < edges.size(); ++id) {
    if (next < ids.size() && ids[next] == id) {
      graph.edge_embeddings.push_back(vecs[next++]);
    } else {
      graph.edge_embeddings.push_zero();
    }
  }
}

struct GraphBuildInput {
  std::span<const Chunk> chunks;
  std::span<const std::vector<Entity>> entities_per_chunk;
  std::span<const std::vector<RawTriple>> triples_per_chunk;
};

/// Assembles the knowledge graph: entity and passage nodes, relation edges,
/// contains edges wherever an entity's tokens occur contiguously in a chunk,
/// synonym edges above `synonym_threshold`, pseudo wiring, and embeddings.
/// Provider failures propagate; nothing is persisted here.
inline KnowledgeGraph build_graph(const GraphBuildInput& in,
                                  EmbeddingProvider& provider,
                                  double synonym_threshold) {
  if (in.entities_per_chunk.size() != in.chunks.size() ||
      in.triples_per_chunk.size() != in.chunks.size()) {
    throw Error(ErrorKind::domain, "build_graph: per-chunk inputs misaligned");
  }
  std::vector<Entity> entities;
  std::unordered_map<std::string, std::uint32_t> seen;
  std::size_t max_words = 0;
  for (const auto& per_chunk : in.entities_per_chunk) {
    for (const auto& e : per_chunk) {
      if (seen.emplace(e.surface, static_cast<std::uint32_t>(entities.size())).second) {
        entities.push_back(e);
        max_words = std::max(max_words, tokenize(e.surface).size());
      }
    }
  }
  KnowledgeGraph graph(std::move(entities),
                       std::vector<Chunk>(in.chunks.begin(), in.chunks.end()));

  for (std::uint32_t c = 0; c < in.chunks.size(); ++c) {
    for (const auto& t : in.triples_per_chunk[c]) {
      auto s = graph.find_entity(t.subject);
      auto o = graph.find_entity(t.object);
      if (!s || !o) {
        throw Error(ErrorKind::domain, "triple (" + t.subject + ", " + t.relation +
                                           ", " + t.object +
                                           ") references an unknown entity");
      }
      graph.add_fact(*s, t.relation, *o, c);
    }
  }

  for (std::uint32_t c = 0; c < in.chunks.size(); ++c) {
    for (const auto& term : ngrams(in.chunks[c].tokens, max_words)) {
      if (auto e = graph.find_entity(term)) {
        graph.add_edge(graph.entity_node(*e), graph.passage_node(c), EdgeKind::contains,
                       std::string(kContainsLabel));
      }
    }
  }

  const auto dim = provider.dimension();
  {
    std::vector<std::string> texts;
    for (const auto& e : graph.entities()) texts.push_back(e.surface);
    graph.entity_embeddings.reset(dim);
    for (const auto& v : provider.embed(texts)) graph.entity_embeddings.push_back(v);
  }
  {
    std::vector<std::string> texts;
    for (FactId f = 0; f < graph.facts().size(); ++f) texts.push_back(graph.fact_text(f));
    graph.fact_embeddings.reset(dim);
    for (const auto& v : provider.embed(texts)) graph.fact_embeddings.push_back(v);
  }
  {
    std::vector<std::string> texts;
    std::vector<std::size_t> nonempty;
    for (std::size_t i = 0; i < graph.chunks().size(); ++i) {
      if (!graph.chunks()[i].text.empty()) {
        texts.push_back(graph.chunks()[i].text);
        nonempty.push_back(i);
      }
    }
    auto vecs = provider.embed(texts);
    graph.chunk_embeddings.reset(dim);
    std::size_t next = 0;
    for (std::size_t i = 0; i < graph.chunks().size(); ++i) {
      if (next < nonempty.size() && nonempty[next] == i) {
        graph.chunk_embeddings.push_back(vecs[next++]);
      } else {
        graph.chunk_embeddings.push_zero();
      }
    }
  }

  const auto synonyms = add_synonym_edges(graph, synonym_threshold);
  spdlog::debug("added {} synonym edges", synonyms);
  graph.attach_pseudo_node();
  graph.edge_embeddings.reset(dim);
  embed_edge_surrogates(graph, provider);
  graph.provider_identity = provider.identity();
  graph.finalize();
  return graph;
}

}  // namespace agrag
