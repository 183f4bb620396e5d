#pragma once

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "agrag/corpus.hpp"
#include "agrag/extraction.hpp"
#include "agrag/graph.hpp"
#include "agrag/providers.hpp"

namespace testing_support {

using namespace agrag;

/// LLM whose replies come from a script; an entry may instead throw.
class ScriptedLlm final : public LlmProvider {
 public:
  struct Step {
    std::string reply;
    std::optional<ErrorKind> error;
  };
  using Steps = std::vector<Step>;

  explicit ScriptedLlm(std::vector<Step> steps, RetryPolicy policy = {},
                       std::uint64_t context = 32768)
      : LlmProvider(policy, context), steps_(steps.begin(), steps.end()) {
    set_sleeper([this](std::chrono::milliseconds d) { sleeps.push_back(d); });
  }

  std::string identity() const override { return "scripted"; }

  std::vector<std::pair<std::string, std::string>> prompts;
  std::vector<std::chrono::milliseconds> sleeps;
  std::string fallback = "[]";

 protected:
  Reply complete(std::string_view system, std::string_view user) override {
    std::lock_guard lock(mutex_);
    prompts.emplace_back(std::string(system), std::string(user));
    if (steps_.empty()) return {fallback, {}, {}};
    auto step = steps_.front();
    steps_.pop_front();
    if (step.error) throw Error(*step.error, "scripted failure");
    return {step.reply, {}, {}};
  }

 private:
  std::mutex mutex_;
  std::deque<Step> steps_;
};

/// Embedder returning fixed vectors for known texts and the mock encoding
/// otherwise.
class TableEmbedder final : public EmbeddingProvider {
 public:
  explicit TableEmbedder(std::size_t dim, std::map<std::string, Vector> table = {})
      : mock_(dim), table_(std::move(table)) {}
  std::size_t dimension() const override { return mock_.dimension(); }
  std::string identity() const override { return "table"; }

 protected:
  std::vector<Vector> embed_batch(std::span<const std::string> texts) override {
    std::vector<Vector> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      out.push_back(it != table_.end() ? it->second : mock_.encode(t));
    }
    return out;
  }

 private:
  MockEmbeddingProvider mock_;
  std::map<std::string, Vector> table_;
};

struct RandomCorpus {
  std::vector<Chunk> chunks;
  std::vector<std::vector<Entity>> entities;
  std::vector<std::vector<RawTriple>> triples;
};

/// Chunks built from entity words "eN" and filler words "fN"; each chunk's
/// entity set is the entity words it contains, and its triples link random
/// pairs of them.
inline RandomCorpus random_corpus(std::mt19937_64& rng, std::size_t n_entities,
                                  std::size_t n_chunks, std::size_t chunk_words = 12) {
  RandomCorpus rc;
  std::uniform_int_distribution<std::size_t> pick_entity(0, n_entities - 1);
  std::uniform_int_distribution<int> coin(0, 2);
  std::vector<std::string> texts;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    std::string text;
    for (std::size_t w = 0; w < chunk_words; ++w) {
      text += coin(rng) == 0 ? "f" + std::to_string(rng() % 7) : "e" + std::to_string(pick_entity(rng));
      text += ' ';
    }
    texts.push_back(text);
  }
  rc.chunks = split_corpus(std::span<const std::string>(texts), 1000, 0);
  for (const auto& ch : rc.chunks) {
    std::vector<Entity> ents;
    for (const auto& t : ch.tokens) {
      if (t[0] != 'e') continue;
      if (std::none_of(ents.begin(), ents.end(), [&](const Entity& e) { return e.surface == t; })) {
        ents.push_back(make_entity(t));
      }
    }
    std::vector<RawTriple> triples;
    if (ents.size() >= 2) {
      std::uniform_int_distribution<std::size_t> pick(0, ents.size() - 1);
      const std::size_t n = 1 + rng() % 3;
      for (std::size_t i = 0; i < n; ++i) {
        auto a = pick(rng), b = pick(rng);
        if (a == b) continue;
        triples.push_back({ents[a].surface, "r" + std::to_string(rng() % 4), ents[b].surface});
      }
    }
    rc.entities.push_back(std::move(ents));
    rc.triples.push_back(std::move(triples));
  }
  return rc;
}

inline KnowledgeGraph random_graph(std::mt19937_64& rng, std::size_t n_entities,
                                   std::size_t n_chunks, std::size_t dim = 32,
                                   double synonym_threshold = 0.85) {
  auto rc = random_corpus(rng, n_entities, n_chunks);
  MockEmbeddingProvider embedder(dim, rng());
  return build_graph({rc.chunks, rc.entities, rc.triples}, embedder, synonym_threshold);
}

/// Random connected graph: a random spanning tree plus `extra` edges, with
/// costs drawn uniformly from [lo, hi].
struct RandomTopology {
  std::size_t n = 0;
  std::vector<EdgeEnds> edges;
  std::vector<double> costs;
};

inline RandomTopology random_topology(std::mt19937_64& rng, std::size_t n, std::size_t extra,
                                      double lo, double hi) {
  RandomTopology t;
  t.n = n;
  std::uniform_real_distribution<double> cost(lo, hi);
  for (NodeId v = 1; v < n; ++v) {
    t.edges.push_back({static_cast<NodeId>(rng() % v), v});
    t.costs.push_back(cost(rng));
  }
  for (std::size_t i = 0; i < extra && n > 1; ++i) {
    NodeId a = static_cast<NodeId>(rng() % n), b = static_cast<NodeId>(rng() % n);
    if (a == b) continue;
    t.edges.push_back({a, b});
    t.costs.push_back(cost(rng));
  }
  return t;
}

inline std::vector<NodeId> random_terminals(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<NodeId> all(n);
  for (NodeId i = 0; i < n; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(k, n));
  return all;
}

/// True when `edges` (over `nodes`) form a connected subgraph.
inline bool connected(const Topology& topo, std::span<const NodeId> nodes,
                      std::span<const EdgeId> edges) {
  if (nodes.empty()) return true;
  std::map<NodeId, NodeId> parent;
  for (auto n : nodes) parent[n] = n;
  std::function<NodeId(NodeId)> find = [&](NodeId x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (auto e : edges) {
    const auto [u, v] = topo.ends(e);
    if (!parent.count(u) || !parent.count(v)) return false;
    parent[find(u)] = find(v);
  }
  const auto root = find(nodes.front());
  for (auto n : nodes) {
    if (find(n) != root) return false;
  }
  return true;
}

}  // namespace testing_support
