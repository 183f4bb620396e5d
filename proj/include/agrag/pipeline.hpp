#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "agrag/config.hpp"
#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/extraction.hpp"
#include "agrag/graph.hpp"
#include "agrag/http_provider.hpp"
#include "agrag/index_io.hpp"
#include "agrag/mcmi.hpp"
#include "agrag/providers.hpp"
#include "agrag/retrieval.hpp"
#include "agrag/weighting.hpp"

namespace agrag {

inline constexpr int kQueryResultSchemaVersion = 1;
inline constexpr int kBuildReportSchemaVersion = 1;

inline constexpr std::string_view kFlagGraphDegraded = "graph-retrieval-degraded";
inline constexpr std::string_view kFlagFilterPassThrough = "filter-pass-through";
inline constexpr std::string_view kFlagFilterFallback = "filter-fallback-top1";
inline constexpr std::string_view kFlagAnswerFallback = "answer-fallback";
inline constexpr std::string_view kFlagPseudoBridged = "pseudo-bridged";
inline constexpr std::string_view kFlagFingerprintMismatch = "index-fingerprint-mismatch";

struct Providers {
  std::unique_ptr<LlmProvider> llm;
  std::unique_ptr<EmbeddingProvider> embedder;

  std::string identity() const { return llm->identity() + "|" + embedder->identity(); }
};

/// Providers for a configuration; every mock seed derives from `seed`.
inline Providers make_providers(const Config& c) {
  Providers p;
  if (c.provider.kind == "mock") {
    p.llm = std::make_unique<MockLlmProvider>(c.seed, c.provider.mock_malformed_rate,
                                              c.provider.retry_policy(),
                                              c.provider.context_tokens);
    p.embedder = std::make_unique<MockEmbeddingProvider>(c.provider.embedding_dim, c.seed);
  } else {
    p.llm = std::make_unique<OpenAiLlmProvider>(c.provider);
    p.embedder = std::make_unique<OpenAiEmbeddingProvider>(c.provider);
  }
  return p;
}

inline nlohmann::json usage_json(const Providers& p) {
  const auto llm = p.llm->usage().totals();
  const auto emb = p.embedder->usage().totals();
  return {{"llm", llm}, {"embedding", emb}, {"total", llm + emb}};
}

/// Exclusive build lock `<index>.lock`, released on destruction.
class IndexLock {
 public:
  explicit IndexLock(const std::filesystem::path& index_path) : path_(index_path) {
    path_ += ".lock";
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorKind::locked, "index is locked by another build (" + path_.string() +
                                         " exists)");
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~IndexLock() {
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  IndexLock(const IndexLock&) = delete;
  IndexLock& operator=(const IndexLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

namespace detail {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

class StageClock {
 public:
  template <typename Fn>
  auto time(const char* name, Fn&& fn) -> decltype(fn()) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      StageClock& self;
      const char* name;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        self.timings_[name] = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
      }
    } record{*this, name, start};
    return stage(name, std::forward<Fn>(fn));
  }
  const nlohmann::json& timings() const { return timings_; }

 private:
  nlohmann::json timings_ = nlohmann::json::object();
};

}  // namespace detail

struct BuildResult {
  KnowledgeGraph graph;
  nlohmann::json report;
  std::size_t failed_chunks = 0;
};

/// Chunking, entity and relation extraction, and graph assembly. Nothing is
/// written to disk.
inline BuildResult build_index(const Config& c, Providers& providers) {
  c.validate();
  BuildResult out;
  detail::StageClock clock;
  const auto docs = clock.time("load_corpus", [&] {
    if (c.corpus_path.empty()) throw Error(ErrorKind::config, "corpus_path is not set");
    return load_documents(c.corpus_path);
  });
  const auto chunks =
      clock.time("chunking", [&] { return split_corpus(docs, c.chunk_length, c.chunk_overlap); });
  const auto entities = clock.time("entity_extraction", [&] {
    std::vector<std::vector<Entity>> per_chunk(chunks.size());
    if (chunks.empty()) return per_chunk;
    const auto stats = build_stats(chunks, c.max_ngram);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      per_chunk[i] = extract_entities(chunks[i], i, stats, c.entity_threshold, c.max_ngram);
    }
    return per_chunk;
  });
  const auto relations = clock.time("relation_extraction", [&] {
    return extract_all_relations(chunks, entities, *providers.llm, c.relation_parallelism);
  });

  std::vector<std::vector<RawTriple>> triples(chunks.size());
  nlohmann::json failures = nlohmann::json::array();
  std::size_t reprompted = 0, dropped = 0, no_entities = 0;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& r = relations[i];
    triples[i] = r.triples;
    reprompted += r.reprompted;
    dropped += r.dropped;
    no_entities += entities[i].empty();
    if (r.failed) {
      ++out.failed_chunks;
      failures.push_back({{"chunk", chunks[i].id}, {"error", r.error}});
    }
  }

  out.graph = clock.time("graph_build", [&] {
    auto g = build_graph({chunks, entities, triples}, *providers.embedder, c.synonym_threshold);
    g.config_fingerprint = c.fingerprint();
    g.provider_identity = providers.identity();
    return g;
  });

  const auto summary = summary_json(out.graph);
  out.report = {{"schema_version", kBuildReportSchemaVersion},
                {"config_fingerprint", hex64(c.fingerprint())},
                {"provider_identity", out.graph.provider_identity},
                {"counts",
                 {{"documents", docs.size()},
                  {"chunks", chunks.size()},
                  {"entities", out.graph.entities().size()},
                  {"triples", out.graph.facts().size()},
                  {"nodes", summary["nodes"]},
                  {"edges", summary["edges"]}}},
                {"extraction",
                 {{"chunks_without_entities", no_entities},
                  {"failed_chunks", out.failed_chunks},
                  {"reprompted_chunks", reprompted},
                  {"dropped_triples", dropped},
                  {"failures", failures}}},
                {"usage", usage_json(providers)}};
  spdlog::debug("index stage timings: {}", clock.timings().dump());
  return out;
}

/// Builds and persists the index under an exclusive lock. The report gains
/// the index path; stage timings only when `with_timings`.
inline BuildResult index_command(const Config& c, bool with_timings = false) {
  c.validate();
  IndexLock lock(c.index_path);
  const auto start = std::chrono::steady_clock::now();
  auto providers = make_providers(c);
  auto result = build_index(c, providers);
  detail::stage("save", [&] { save_index(result.graph, c.index_path); });
  result.report["index_path"] = c.index_path;
  if (with_timings) {
    result.report["elapsed_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
  }
  return result;
}

struct QueryResult {
  nlohmann::json report;
  std::string answer;
  std::string graph_string;
  std::vector<std::string> flags;
  McmiSubgraph mcmi;
  bool degraded = false;

  bool has_flag(std::string_view f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
  }
};

inline nlohmann::json json_number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

/// Mapping, filtering, weighting, MCMI, hybrid retrieval and answer
/// generation for one query. `explain` adds the MCMI trace, the Steiner
/// seed and per-stage timings; without it the report is deterministic.
inline QueryResult run_query(const KnowledgeGraph& g, std::string_view query, const Config& c,
                             Providers& providers, bool explain = false) {
  if (query.empty()) throw Error(ErrorKind::usage, "query must not be empty");
  QueryResult out;
  detail::StageClock clock;

  const auto q = clock.time("embed_query", [&] {
    return providers.embedder->embed_one(query);
  });
  const auto raw = clock.time("fact_mapping", [&] { return map_query_to_facts(q, g, c.k_a); });
  const bool degraded =
      raw.empty() || std::all_of(raw.begin(), raw.end(),
                                 [](const ScoredFact& f) { return !(f.score > 0); });

  FilterOutcome filtered;
  SteinerTree seed;
  WeightedView view;
  if (!degraded) {
    filtered = clock.time("triple_filter",
                          [&] { return filter_facts(raw, query, g, *providers.llm); });
    if (filtered.pass_through) out.flags.emplace_back(kFlagFilterPassThrough);
    if (filtered.fallback_top1) out.flags.emplace_back(kFlagFilterFallback);
    std::vector<FactId> ids;
    for (const auto& f : filtered.filtered) ids.push_back(f.fact);
    view = clock.time("weighting", [&] {
      return weight_graph(g, ids, q, c.damping, c.ppr_tolerance, c.passage_factor);
    });
    out.mcmi = clock.time("mcmi", [&] { return generate_mcmi(g, view, ids, c.mcmi_mode, &seed); });
    if (out.mcmi.pseudo_stripped) out.flags.emplace_back(kFlagPseudoBridged);
    out.graph_string = serialize_subgraph(out.mcmi, g);
  } else {
    out.flags.emplace_back(kFlagGraphDegraded);
  }
  out.degraded = degraded;

  const auto hybrid = clock.time("hybrid_retrieval", [&] {
    Bm25Index bm25(g.chunks(), c.bm25_k1, c.bm25_b);
    return hybrid_retrieve(query, q, g, bm25, c.k_r);
  });

  // Hybrid chunks first, then passages the MCMI references.
  std::vector<std::uint32_t> context;
  std::unordered_set<std::uint32_t> present;
  for (const auto& h : hybrid) {
    if (present.insert(h.chunk).second) context.push_back(h.chunk);
  }
  for (auto n : out.mcmi.nodes) {
    const auto ref = g.node(n);
    if (ref.kind == NodeKind::passage && present.insert(ref.index).second) {
      context.push_back(ref.index);
    }
  }
  std::vector<std::string> passages;
  for (auto i : context) passages.push_back(g.chunks()[i].text);

  out.answer = clock.time("answer_generation", [&] {
    try {
      return providers.llm->chat(prompts::kAnswerGeneration,
                                 prompts::answer_user_content(query, out.graph_string, passages));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::context_overflow || is_retryable(e.kind()) ||
          e.kind() == ErrorKind::provider_rejected) {
        spdlog::warn("answer generation failed ({}); returning retrieved passages", e.what());
        out.flags.emplace_back(kFlagAnswerFallback);
        std::string raw_answer;
        for (const auto& p : passages) raw_answer += p + "\n";
        return raw_answer;
      }
      throw;
    }
  });

  auto fact_list = [&](std::span<const ScoredFact> facts) {
    auto arr = nlohmann::json::array();
    for (const auto& f : facts) {
      auto j = fact_json(g, f.fact);
      j["score"] = f.score;
      arr.push_back(std::move(j));
    }
    return arr;
  };
  auto labels = [&](std::span<const NodeId> nodes) {
    auto arr = nlohmann::json::array();
    for (auto n : nodes) arr.push_back(g.node_label(n));
    return arr;
  };
  nlohmann::json chunks_json = nlohmann::json::array();
  for (const auto& h : hybrid) {
    const auto& ch = g.chunks()[h.chunk];
    chunks_json.push_back({{"chunk_id", ch.id},
                           {"source_doc", ch.source_doc},
                           {"position", ch.position},
                           {"score", h.score}});
  }
  nlohmann::json context_json = nlohmann::json::array();
  for (auto i : context) context_json.push_back(g.chunks()[i].id);
  nlohmann::json edges_json = nlohmann::json::array();
  for (auto e : out.mcmi.edges) edges_json.push_back(edge_json(g, e));

  out.report = {{"schema_version", kQueryResultSchemaVersion},
                {"query", query},
                {"answer", out.answer},
                {"graph_string", out.graph_string},
                {"degraded", degraded},
                {"flags", out.flags},
                {"mapped_facts", fact_list(raw)},
                {"filtered_facts", fact_list(filtered.filtered)},
                {"mcmi",
                 {{"mode", to_string(c.mcmi_mode)},
                  {"terminals", labels(out.mcmi.terminals)},
                  {"nodes", labels(out.mcmi.nodes)},
                  {"edges", edges_json},
                  {"ratio", json_number(out.mcmi.ratio)},
                  {"seed_nodes", out.mcmi.seed_node_count},
                  {"seed_edges", out.mcmi.seed_edge_count},
                  {"admitted", out.mcmi.trace.size()}}},
                {"retrieved_chunks", chunks_json},
                {"context_chunks", context_json},
                {"index",
                 {{"config_fingerprint", hex64(g.config_fingerprint)},
                  {"provider_identity", g.provider_identity}}},
                {"usage", usage_json(providers)}};
  if (explain) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& t : out.mcmi.trace) {
      trace.push_back({{"node", t.node},
                       {"label", g.node_label(t.node)},
                       {"edge", t.edge},
                       {"ratio", t.ratio},
                       {"ratio_before", json_number(t.ratio_before)},
                       {"ratio_after", json_number(t.ratio_after)},
                       {"bootstrap", t.bootstrap}});
    }
    out.report["explain"] = {{"trace", trace},
                             {"steiner",
                              {{"nodes", labels(seed.nodes)},
                               {"edges", seed.edges},
                               {"total_cost", seed.total_cost}}},
                             {"ppr_iterations", view.ppr_iterations},
                             {"timings_ms", clock.timings()}};
  }
  return out;
}

/// Loads the index (warning on fingerprint mismatch) and answers one query.
inline QueryResult query_command(const std::filesystem::path& index_path, std::string_view query,
                                 const Config& c, bool explain = false) {
  c.validate();
  std::vector<std::string> warnings;
  const auto g =
      detail::stage("load_index", [&] { return load_index(index_path, c.fingerprint(), &warnings); });
  auto providers = make_providers(c);
  auto result = run_query(g, query, c, providers, explain);
  if (!warnings.empty()) {
    result.flags.emplace_back(kFlagFingerprintMismatch);
    result.report["flags"] = result.flags;
    result.report["warnings"] = warnings;
  }
  return result;
}

/// Selector forms: "" (summary), "kind=<node or edge kind>",
/// "surface=<substring>", "chunk=<chunk id>".
inline nlohmann::json inspect_command(const KnowledgeGraph& g, std::string_view selector,
                                      bool full = false) {
  if (selector.empty()) return full ? export_json(g) : summary_json(g);
  const auto eq = selector.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorKind::usage, "selector must look like key=value, got '" +
                                      std::string(selector) + "'");
  }
  const auto key = selector.substr(0, eq);
  const auto value = selector.substr(eq + 1);
  nlohmann::json out{{"selector", selector},
                     {"nodes", nlohmann::json::array()},
                     {"edges", nlohmann::json::array()},
                     {"facts", nlohmann::json::array()}};
  auto add_incident = [&](NodeId n) {
    for (const auto& inc : g.topology().incident(n)) out["edges"].push_back(edge_json(g, inc.edge));
  };

  if (key == "kind") {
    static const std::unordered_set<std::string_view> node_kinds{"entity", "passage", "pseudo"};
    static const std::unordered_set<std::string_view> edge_kinds{"relation", "contains", "synonym",
                                                                 "pseudo_relation"};
    if (node_kinds.contains(value)) {
      for (NodeId n = 0; n < g.node_count(); ++n) {
        if (to_string(g.node(n).kind) == value) out["nodes"].push_back(node_json(g, n));
      }
    } else if (edge_kinds.contains(value)) {
      for (EdgeId e = 0; e < g.edges().size(); ++e) {
        if (to_string(g.edges()[e].kind) == value) out["edges"].push_back(edge_json(g, e));
      }
    } else {
      throw Error(ErrorKind::usage, "unknown kind '" + std::string(value) + "'");
    }
  } else if (key == "surface") {
    if (value.empty()) throw Error(ErrorKind::usage, "surface selector needs a value");
    for (std::uint32_t i = 0; i < g.entities().size(); ++i) {
      if (g.entities()[i].surface.find(value) == std::string::npos) continue;
      out["nodes"].push_back(node_json(g, g.entity_node(i)));
      add_incident(g.entity_node(i));
    }
  } else if (key == "chunk") {
    if (auto i = g.find_chunk(value)) {
      out["nodes"].push_back(node_json(g, g.passage_node(*i)));
      add_incident(g.passage_node(*i));
      for (FactId f = 0; f < g.facts().size(); ++f) {
        if (g.facts()[f].source_chunk == *i) out["facts"].push_back(fact_json(g, f));
      }
    }
  } else {
    throw Error(ErrorKind::usage, "unknown selector key '" + std::string(key) +
                                      "' (expected kind, surface or chunk)");
  }
  return out;
}

}  // namespace agrag
