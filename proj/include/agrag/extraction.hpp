#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/hash.hpp"
#include "agrag/prompts.hpp"
#include "agrag/providers.hpp"

namespace agrag {

struct Entity {
  std::string id;
  std::string surface;

  friend bool operator==(const Entity&, const Entity&) = default;
};

inline std::string make_entity_id(std::string_view surface) {
  return "e" + hex64(fnv1a(surface));
}

inline Entity make_entity(std::string surface) {
  Entity e{make_entity_id(surface), std::move(surface)};
  return e;
}

/// Relation triple as produced by extraction, before entities are resolved
/// to graph nodes.
struct RawTriple {
  std::string subject;
  std::string relation;
  std::string object;

  friend bool operator==(const RawTriple&, const RawTriple&) = default;
};

/// Modified TF-IDF entity score:
///   count(v,t) / (|t| ln(N+1)) * ln((N+1) / (df(v)+1))
/// with N the number of chunks. Lies in [0, 1).
inline double er_score(std::string_view term, std::size_t chunk_index,
                       const CorpusStats& stats) {
  if (stats.chunk_count == 0) {
    throw Error(ErrorKind::domain, "er_score on an empty corpus");
  }
  if (chunk_index >= stats.term_counts.size()) {
    throw Error(ErrorKind::domain,
                "er_score: chunk index " + std::to_string(chunk_index) +
                    " out of range");
  }
  const double length = stats.chunk_lengths[chunk_index];
  if (length == 0) throw Error(ErrorKind::domain, "er_score on an empty chunk");

  const auto& counts = stats.term_counts[chunk_index];
  const auto it = counts.find(std::string(term));
  if (it == counts.end()) return 0.0;
  const double count = it->second;
  const double df = stats.doc_freq.at(it->first);
  const double n1 = static_cast<double>(stats.chunk_count) + 1.0;
  return count / (length * std::log(n1)) * std::log(n1 / (df + 1.0));
}

/// Every n-gram (n <= max_ngram) of the chunk whose score is strictly above
/// `threshold`, deduplicated, in n-gram enumeration order.
inline std::vector<Entity> extract_entities(const Chunk& chunk,
                                            std::size_t chunk_index,
                                            const CorpusStats& stats,
                                            double threshold,
                                            std::size_t max_ngram) {
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw Error(ErrorKind::config, "entity_threshold must lie in [0, 1)");
  }
  if (max_ngram == 0 || max_ngram > stats.max_ngram) {
    throw Error(ErrorKind::config,
                "max_ngram " + std::to_string(max_ngram) +
                    " not covered by corpus statistics (built for " +
                    std::to_string(stats.max_ngram) + ")");
  }
  std::vector<Entity> out;
  std::unordered_set<std::string> seen;
  for (auto& term : ngrams(chunk.tokens, max_ngram)) {
    if (seen.contains(term)) continue;
    seen.insert(term);
    if (er_score(term, chunk_index, stats) > threshold) {
      out.push_back(make_entity(std::move(term)));
    }
  }
  return out;
}

/// Parses a relation-extraction reply. Returns nullopt when the reply holds
/// no JSON array at all; individual malformed entries are skipped and
/// counted in `skipped`.
inline std::optional<std::vector<RawTriple>> parse_relation_reply(
    std::string_view reply, std::size_t* skipped = nullptr) {
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos ||
      close < open) {
    return std::nullopt;
  }
  nlohmann::json arr =
      nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) return std::nullopt;

  std::vector<RawTriple> out;
  std::size_t bad = 0;
  for (const auto& item : arr) {
    if (!item.is_object()) {
      ++bad;
      continue;
    }
    auto field = [&](const char* key) -> std::optional<std::string> {
      auto it = item.find(key);
      if (it == item.end() || !it->is_string()) return std::nullopt;
      return it->get<std::string>();
    };
    auto s = field("subject");
    auto r = field("relation");
    auto o = field("object");
    if (!s || !r || !o) {
      ++bad;
      continue;
    }
    RawTriple t{join_tokens(tokenize(*s)), *r, join_tokens(tokenize(*o))};
    auto first = t.relation.find_first_not_of(" \t\r\n");
    auto last = t.relation.find_last_not_of(" \t\r\n");
    t.relation = first == std::string::npos
                     ? std::string{}
                     : t.relation.substr(first, last - first + 1);
    if (t.subject.empty() || t.object.empty() || t.relation.empty()) {
      ++bad;
      continue;
    }
    out.push_back(std::move(t));
  }
  if (skipped) *skipped += bad;
  return out;
}

struct RelationResult {
  std::vector<RawTriple> triples;
  bool failed = false;
  bool reprompted = false;
  std::size_t dropped = 0;  // malformed entries plus out-of-set endpoints
  std::string error;
};

/// Asks the provider for relations among the chunk's own entities. One
/// reprompt on unparseable output; a second failure or a transport error
/// marks the chunk failed instead of throwing.
inline RelationResult extract_relations(std::span<const Entity> entities,
                                        const Chunk& chunk,
                                        LlmProvider& provider) {
  RelationResult result;
  if (entities.empty()) return result;

  std::vector<std::string> surfaces;
  std::unordered_set<std::string> allowed;
  for (const auto& e : entities) {
    surfaces.push_back(e.surface);
    allowed.insert(e.surface);
  }
  const std::string user = prompts::relation_user_content(surfaces, chunk.text);

  std::optional<std::vector<RawTriple>> parsed;
  try {
    parsed = parse_relation_reply(provider.chat(prompts::kRelationExtraction, user),
                                  &result.dropped);
    if (!parsed) {
      result.reprompted = true;
      const std::string system = std::string(prompts::kRelationExtraction) +
                                 std::string(prompts::kReformatSuffix);
      parsed = parse_relation_reply(provider.chat(system, user), &result.dropped);
    }
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
    spdlog::warn("relation extraction failed for chunk {}: {}", chunk.id, e.what());
    return result;
  }
  if (!parsed) {
    result.failed = true;
    result.error = "unparseable relation reply after reprompt";
    spdlog::warn("relation extraction failed for chunk {}: {}", chunk.id,
                 result.error);
    return result;
  }

  for (auto& t : *parsed) {
    if (!allowed.contains(t.subject) || !allowed.contains(t.object)) {
      spdlog::debug("dropping triple ({}, {}, {}) outside the entity set of {}",
                    t.subject, t.relation, t.object, chunk.id);
      ++result.dropped;
      continue;
    }
    if (std::find(result.triples.begin(), result.triples.end(), t) ==
        result.triples.end()) {
      result.triples.push_back(std::move(t));
    }
  }
  return result;
}

/// Runs extract_relations over all chunks with at most `parallelism`
/// concurrent provider calls; results are indexed by chunk.
inline std::vector<RelationResult> extract_all_relations(
    std::span<const Chunk> chunks,
    std::span<const std::vector<Entity>> entities_per_chunk,
    LlmProvider& provider, std::size_t parallelism) {
  std::vector<RelationResult> results(chunks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < chunks.size(); i = next++) {
      results[i] = extract_relations(entities_per_chunk[i], chunks[i], provider);
    }
  };
  const std::size_t width =
      std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(1, chunks.size()));
  if (width == 1) {
    worker();
    return results;
  }
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < width; ++i) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace agrag
