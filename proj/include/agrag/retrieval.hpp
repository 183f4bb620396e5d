#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/graph.hpp"
#include "agrag/prompts.hpp"
#include "agrag/providers.hpp"

namespace agrag {

inline constexpr double kDefaultBm25K1 = 1.2;
inline constexpr double kDefaultBm25B = 0.75;

struct ScoredFact {
  FactId fact;
  double score;

  friend bool operator==(const ScoredFact&, const ScoredFact&) = default;
};

struct ScoredChunk {
  std::uint32_t chunk;
  double score;

  friend bool operator==(const ScoredChunk&, const ScoredChunk&) = default;
};

/// Cosine similarity; 0 when either side is the zero vector.
inline double fact_similarity(std::span<const float> query, std::span<const float> fact) {
  return cosine(query, fact);
}

/// Exhaustive top-k over every fact by cosine to the query; ties go to the
/// lower fact id.
inline std::vector<ScoredFact> map_query_to_facts(std::span<const float> query_embedding,
                                                  const KnowledgeGraph& g, std::size_t k) {
  const auto n = g.facts().size();
  if (n == 0) {
    spdlog::warn("graph has no facts; query mapping is empty");
    return {};
  }
  std::vector<ScoredFact> all;
  all.reserve(n);
  for (FactId f = 0; f < n; ++f) {
    all.push_back({f, fact_similarity(query_embedding, g.fact_embeddings.row(f))});
  }
  const auto take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const ScoredFact& a, const ScoredFact& b) {
                      return a.score != b.score ? a.score > b.score : a.fact < b.fact;
                    });
  all.resize(take);
  return all;
}

struct FilterOutcome {
  std::vector<ScoredFact> filtered;
  bool pass_through = false;  // provider failed or answered unparseably
  bool fallback_top1 = false; // provider selected nothing
};

/// Parses a JSON array of integer indices; nullopt if the reply has none.
inline std::optional<std::vector<std::size_t>> parse_index_reply(std::string_view reply) {
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    return std::nullopt;
  }
  auto arr = nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
  if (arr.is_discarded() || !arr.is_array()) return std::nullopt;
  std::vector<std::size_t> out;
  for (const auto& v : arr) {
    if (!v.is_number_integer()) return std::nullopt;
    const auto i = v.get<long long>();
    if (i >= 0) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

/// LLM triple filter. The result is always a subset of `raw` in raw order,
/// and never empty when `raw` is not.
inline FilterOutcome filter_facts(std::span<const ScoredFact> raw, std::string_view query,
                                  const KnowledgeGraph& g, LlmProvider& provider) {
  FilterOutcome out;
  if (raw.empty()) return out;
  std::vector<prompts::FactLine> lines;
  for (const auto& sf : raw) {
    const auto& f = g.facts()[sf.fact];
    lines.push_back({g.entities()[f.subject].surface, f.relation,
                     g.entities()[f.object].surface});
  }
  const auto user = prompts::filter_user_content(query, lines);

  std::optional<std::vector<std::size_t>> picked;
  try {
    picked = parse_index_reply(provider.chat(prompts::kTripleFilter, user));
    if (!picked) {
      const std::string system =
          std::string(prompts::kTripleFilter) + std::string(prompts::kReformatSuffix);
      picked = parse_index_reply(provider.chat(system, user));
    }
  } catch (const Error& e) {
    spdlog::warn("triple filter unavailable ({}); keeping all mapped facts", e.what());
  }
  if (!picked) {
    out.filtered.assign(raw.begin(), raw.end());
    out.pass_through = true;
    return out;
  }
  std::vector<bool> keep(raw.size(), false);
  for (auto i : *picked) {
    if (i < raw.size()) keep[i] = true;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (keep[i]) out.filtered.push_back(raw[i]);
  }
  if (out.filtered.empty()) {
    out.filtered.push_back(raw.front());
    out.fallback_top1 = true;
  }
  return out;
}

/// Unigram Okapi BM25 statistics over the chunk set.
class Bm25Index {
 public:
  Bm25Index() = default;
  Bm25Index(std::span<const Chunk> chunks, double k1 = kDefaultBm25K1,
            double b = kDefaultBm25B)
      : k1_(k1), b_(b) {
    tf_.resize(chunks.size());
    lengths_.resize(chunks.size());
    double total = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      lengths_[i] = static_cast<double>(chunks[i].tokens.size());
      total += lengths_[i];
      for (const auto& t : chunks[i].tokens) ++tf_[i][t];
      for (const auto& [t, _] : tf_[i]) ++df_[t];
    }
    avg_length_ = chunks.empty() ? 0.0 : total / static_cast<double>(chunks.size());
  }

  std::size_t size() const { return tf_.size(); }

  /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
  double idf(const std::string& term) const {
    auto it = df_.find(term);
    const double df = it == df_.end() ? 0.0 : it->second;
    const double n = static_cast<double>(tf_.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  /// Raw score; each distinct query term counts once.
  double score(std::span<const Token> query_tokens, std::size_t chunk) const {
    const auto& tf = tf_.at(chunk);
    const double norm =
        avg_length_ > 0 ? (1.0 - b_ + b_ * lengths_[chunk] / avg_length_) : 1.0;
    double s = 0;
    std::unordered_set<std::string_view> seen;
    for (const auto& t : query_tokens) {
      if (!seen.insert(t).second) continue;
      auto it = tf.find(t);
      if (it == tf.end()) continue;
      const double f = it->second;
      s += idf(t) * f * (k1_ + 1.0) / (f + k1_ * norm);
    }
    return s;
  }

  /// Scores for every chunk, min-max normalised to [0, 1]. When all scores
  /// are equal they map to 1 if positive, else 0.
  std::vector<double> normalized_scores(std::span<const Token> query_tokens) const {
    std::vector<double> s(tf_.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = score(query_tokens, i);
    if (s.empty()) return s;
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    const double min = *lo, max = *hi;
    for (auto& v : s) {
      if (max > min) {
        v = (v - min) / (max - min);
      } else {
        v = max > 0 ? 1.0 : 0.0;
      }
    }
    return s;
  }

 private:
  double k1_ = kDefaultBm25K1;
  double b_ = kDefaultBm25B;
  double avg_length_ = 0;
  std::vector<std::unordered_map<std::string, std::uint32_t>> tf_;
  std::vector<double> lengths_;
  std::unordered_map<std::string, std::uint32_t> df_;
};

/// HS = ((cos + 1) / 2 + bm25_norm) / 2.
inline double hybrid_score(double cosine_similarity, double bm25_normalized) {
  return ((cosine_similarity + 1.0) / 2.0 + bm25_normalized) / 2.0;
}

/// Top-k chunks by hybrid score, ties by chunk id ascending.
inline std::vector<ScoredChunk> hybrid_retrieve(std::string_view query,
                                                std::span<const float> query_embedding,
                                                const KnowledgeGraph& g,
                                                const Bm25Index& bm25, std::size_t k) {
  const auto& chunks = g.chunks();
  if (chunks.empty()) return {};
  if (bm25.size() != chunks.size() || g.chunk_embeddings.size() != chunks.size()) {
    throw Error(ErrorKind::index_corruption, "retrieval statistics do not match chunks");
  }
  const auto tokens = tokenize(query);
  const auto sparse = bm25.normalized_scores(tokens);
  std::vector<ScoredChunk> all;
  all.reserve(chunks.size());
  for (std::uint32_t i = 0; i < chunks.size(); ++i) {
    const double ms = cosine(query_embedding, g.chunk_embeddings.row(i));
    all.push_back({i, hybrid_score(ms, sparse[i])});
  }
  const auto take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [&](const ScoredChunk& a, const ScoredChunk& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return chunks[a.chunk].id < chunks[b.chunk].id;
                    });
  all.resize(take);
  return all;
}

}  // namespace agrag
