#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/hash.hpp"
#include "agrag/mcmi.hpp"
#include "agrag/retrieval.hpp"
#include "agrag/weighting.hpp"

namespace agrag {

struct ProviderConfig {
  std::string kind = "mock";  // "mock" or "openai"
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string chat_model = "gpt-4o-mini";
  std::string embedding_model = "text-embedding-3-small";
  std::size_t embedding_dim = 128;
  std::size_t embedding_batch = 64;
  std::uint64_t context_tokens = 32768;
  std::size_t max_in_flight = 4;
  std::uint64_t timeout_ms = 60000;
  unsigned max_attempts = 3;
  std::uint64_t initial_backoff_ms = 200;
  double backoff_multiplier = 2.0;
  std::uint64_t max_backoff_ms = 5000;
  double mock_malformed_rate = 0.0;

  RetryPolicy retry_policy() const {
    return {max_attempts, std::chrono::milliseconds(initial_backoff_ms), backoff_multiplier,
            std::chrono::milliseconds(max_backoff_ms)};
  }
};

struct Config {
  std::string corpus_path;
  std::string index_path = "agrag.idx";
  std::size_t chunk_length = 256;
  std::size_t chunk_overlap = 32;
  double entity_threshold = 0.5;
  std::size_t max_ngram = 3;
  std::size_t relation_parallelism = 4;
  double synonym_threshold = 0.85;
  double damping = kDefaultDamping;
  double ppr_tolerance = kDefaultPprTolerance;
  double passage_factor = kDefaultPassageFactor;
  std::size_t k_a = 5;
  std::size_t k_r = 5;
  double bm25_k1 = kDefaultBm25K1;
  double bm25_b = kDefaultBm25B;
  McmiMode mcmi_mode = McmiMode::full;
  std::uint64_t seed = 42;
  ProviderConfig provider;

  /// Identity of the configured provider pair, as stamped into indexes.
  std::string provider_identity() const {
    if (provider.kind == "mock") {
      return "mock-llm/seed=" + std::to_string(seed) + "|mock-embedding/d=" +
             std::to_string(provider.embedding_dim) + "/seed=" + std::to_string(seed);
    }
    return "openai-chat/" + provider.chat_model + "@" + provider.base_url +
           "|openai-embedding/" + provider.embedding_model + "@" + provider.base_url +
           "/d=" + std::to_string(provider.embedding_dim);
  }

  /// Hash of the settings that shape a built index: tau, b, phi, l_t, l_o and
  /// provider identity.
  std::uint64_t fingerprint() const {
    std::uint64_t h = kFnvOffset;
    h = fnv1a_u64(std::bit_cast<std::uint64_t>(entity_threshold), h);
    h = fnv1a_u64(max_ngram, h);
    h = fnv1a_u64(std::bit_cast<std::uint64_t>(synonym_threshold), h);
    h = fnv1a_u64(chunk_length, h);
    h = fnv1a_u64(chunk_overlap, h);
    return fnv1a(provider_identity(), h);
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, msg); };
    if (chunk_length == 0) fail("chunk_length must be > 0");
    if (chunk_overlap >= chunk_length) fail("chunk_overlap must be < chunk_length");
    if (!(entity_threshold >= 0 && entity_threshold < 1)) {
      fail("entity_threshold must lie in [0, 1)");
    }
    if (max_ngram == 0) fail("max_ngram must be > 0");
    if (relation_parallelism == 0) fail("relation_parallelism must be > 0");
    if (!(synonym_threshold >= -1 && synonym_threshold <= 1)) {
      fail("synonym_threshold must lie in [-1, 1]");
    }
    if (!(damping >= 0 && damping < 1)) fail("damping must lie in [0, 1)");
    if (!(ppr_tolerance > 0)) fail("ppr_tolerance must be > 0");
    if (!(passage_factor >= 0 && passage_factor <= 1)) {
      fail("passage_factor must lie in [0, 1]");
    }
    if (k_a == 0) fail("k_a must be > 0");
    if (k_r == 0) fail("k_r must be > 0");
    if (!(bm25_k1 >= 0)) fail("bm25_k1 must be >= 0");
    if (!(bm25_b >= 0 && bm25_b <= 1)) fail("bm25_b must lie in [0, 1]");
    if (provider.kind != "mock" && provider.kind != "openai") {
      fail("provider.kind must be \"mock\" or \"openai\"");
    }
    if (provider.embedding_dim == 0) fail("provider.embedding_dim must be > 0");
    if (provider.embedding_batch == 0) fail("provider.embedding_batch must be > 0");
    if (provider.max_in_flight == 0) fail("provider.max_in_flight must be > 0");
    if (provider.max_attempts == 0) fail("provider.max_attempts must be > 0");
    if (!(provider.backoff_multiplier >= 1)) fail("provider.backoff_multiplier must be >= 1");
    if (!(provider.mock_malformed_rate >= 0 && provider.mock_malformed_rate <= 1)) {
      fail("provider.mock_malformed_rate must lie in [0, 1]");
    }
    if (provider.kind == "openai" && provider.api_key.empty()) {
      fail("provider.api_key (or AGRAG_API_KEY) is required for the openai provider");
    }
  }
};

inline std::string_view to_string(McmiMode m) {
  return m == McmiMode::full ? "full" : "steiner_only";
}

inline McmiMode parse_mcmi_mode(std::string_view s) {
  if (s == "full") return McmiMode::full;
  if (s == "steiner_only") return McmiMode::steiner_only;
  throw Error(ErrorKind::config, "mcmi_mode must be \"full\" or \"steiner_only\"");
}

inline nlohmann::json to_json(const Config& c) {
  const auto& p = c.provider;
  return {{"corpus_path", c.corpus_path},
          {"index_path", c.index_path},
          {"chunk_length", c.chunk_length},
          {"chunk_overlap", c.chunk_overlap},
          {"entity_threshold", c.entity_threshold},
          {"max_ngram", c.max_ngram},
          {"relation_parallelism", c.relation_parallelism},
          {"synonym_threshold", c.synonym_threshold},
          {"damping", c.damping},
          {"ppr_tolerance", c.ppr_tolerance},
          {"passage_factor", c.passage_factor},
          {"pseudo_edge_cost", KnowledgeGraph::kPseudoEdgeCost},
          {"k_a", c.k_a},
          {"k_r", c.k_r},
          {"bm25_k1", c.bm25_k1},
          {"bm25_b", c.bm25_b},
          {"mcmi_mode", to_string(c.mcmi_mode)},
          {"seed", c.seed},
          {"provider",
           {{"kind", p.kind},
            {"base_url", p.base_url},
            {"api_key", p.api_key.empty() ? "" : "<redacted>"},
            {"chat_model", p.chat_model},
            {"embedding_model", p.embedding_model},
            {"embedding_dim", p.embedding_dim},
            {"embedding_batch", p.embedding_batch},
            {"context_tokens", p.context_tokens},
            {"max_in_flight", p.max_in_flight},
            {"timeout_ms", p.timeout_ms},
            {"max_attempts", p.max_attempts},
            {"initial_backoff_ms", p.initial_backoff_ms},
            {"backoff_multiplier", p.backoff_multiplier},
            {"max_backoff_ms", p.max_backoff_ms},
            {"mock_malformed_rate", p.mock_malformed_rate}}}};
}

namespace detail {

using Setter = std::function<void(const nlohmann::json&)>;

template <typename T>
Setter bind(T& field, std::string key) {
  return [&field, key = std::move(key)](const nlohmann::json& v) {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        field = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw Error(ErrorKind::config, "");
        field = v.get<T>();
      } else {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
          throw Error(ErrorKind::config, "");
        }
        field = v.get<T>();
      }
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "config key '" + key + "' has the wrong type: " + v.dump());
    }
  };
}

inline void apply_object(const nlohmann::json& obj, const std::map<std::string, Setter>& keys,
                         const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    auto it = keys.find(k);
    if (it == keys.end()) {
      throw Error(ErrorKind::config, "unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
    }
    it->second(v);
  }
}

}  // namespace detail

/// Applies a JSON object onto `c`. Unknown keys and mistyped values are
/// configuration errors.
inline void apply_json(Config& c, const nlohmann::json& j) {
  auto& p = c.provider;
  const std::map<std::string, detail::Setter> provider_keys{
      {"kind", detail::bind(p.kind, "provider.kind")},
      {"base_url", detail::bind(p.base_url, "provider.base_url")},
      {"api_key", detail::bind(p.api_key, "provider.api_key")},
      {"chat_model", detail::bind(p.chat_model, "provider.chat_model")},
      {"embedding_model", detail::bind(p.embedding_model, "provider.embedding_model")},
      {"embedding_dim", detail::bind(p.embedding_dim, "provider.embedding_dim")},
      {"embedding_batch", detail::bind(p.embedding_batch, "provider.embedding_batch")},
      {"context_tokens", detail::bind(p.context_tokens, "provider.context_tokens")},
      {"max_in_flight", detail::bind(p.max_in_flight, "provider.max_in_flight")},
      {"timeout_ms", detail::bind(p.timeout_ms, "provider.timeout_ms")},
      {"max_attempts", detail::bind(p.max_attempts, "provider.max_attempts")},
      {"initial_backoff_ms", detail::bind(p.initial_backoff_ms, "provider.initial_backoff_ms")},
      {"backoff_multiplier", detail::bind(p.backoff_multiplier, "provider.backoff_multiplier")},
      {"max_backoff_ms", detail::bind(p.max_backoff_ms, "provider.max_backoff_ms")},
      {"mock_malformed_rate",
       detail::bind(p.mock_malformed_rate, "provider.mock_malformed_rate")},
  };
  const std::map<std::string, detail::Setter> keys{
      {"corpus_path", detail::bind(c.corpus_path, "corpus_path")},
      {"index_path", detail::bind(c.index_path, "index_path")},
      {"chunk_length", detail::bind(c.chunk_length, "chunk_length")},
      {"chunk_overlap", detail::bind(c.chunk_overlap, "chunk_overlap")},
      {"entity_threshold", detail::bind(c.entity_threshold, "entity_threshold")},
      {"max_ngram", detail::bind(c.max_ngram, "max_ngram")},
      {"relation_parallelism", detail::bind(c.relation_parallelism, "relation_parallelism")},
      {"synonym_threshold", detail::bind(c.synonym_threshold, "synonym_threshold")},
      {"damping", detail::bind(c.damping, "damping")},
      {"ppr_tolerance", detail::bind(c.ppr_tolerance, "ppr_tolerance")},
      {"passage_factor", detail::bind(c.passage_factor, "passage_factor")},
      {"k_a", detail::bind(c.k_a, "k_a")},
      {"k_r", detail::bind(c.k_r, "k_r")},
      {"bm25_k1", detail::bind(c.bm25_k1, "bm25_k1")},
      {"bm25_b", detail::bind(c.bm25_b, "bm25_b")},
      {"mcmi_mode",
       [&](const nlohmann::json& v) {
         if (!v.is_string()) throw Error(ErrorKind::config, "mcmi_mode must be a string");
         c.mcmi_mode = parse_mcmi_mode(v.get<std::string>());
       }},
      {"seed", detail::bind(c.seed, "seed")},
      {"provider",
       [&](const nlohmann::json& v) { detail::apply_object(v, provider_keys, "provider"); }},
  };
  detail::apply_object(j, keys, "");
}

/// AGRAG_API_KEY, AGRAG_BASE_URL and AGRAG_INDEX_PATH override the file.
inline void apply_env(Config& c) {
  if (const char* v = std::getenv("AGRAG_API_KEY"); v && *v) c.provider.api_key = v;
  if (const char* v = std::getenv("AGRAG_BASE_URL"); v && *v) c.provider.base_url = v;
  if (const char* v = std::getenv("AGRAG_INDEX_PATH"); v && *v) c.index_path = v;
}

/// Loads a config file; relative corpus/index paths resolve against the
/// file's directory. Env overrides are applied and the result validated.
inline Config load_config(const std::filesystem::path& path) {
  Config c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, "cannot parse config " + path.string() + ": " + e.what());
  }
  apply_json(c, j);
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  resolve(c.corpus_path);
  resolve(c.index_path);
  apply_env(c);
  c.validate();
  return c;
}

inline Config default_config() {
  Config c;
  apply_env(c);
  c.validate();
  return c;
}

}  // namespace agrag
