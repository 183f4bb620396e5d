#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "agrag/corpus.hpp"
#include "agrag/error.hpp"
#include "agrag/hash.hpp"
#include "agrag/prompts.hpp"

namespace agrag {

using Vector = std::vector<float>;

struct RetryPolicy {
  unsigned max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{5000};

  /// Delay before retry number `retry` (1-based).
  std::chrono::milliseconds backoff(unsigned retry) const {
    double ms = static_cast<double>(initial_backoff.count()) *
                std::pow(multiplier, static_cast<double>(retry - 1));
    ms = std::min(ms, static_cast<double>(max_backoff.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
  }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) {
  std::this_thread::sleep_for(d);
}

/// Whitespace-delimited word count; the token estimate used for context
/// budgets and for providers that do not report usage.
inline std::uint64_t estimate_tokens(std::string_view text) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

struct TokenUsage {
  std::uint64_t calls = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    calls += o.calls;
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  friend TokenUsage operator-(TokenUsage a, const TokenUsage& b) {
    a.calls -= b.calls;
    a.prompt_tokens -= b.prompt_tokens;
    a.completion_tokens -= b.completion_tokens;
    return a;
  }
  friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) { return a += b; }
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

inline void to_json(nlohmann::json& j, const TokenUsage& u) {
  j = nlohmann::json{{"calls", u.calls},
                     {"prompt_tokens", u.prompt_tokens},
                     {"completion_tokens", u.completion_tokens}};
}

struct CallRecord {
  std::string kind;  // "chat" or "embed"
  std::uint64_t prompt_hash = 0;
  double latency_ms = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  bool ok = true;
};

class UsageLog {
 public:
  void record(CallRecord r) {
    std::lock_guard lock(mutex_);
    totals_.calls += 1;
    totals_.prompt_tokens += r.prompt_tokens;
    totals_.completion_tokens += r.completion_tokens;
    records_.push_back(std::move(r));
  }
  TokenUsage totals() const {
    std::lock_guard lock(mutex_);
    return totals_;
  }
  std::vector<CallRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

 private:
  mutable std::mutex mutex_;
  TokenUsage totals_;
  std::vector<CallRecord> records_;
};

/// Runs `attempt` until it succeeds, a non-retryable error escapes, or the
/// policy's attempt budget is spent.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, const Sleeper& sleep, Fn&& attempt)
    -> decltype(attempt()) {
  const unsigned attempts = std::max(1u, policy.max_attempts);
  for (unsigned i = 1;; ++i) {
    try {
      return attempt();
    } catch (const Error& e) {
      if (!is_retryable(e.kind()) || i >= attempts) throw;
      spdlog::warn("provider call failed ({}), retry {}/{}", e.what(), i,
                   attempts - 1);
      sleep(policy.backoff(i));
    }
  }
}

/// Chat-completion capability. chat() enforces the context budget, retries
/// per the policy and logs usage; subclasses only implement complete().
class LlmProvider {
 public:
  struct Reply {
    std::string text;
    std::optional<std::uint64_t> prompt_tokens;
    std::optional<std::uint64_t> completion_tokens;
  };

  explicit LlmProvider(RetryPolicy policy = {},
                       std::uint64_t context_tokens = 32768)
      : policy_(policy), context_tokens_(context_tokens) {}
  virtual ~LlmProvider() = default;
  LlmProvider(const LlmProvider&) = delete;
  LlmProvider& operator=(const LlmProvider&) = delete;

  virtual std::string identity() const = 0;

  std::string chat(std::string_view system_prompt, std::string_view user_content) {
    const std::uint64_t estimate =
        estimate_tokens(system_prompt) + estimate_tokens(user_content);
    if (estimate > context_tokens_) {
      throw Error(ErrorKind::context_overflow,
                  "prompt of ~" + std::to_string(estimate) +
                      " tokens exceeds context budget " +
                      std::to_string(context_tokens_));
    }
    const auto hash = fnv1a(user_content, fnv1a(system_prompt));
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now() - start)
          .count();
    };
    try {
      Reply reply = with_retries(policy_, sleeper_, [&] {
        return complete(system_prompt, user_content);
      });
      usage_.record({"chat", hash, elapsed(),
                     reply.prompt_tokens.value_or(estimate),
                     reply.completion_tokens.value_or(estimate_tokens(reply.text)),
                     true});
      return std::move(reply.text);
    } catch (const Error&) {
      usage_.record({"chat", hash, elapsed(), 0, 0, false});
      throw;
    }
  }

  const UsageLog& usage() const { return usage_; }
  const RetryPolicy& retry_policy() const { return policy_; }
  std::uint64_t context_budget() const { return context_tokens_; }
  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

 protected:
  virtual Reply complete(std::string_view system_prompt,
                         std::string_view user_content) = 0;

 private:
  RetryPolicy policy_;
  std::uint64_t context_tokens_;
  Sleeper sleeper_ = real_sleep;
  UsageLog usage_;
};

/// Thrown when a batch still fails after retries; carries the input indices
/// of the failed batch.
class EmbeddingError : public Error {
 public:
  EmbeddingError(const Error& cause, std::vector<std::size_t> failed)
      : Error(cause.kind(), std::string("embedding batch failed: ") + cause.what()),
        failed_(std::move(failed)) {}
  const std::vector<std::size_t>& failed_indices() const { return failed_; }

 private:
  std::vector<std::size_t> failed_;
};

class EmbeddingProvider {
 public:
  explicit EmbeddingProvider(RetryPolicy policy = {}, std::size_t batch_size = 64)
      : policy_(policy), batch_size_(std::max<std::size_t>(1, batch_size)) {}
  virtual ~EmbeddingProvider() = default;
  EmbeddingProvider(const EmbeddingProvider&) = delete;
  EmbeddingProvider& operator=(const EmbeddingProvider&) = delete;

  virtual std::size_t dimension() const = 0;
  virtual std::string identity() const = 0;

  std::vector<Vector> embed(std::span<const std::string> texts) {
    for (const auto& t : texts) {
      if (t.empty()) throw Error(ErrorKind::domain, "cannot embed an empty string");
    }
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (std::size_t begin = 0; begin < texts.size(); begin += batch_size_) {
      const std::size_t n = std::min(batch_size_, texts.size() - begin);
      auto batch = texts.subspan(begin, n);
      std::uint64_t tokens = 0;
      std::uint64_t hash = kFnvOffset;
      for (const auto& t : batch) {
        tokens += estimate_tokens(t);
        hash = fnv1a(t, hash);
      }
      const auto start = std::chrono::steady_clock::now();
      std::vector<Vector> vecs;
      try {
        vecs = with_retries(policy_, sleeper_, [&] { return embed_batch(batch); });
      } catch (const Error& e) {
        usage_.record({"embed", hash, 0, 0, 0, false});
        std::vector<std::size_t> failed(n);
        for (std::size_t i = 0; i < n; ++i) failed[i] = begin + i;
        throw EmbeddingError(e, std::move(failed));
      }
      if (vecs.size() != n) {
        throw Error(ErrorKind::provider_transport,
                    "embedding provider returned " + std::to_string(vecs.size()) +
                        " vectors for " + std::to_string(n) + " inputs");
      }
      for (auto& v : vecs) {
        if (v.size() != dimension()) {
          throw Error(ErrorKind::provider_transport,
                      "embedding dimension " + std::to_string(v.size()) +
                          " != configured " + std::to_string(dimension()));
        }
        out.push_back(std::move(v));
      }
      usage_.record({"embed", hash,
                     std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count(),
                     tokens, 0, true});
    }
    return out;
  }

  Vector embed_one(std::string_view text) {
    const std::string s(text);
    return std::move(embed(std::span(&s, 1)).front());
  }

  const UsageLog& usage() const { return usage_; }
  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

 protected:
  virtual std::vector<Vector> embed_batch(std::span<const std::string> texts) = 0;

 private:
  RetryPolicy policy_;
  std::size_t batch_size_;
  Sleeper sleeper_ = real_sleep;
  UsageLog usage_;
};

/// Bag of hashed words: each token adds 1 to bucket fnv1a(seed, token) % D,
/// then the vector is L2-normalised. Texts with no tokens map to zero.
class MockEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit MockEmbeddingProvider(std::size_t dimension = 128,
                                 std::uint64_t seed = 42)
      : dim_(dimension), seed_(seed) {
    if (dim_ == 0) throw Error(ErrorKind::config, "embedding dimension must be > 0");
  }

  std::size_t dimension() const override { return dim_; }
  std::string identity() const override {
    return "mock-embedding/d=" + std::to_string(dim_) + "/seed=" +
           std::to_string(seed_);
  }

  std::size_t bucket(std::string_view token) const {
    return static_cast<std::size_t>(fnv1a(token, fnv1a_u64(seed_, kFnvOffset)) % dim_);
  }

  Vector encode(std::string_view text) const {
    Vector v(dim_, 0.0f);
    for (const auto& tok : tokenize(text)) v[bucket(tok)] += 1.0f;
    double norm = 0;
    for (float x : v) norm += static_cast<double>(x) * x;
    if (norm > 0) {
      const double inv = 1.0 / std::sqrt(norm);
      for (float& x : v) x = static_cast<float>(x * inv);
    }
    return v;
  }

 protected:
  std::vector<Vector> embed_batch(std::span<const std::string> texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(encode(t));
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Deterministic offline LLM. The mode is selected by the system prompt:
///  - relation extraction: one triple per entity pair whose occurrences sit
///    within a 10-token window (subject first); the relation is the first
///    token between them with one trailing "s" dropped when longer than 3
///    characters, or "related_to" when they are adjacent. A seeded hash of
///    the chunk text makes a `malformed_rate` fraction of chunks always
///    answer with broken JSON.
///  - triple filter: selects every listed fact.
///  - answer generation: echoes the graph string's entity list, or the
///    first passage when the graph is empty.
class MockLlmProvider final : public LlmProvider {
 public:
  explicit MockLlmProvider(std::uint64_t seed = 42, double malformed_rate = 0.0,
                           RetryPolicy policy = {},
                           std::uint64_t context_tokens = 32768)
      : LlmProvider(policy, context_tokens),
        seed_(seed),
        malformed_rate_(malformed_rate) {}

  std::string identity() const override {
    return "mock-llm/seed=" + std::to_string(seed_);
  }

  static constexpr std::size_t kWindow = 10;

 protected:
  Reply complete(std::string_view system_prompt,
                 std::string_view user_content) override {
    if (system_prompt.starts_with(prompts::kRelationExtraction)) {
      return {relations(user_content), {}, {}};
    }
    if (system_prompt.starts_with(prompts::kTripleFilter)) {
      return {select_all(user_content), {}, {}};
    }
    if (system_prompt.starts_with(prompts::kAnswerGeneration)) {
      return {answer(user_content), {}, {}};
    }
    return {"", {}, {}};
  }

 private:
  static std::string_view section(std::string_view text, std::string_view header,
                                  std::string_view next_header) {
    auto pos = text.find(header);
    if (pos == std::string_view::npos) return {};
    pos += header.size();
    auto end = next_header.empty() ? std::string_view::npos
                                   : text.find(next_header, pos);
    return text.substr(pos, end == std::string_view::npos ? text.size() - pos
                                                          : end - pos);
  }

  static std::vector<std::string_view> lines(std::string_view block) {
    std::vector<std::string_view> out;
    while (!block.empty()) {
      auto nl = block.find('\n');
      auto line = block.substr(0, nl);
      if (!line.empty()) out.push_back(line);
      if (nl == std::string_view::npos) break;
      block.remove_prefix(nl + 1);
    }
    return out;
  }

  bool malformed(std::string_view text) const {
    if (malformed_rate_ <= 0) return false;
    std::uint64_t h = fnv1a(text, fnv1a_u64(seed_, kFnvOffset));
    // FNV leaves the high bits of short, similar inputs correlated; mix
    // before mapping to [0, 1).
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return u < malformed_rate_;
  }

  std::string relations(std::string_view user) const {
    const auto text = section(user, "Text:\n", "");
    if (malformed(text)) return "[{\"subject\": \"";

    std::vector<TokenList> entities;
    for (auto line : lines(section(user, "Entities:\n", "\nText:"))) {
      if (line.starts_with("- ")) entities.push_back(tokenize(line.substr(2)));
    }
    const TokenList tokens = tokenize(text);

    struct Occurrence {
      std::size_t start, end, entity;
    };
    std::vector<Occurrence> occ;
    for (std::size_t e = 0; e < entities.size(); ++e) {
      const auto& et = entities[e];
      if (et.empty() || et.size() > tokens.size()) continue;
      for (std::size_t i = 0; i + et.size() <= tokens.size(); ++i) {
        if (std::equal(et.begin(), et.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
          occ.push_back({i, i + et.size(), e});
        }
      }
    }
    std::sort(occ.begin(), occ.end(), [](const auto& a, const auto& b) {
      return std::tie(a.start, a.end, a.entity) < std::tie(b.start, b.end, b.entity);
    });

    nlohmann::json out = nlohmann::json::array();
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t i = 0; i < occ.size(); ++i) {
      for (std::size_t j = i + 1; j < occ.size(); ++j) {
        const auto& a = occ[i];
        const auto& b = occ[j];
        if (b.start - a.start >= kWindow) break;
        if (b.start < a.end || a.entity == b.entity || b.end - a.start > kWindow) continue;
        const std::pair key{std::min(a.entity, b.entity), std::max(a.entity, b.entity)};
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
        seen.push_back(key);
        std::string rel = "related_to";
        if (b.start > a.end) {
          rel = tokens[a.end];
          if (rel.size() > 3 && rel.back() == 's') rel.pop_back();
        }
        out.push_back({{"subject", join_tokens(entities[a.entity])},
                       {"relation", rel},
                       {"object", join_tokens(entities[b.entity])}});
      }
    }
    return out.dump();
  }

  static std::string select_all(std::string_view user) {
    nlohmann::json out = nlohmann::json::array();
    std::size_t n = 0;
    for (auto line : lines(section(user, "Facts:\n", ""))) {
      if (!line.empty() && line.front() >= '0' && line.front() <= '9') out.push_back(n++);
    }
    return out.dump();
  }

  static std::string answer(std::string_view user) {
    const auto graph = section(user, "\nGraph:\n", "\nPassages:\n");
    const auto node_block = section(graph, "Entities:\n", "Relations:");
    std::string out;
    for (auto line : lines(node_block)) {
      out += line;
      out += '\n';
    }
    if (!out.empty()) return out;
    const auto passages = lines(section(user, "\nPassages:\n", ""));
    if (!passages.empty()) {
      auto first = passages.front();
      const auto close = first.find("] ");
      if (first.starts_with('[') && close != std::string_view::npos) first.remove_prefix(close + 2);
      return std::string(first);
    }
    return "No context available.";
  }

  std::uint64_t seed_;
  double malformed_rate_;
};

}  // namespace agrag
