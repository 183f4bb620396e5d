#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "agrag/http_provider.hpp"
#include "agrag/providers.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace agrag;
using testing_support::ScriptedLlm;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an agrag::Error";
  return ErrorKind::usage;
}

}  // namespace

TEST(MockEmbedding, DeterministicFixedDimension) {
  MockEmbeddingProvider m(64, 5);
  EXPECT_EQ(m.embed_one("a"), m.embed_one("a"));
  for (const char* t : {"a", "kidney cancer", "x y z w v u"}) EXPECT_EQ(m.embed_one(t).size(), 64u);
  MockEmbeddingProvider other(64, 6);
  EXPECT_EQ(other.dimension(), 64u);
}

TEST(MockEmbedding, SharedTokensGivePositiveCosine) {
  MockEmbeddingProvider m;
  const auto a = m.embed_one("kidney cancer");
  const auto b = m.embed_one("kidney");
  // bag of hashed words: "kidney" contributes one shared unit count
  std::vector<float> ea(a.begin(), a.end()), eb(b.begin(), b.end());
  EXPECT_GT(oracle::cosine(ea, eb), 0.0);
  const double expected = m.bucket("kidney") == m.bucket("cancer") ? 1.0 : 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(oracle::cosine(ea, eb), expected, 1e-6);
}

TEST(MockEmbedding, RejectsEmptyStrings) {
  MockEmbeddingProvider m;
  const std::vector<std::string> texts{"ok", ""};
  EXPECT_EQ(kind_of([&] { m.embed(texts); }), ErrorKind::domain);
}

TEST(EmbeddingProvider, BatchesTransparently) {
  class Counting final : public EmbeddingProvider {
   public:
    Counting() : EmbeddingProvider({}, 64) {}
    std::size_t dimension() const override { return 2; }
    std::string identity() const override { return "counting"; }
    std::vector<std::size_t> sizes;

   protected:
    std::vector<Vector> embed_batch(std::span<const std::string> texts) override {
      sizes.push_back(texts.size());
      return std::vector<Vector>(texts.size(), Vector{1, 0});
    }
  } p;
  std::vector<std::string> texts(150, "t");
  EXPECT_EQ(p.embed(texts).size(), 150u);
  EXPECT_EQ(p.sizes, (std::vector<std::size_t>{64, 64, 22}));
  EXPECT_EQ(p.usage().totals().calls, 3u);
}

TEST(EmbeddingProvider, FailureCarriesBatchIndices) {
  class Failing final : public EmbeddingProvider {
   public:
    Failing() : EmbeddingProvider({2, std::chrono::milliseconds(1)}, 4) {
      set_sleeper([](auto) {});
    }
    std::size_t dimension() const override { return 1; }
    std::string identity() const override { return "failing"; }
    int calls = 0;

   protected:
    std::vector<Vector> embed_batch(std::span<const std::string> texts) override {
      ++calls;
      if (texts.front() == "bad") throw Error(ErrorKind::provider_transport, "down");
      return std::vector<Vector>(texts.size(), Vector{1});
    }
  } p;
  std::vector<std::string> texts{"a", "b", "c", "d", "bad", "f"};
  try {
    p.embed(texts);
    FAIL();
  } catch (const EmbeddingError& e) {
    EXPECT_EQ(e.failed_indices(), (std::vector<std::size_t>{4, 5}));
    EXPECT_EQ(e.kind(), ErrorKind::provider_transport);
  }
  EXPECT_EQ(p.calls, 3);  // one good batch, two attempts at the bad one
}

TEST(MockLlm, FilterSelectsEverything) {
  MockLlmProvider m;
  const std::vector<prompts::FactLine> facts{{"a", "r", "b"}, {"b", "s", "c"}, {"c", "t", "d"}};
  EXPECT_EQ(m.chat(prompts::kTripleFilter, prompts::filter_user_content("q", facts)), "[0,1,2]");
}

TEST(MockLlm, AnswerEchoesGraphNodes) {
  MockLlmProvider m;
  const std::vector<std::string> passages{"first passage", "second"};
  const std::string g = "Entities:\nkidney\ntumors\nRelations:\nkidney —[spread]→ tumors\n";
  EXPECT_EQ(m.chat(prompts::kAnswerGeneration, prompts::answer_user_content("q", g, passages)),
            "kidney\ntumors\n");
  EXPECT_EQ(m.chat(prompts::kAnswerGeneration, prompts::answer_user_content("q", "", passages)),
            "first passage");
}

TEST(MockLlm, RelationWindowAndLabels) {
  MockLlmProvider m;
  const std::vector<std::string> ents{"a", "b", "c"};
  const auto reply = m.chat(prompts::kRelationExtraction,
                            prompts::relation_user_content(ents, "a b x x x x x x x x x x c"));
  auto parsed = nlohmann::json::parse(reply);
  ASSERT_EQ(parsed.size(), 1u);  // c is 12 tokens from a and 11 from b
  EXPECT_EQ(parsed[0]["relation"], "related_to");
}

TEST(MockLlm, MalformedRateIsDeterministicPerChunk) {
  MockLlmProvider always(42, 1.0), never(42, 0.0);
  const std::vector<std::string> ents{"a", "b"};
  const auto user = prompts::relation_user_content(ents, "a b");
  EXPECT_THROW({ auto j = nlohmann::json::parse(always.chat(prompts::kRelationExtraction, user)); (void)j; },
               nlohmann::json::exception);
  EXPECT_NO_THROW({ auto j = nlohmann::json::parse(never.chat(prompts::kRelationExtraction, user)); (void)j; });
  MockLlmProvider partial(42, 0.3);
  int broken = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto u = prompts::relation_user_content(ents, "a b " + std::to_string(i));
    const auto r1 = partial.chat(prompts::kRelationExtraction, u);
    EXPECT_EQ(r1, partial.chat(prompts::kRelationExtraction, u));
    broken += nlohmann::json::parse(r1, nullptr, false).is_discarded();
  }
  EXPECT_NEAR(broken / 1000.0, 0.3, 0.05);
}

TEST(LlmProvider, ContextBudgetNotRetried) {
  ScriptedLlm llm({}, {}, 5);
  EXPECT_EQ(kind_of([&] { llm.chat("one two three", "four five six"); }),
            ErrorKind::context_overflow);
  EXPECT_TRUE(llm.prompts.empty());
}

TEST(LlmProvider, RetriesTransientErrorsWithBackoff) {
  ScriptedLlm llm(ScriptedLlm::Steps{{"", ErrorKind::provider_rate_limit}, {"", ErrorKind::provider_transport},
                   {"ok", {}}});
  EXPECT_EQ(llm.chat("s", "u"), "ok");
  EXPECT_EQ(llm.prompts.size(), 3u);
  EXPECT_EQ(llm.sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(200),
                                                                std::chrono::milliseconds(400)}));
}

TEST(LlmProvider, NonRetryableErrorsFailFast) {
  ScriptedLlm llm(ScriptedLlm::Steps{{"", ErrorKind::provider_rejected}});
  EXPECT_EQ(kind_of([&] { llm.chat("s", "u"); }), ErrorKind::provider_rejected);
  EXPECT_EQ(llm.prompts.size(), 1u);
}

TEST(LlmProvider, UsageTotalsEqualSumOfRecords) {
  MockLlmProvider m;
  for (int i = 0; i < 5; ++i) m.chat(prompts::kTripleFilter, "Question:\nq\n\nFacts:\n0. (a, b, c)\n");
  const auto totals = m.usage().totals();
  std::uint64_t prompt = 0, completion = 0;
  for (const auto& r : m.usage().records()) {
    prompt += r.prompt_tokens;
    completion += r.completion_tokens;
  }
  EXPECT_EQ(totals.calls, 5u);
  EXPECT_EQ(totals.prompt_tokens, prompt);
  EXPECT_EQ(totals.completion_tokens, completion);
}

TEST(RetryPolicy, ExponentialAndCapped) {
  RetryPolicy p{5, std::chrono::milliseconds(100), 3.0, std::chrono::milliseconds(1000)};
  EXPECT_EQ(p.backoff(1).count(), 100);
  EXPECT_EQ(p.backoff(2).count(), 300);
  EXPECT_EQ(p.backoff(3).count(), 900);
  EXPECT_EQ(p.backoff(4).count(), 1000);
}

TEST(BaseUrl, Parsing) {
  auto e = parse_base_url("https://api.example.com/v1/");
  EXPECT_EQ(e.origin, "https://api.example.com");
  EXPECT_EQ(e.prefix, "/v1");
  e = parse_base_url("http://127.0.0.1:8080");
  EXPECT_EQ(e.origin, "http://127.0.0.1:8080");
  EXPECT_EQ(e.prefix, "");
  EXPECT_THROW(parse_base_url("ftp://x"), Error);
  EXPECT_THROW(parse_base_url("localhost:80"), Error);
}

namespace {

/// Local OpenAI-compatible stub. `plan` lists the HTTP statuses for
/// successive requests; once exhausted every request succeeds.
class StubServer {
 public:
  StubServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      auth = req.get_header_value("Authorization");
      if (const int status = next_status(); status != 200) {
        res.status = status;
        res.set_content(status == 400 ? R"({"error":{"code":"context_length_exceeded"}})" : "{}",
                        "application/json");
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      last_model = body["model"];
      const nlohmann::json reply{
          {"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}},
          {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      if (const int status = next_status(); status != 200) {
        res.status = status;
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json data = nlohmann::json::array();
      // reversed order: the client must sort by index
      for (std::size_t i = body["input"].size(); i-- > 0;) {
        data.push_back({{"index", i}, {"embedding", {static_cast<float>(i), 1.0f}}});
      }
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  ProviderConfig config() const {
    ProviderConfig c;
    c.kind = "openai";
    c.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
    c.api_key = "sk-test";
    c.embedding_dim = 2;
    c.timeout_ms = 5000;
    return c;
  }

  std::vector<int> plan;
  std::atomic<int> requests{0};
  std::string auth;
  std::string last_model;

 private:
  int next_status() {
    const int i = requests++;
    return i < static_cast<int>(plan.size()) ? plan[i] : 200;
  }

  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(HttpProvider, ChatSucceedsAndReportsUsage) {
  StubServer stub;
  OpenAiLlmProvider llm(stub.config());
  llm.set_sleeper([](auto) {});
  EXPECT_EQ(llm.chat("sys", "user"), "pong");
  EXPECT_EQ(stub.auth, "Bearer sk-test");
  EXPECT_EQ(stub.last_model, stub.config().chat_model);
  EXPECT_EQ(llm.usage().totals().prompt_tokens, 11u);
  EXPECT_EQ(llm.usage().totals().completion_tokens, 3u);
}

TEST(HttpProvider, HonorsRetryPolicyExactly) {
  for (unsigned attempts : {1u, 2u, 3u, 4u}) {
    StubServer stub;
    stub.plan = {500, 429, 503};
    auto cfg = stub.config();
    cfg.max_attempts = attempts;
    OpenAiLlmProvider llm(cfg);
    std::vector<std::chrono::milliseconds> sleeps;
    llm.set_sleeper([&](auto d) { sleeps.push_back(d); });
    if (attempts <= 3) {
      EXPECT_THROW(llm.chat("s", "u"), Error);
      EXPECT_EQ(stub.requests.load(), static_cast<int>(attempts));
    } else {
      EXPECT_EQ(llm.chat("s", "u"), "pong");
      EXPECT_EQ(stub.requests.load(), 4);
    }
    ASSERT_EQ(sleeps.size(), std::min(attempts, 4u) - 1);
    for (std::size_t i = 0; i < sleeps.size(); ++i) {
      EXPECT_EQ(sleeps[i], cfg.retry_policy().backoff(static_cast<unsigned>(i + 1)));
    }
  }
}

TEST(HttpProvider, ContextOverflowAndRejectionAreNotRetried) {
  StubServer stub;
  stub.plan = {400};
  OpenAiLlmProvider llm(stub.config());
  llm.set_sleeper([](auto) {});
  EXPECT_EQ(kind_of([&] { llm.chat("s", "u"); }), ErrorKind::context_overflow);
  EXPECT_EQ(stub.requests.load(), 1);
  stub.plan = {400, 401};
  EXPECT_EQ(kind_of([&] { llm.chat("s", "u"); }), ErrorKind::provider_rejected);
  EXPECT_EQ(stub.requests.load(), 2);
}

TEST(HttpProvider, TransportFailureWhenNothingListens) {
  ProviderConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.max_attempts = 2;
  c.timeout_ms = 500;
  OpenAiLlmProvider llm(c);
  int sleeps = 0;
  llm.set_sleeper([&](auto) { ++sleeps; });
  EXPECT_EQ(kind_of([&] { llm.chat("s", "u"); }), ErrorKind::provider_transport);
  EXPECT_EQ(sleeps, 1);
}

TEST(HttpProvider, EmbeddingsOrderedByIndexAndRetried) {
  StubServer stub;
  stub.plan = {502};
  OpenAiEmbeddingProvider emb(stub.config());
  emb.set_sleeper([](auto) {});
  const std::vector<std::string> texts{"a", "b", "c"};
  const auto v = emb.embed(texts);
  ASSERT_EQ(v.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(v[i][0], static_cast<float>(i));
  EXPECT_EQ(stub.requests.load(), 2);
}
