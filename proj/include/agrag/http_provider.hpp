#pragma once

#include <httplib.h>

#include <algorithm>
#include <memory>
#include <semaphore>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "agrag/config.hpp"
#include "agrag/error.hpp"
#include "agrag/providers.hpp"

namespace agrag {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash, e.g. "/v1"
};

inline Endpoint parse_base_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw Error(ErrorKind::config, "base_url must start with http:// or https://");
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorKind::config, "unsupported base_url scheme '" + std::string(scheme) + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) e.prefix = std::string(url.substr(path_start));
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  if (e.origin.size() <= scheme_end + 3) throw Error(ErrorKind::config, "base_url has no host");
  return e;
}

namespace detail {

/// Shared transport for both capabilities: bounded in-flight requests and
/// the status-code to error-kind mapping.
class HttpTransport {
 public:
  explicit HttpTransport(const ProviderConfig& cfg)
      : endpoint_(parse_base_url(cfg.base_url)),
        api_key_(cfg.api_key),
        timeout_ms_(cfg.timeout_ms),
        slots_(static_cast<std::ptrdiff_t>(std::min<std::size_t>(cfg.max_in_flight, 1024))) {}

  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(endpoint_.origin);
    const auto timeout = std::chrono::milliseconds(timeout_ms_);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const auto url = endpoint_.prefix + path;
    auto res = client.Post(url, headers, body.dump(), "application/json");
    if (!res) {
      throw Error(ErrorKind::provider_transport,
                  "POST " + url + " failed: " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 429) {
      throw Error(ErrorKind::provider_rate_limit, "POST " + url + " rate limited (429)");
    }
    if (status >= 500) {
      throw Error(ErrorKind::provider_transport,
                  "POST " + url + " returned " + std::to_string(status));
    }
    if (status >= 400) {
      const bool overflow = res->body.find("context_length") != std::string::npos ||
                            res->body.find("maximum context") != std::string::npos;
      throw Error(overflow ? ErrorKind::context_overflow : ErrorKind::provider_rejected,
                  "POST " + url + " returned " + std::to_string(status) + ": " +
                      res->body.substr(0, 200));
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorKind::provider_rejected, "POST " + url + " returned non-JSON body");
    }
    return j;
  }

  const Endpoint& endpoint() const { return endpoint_; }

 private:
  Endpoint endpoint_;
  std::string api_key_;
  std::uint64_t timeout_ms_;
  std::counting_semaphore<1024> slots_;
};

}  // namespace detail

/// Chat completions against an OpenAI-compatible `/chat/completions`.
class OpenAiLlmProvider final : public LlmProvider {
 public:
  explicit OpenAiLlmProvider(const ProviderConfig& cfg)
      : LlmProvider(cfg.retry_policy(), cfg.context_tokens),
        transport_(cfg),
        model_(cfg.chat_model),
        base_url_(cfg.base_url) {}

  std::string identity() const override {
    return "openai-chat/" + model_ + "@" + base_url_;
  }

 protected:
  Reply complete(std::string_view system_prompt, std::string_view user_content) override {
    const nlohmann::json body{
        {"model", model_},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", system_prompt}},
          {{"role", "user"}, {"content", user_content}}}}};
    const auto j = transport_.post("/chat/completions", body);
    Reply reply;
    try {
      reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::provider_rejected, "chat response lacks choices[0].message.content");
    }
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      if (u->contains("prompt_tokens")) reply.prompt_tokens = u->at("prompt_tokens").get<std::uint64_t>();
      if (u->contains("completion_tokens")) {
        reply.completion_tokens = u->at("completion_tokens").get<std::uint64_t>();
      }
    }
    return reply;
  }

 private:
  detail::HttpTransport transport_;
  std::string model_;
  std::string base_url_;
};

/// Embeddings against an OpenAI-compatible `/embeddings`.
class OpenAiEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit OpenAiEmbeddingProvider(const ProviderConfig& cfg)
      : EmbeddingProvider(cfg.retry_policy(), cfg.embedding_batch),
        transport_(cfg),
        model_(cfg.embedding_model),
        base_url_(cfg.base_url),
        dim_(cfg.embedding_dim) {}

  std::size_t dimension() const override { return dim_; }
  std::string identity() const override {
    return "openai-embedding/" + model_ + "@" + base_url_ + "/d=" + std::to_string(dim_);
  }

 protected:
  std::vector<Vector> embed_batch(std::span<const std::string> texts) override {
    const nlohmann::json body{{"model", model_}, {"input", texts}};
    const auto j = transport_.post("/embeddings", body);
    std::vector<Vector> out(texts.size());
    try {
      for (const auto& item : j.at("data")) {
        const auto i = item.value("index", std::size_t{0});
        if (i >= out.size()) throw Error(ErrorKind::provider_rejected, "embedding index out of range");
        out[i] = item.at("embedding").get<Vector>();
      }
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::provider_rejected, "embedding response lacks data[].embedding");
    }
    return out;
  }

 private:
  detail::HttpTransport transport_;
  std::string model_;
  std::string base_url_;
  std::size_t dim_;
};

}  // namespace agrag
