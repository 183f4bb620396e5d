#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace agrag {

enum class ErrorKind {
  config,
  usage,
  domain,
  io,
  format,
  version_mismatch,
  checksum_mismatch,
  truncated,
  index_corruption,
  provider_transport,
  provider_rate_limit,
  provider_rejected,
  context_overflow,
  unreachable_terminal,
  non_convergence,
  size_limit,
  locked,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::usage: return "usage";
    case ErrorKind::domain: return "domain";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::checksum_mismatch: return "checksum_mismatch";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::index_corruption: return "index_corruption";
    case ErrorKind::provider_transport: return "provider_transport";
    case ErrorKind::provider_rate_limit: return "provider_rate_limit";
    case ErrorKind::provider_rejected: return "provider_rejected";
    case ErrorKind::context_overflow: return "context_overflow";
    case ErrorKind::unreachable_terminal: return "unreachable_terminal";
    case ErrorKind::non_convergence: return "non_convergence";
    case ErrorKind::size_limit: return "size_limit";
    case ErrorKind::locked: return "locked";
  }
  return "unknown";
}

/// Base exception for everything the engine throws. The kind lets callers
/// (and the CLI's exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Wraps an error with the pipeline stage it came from ("chunking",
/// "relation_extraction", ...).
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), "[" + stage + "] " + cause.what()),
        stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline bool is_retryable(ErrorKind kind) {
  return kind == ErrorKind::provider_transport ||
         kind == ErrorKind::provider_rate_limit;
}

}  // namespace agrag
