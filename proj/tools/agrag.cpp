#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "agrag/agrag.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDegraded = 1;
constexpr int kExitFatal = 2;

agrag::Config config_from(const std::string& path) {
  return path.empty() ? agrag::default_config() : agrag::load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_logger_st("agrag"));

  CLI::App app{"Graph-augmented retrieval: index a corpus, answer queries, inspect indexes"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  auto* index = app.add_subcommand("index", "Build and save an index from a corpus");
  std::string index_config;
  bool index_timings = false;
  index->add_option("--config", index_config, "Config file (JSON)")->required();
  index->add_flag("--explain", index_timings, "Include elapsed time in the report");

  auto* query = app.add_subcommand("query", "Answer a query against a saved index");
  std::string query_index, query_text, query_config;
  bool explain = false;
  query->add_option("--index", query_index, "Index file (default: config index_path)");
  query->add_option("--query", query_text, "Query text")->required();
  query->add_option("--config", query_config, "Config file (JSON)");
  query->add_flag("--explain", explain, "Add the MCMI trace and stage timings");

  auto* inspect = app.add_subcommand("inspect", "Dump index internals as JSON");
  std::string inspect_index, selector;
  bool full = false;
  inspect->add_option("--index", inspect_index, "Index file")->required();
  inspect->add_option("--selector", selector, "kind=<kind>, surface=<text> or chunk=<id>");
  inspect->add_flag("--full", full, "With no selector, dump every node, edge and fact");

  auto* dump = app.add_subcommand("config", "Print the effective configuration");
  std::string dump_config;
  dump->add_option("--config", dump_config, "Config file (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFatal;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*index) {
      const auto cfg = agrag::load_config(index_config);
      const auto result = agrag::index_command(cfg, index_timings);
      std::cout << result.report.dump(2) << "\n";
      return result.failed_chunks > 0 ? kExitDegraded : kExitOk;
    }
    if (*query) {
      const auto cfg = config_from(query_config);
      const auto path = query_index.empty() ? cfg.index_path : query_index;
      const auto result = agrag::query_command(path, query_text, cfg, explain);
      std::cout << result.report.dump(2) << "\n";
      const bool degraded = result.degraded ||
                            result.has_flag(agrag::kFlagAnswerFallback) ||
                            result.has_flag(agrag::kFlagFilterPassThrough);
      return degraded ? kExitDegraded : kExitOk;
    }
    if (*inspect) {
      const auto g = agrag::load_index(inspect_index);
      std::cout << agrag::inspect_command(g, selector, full).dump(2) << "\n";
      return kExitOk;
    }
    if (*dump) {
      std::cout << agrag::to_json(config_from(dump_config)).dump(2) << "\n";
      return kExitOk;
    }
  } catch (const agrag::Error& e) {
    std::cerr << "error (" << agrag::to_string(e.kind()) << "): " << e.what() << "\n";
    return kExitFatal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitFatal;
}
