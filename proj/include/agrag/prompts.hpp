#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agrag::prompts {

// System prompts double as mode markers for the mock provider, so callers
// must use these exact strings (the reprompt variants only append text).

inline constexpr std::string_view kRelationExtraction =
    "You extract relations between entities. Using only the text provided, "
    "list every relation that holds between two entities from the given "
    "entity list. Reply with a JSON array of objects with the string fields "
    "\"subject\", \"relation\" and \"object\". Subject and object must be "
    "copied exactly from the entity list. Reply with the JSON array only.";

inline constexpr std::string_view kTripleFilter =
    "You filter knowledge-graph facts for question answering. Given a "
    "question and a numbered list of candidate facts, select the facts that "
    "help answer the question. Reply with a JSON array of the selected fact "
    "numbers, for example [0, 2]. Reply with the JSON array only.";

inline constexpr std::string_view kAnswerGeneration =
    "You answer questions using the provided knowledge graph and passages. "
    "The graph lists entities and relations relevant to the question. Base "
    "the answer on the provided context and answer concisely.";

inline constexpr std::string_view kReformatSuffix =
    " Your previous reply could not be parsed. Reply with valid JSON only.";

inline std::string relation_user_content(std::span<const std::string> entities,
                                         std::string_view chunk_text) {
  std::string out = "Entities:\n";
  for (const auto& e : entities) {
    out += "- ";
    out += e;
    out += '\n';
  }
  out += "\nText:\n";
  out += chunk_text;
  out += '\n';
  return out;
}

struct FactLine {
  std::string subject;
  std::string relation;
  std::string object;
};

inline std::string filter_user_content(std::string_view query,
                                       std::span<const FactLine> facts) {
  std::string out = "Question:\n";
  out += query;
  out += "\n\nFacts:\n";
  for (std::size_t i = 0; i < facts.size(); ++i) {
    out += std::to_string(i) + ". (" + facts[i].subject + ", " +
           facts[i].relation + ", " + facts[i].object + ")\n";
  }
  return out;
}

inline std::string answer_user_content(std::string_view query,
                                       std::string_view graph_string,
                                       std::span<const std::string> passages) {
  std::string out = "Question:\n";
  out += query;
  out += "\n\nGraph:\n";
  out += graph_string;
  if (!graph_string.empty() && graph_string.back() != '\n') out += '\n';
  out += "\nPassages:\n";
  for (std::size_t i = 0; i < passages.size(); ++i) {
    out += "[" + std::to_string(i + 1) + "] " + passages[i] + "\n";
  }
  return out;
}

}  // namespace agrag::prompts
