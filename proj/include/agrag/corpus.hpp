#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrag/error.hpp"
#include "agrag/hash.hpp"

namespace agrag {

using Token = std::string;
using TokenList = std::vector<Token>;

struct Document {
  std::string id;
  std::string text;
};

struct Chunk {
  std::string id;
  std::string text;  // tokens joined by single spaces
  TokenList tokens;
  std::string source_doc;
  std::uint32_t position = 0;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

/// Per-chunk term statistics over all n-grams up to `max_ngram` words.
struct CorpusStats {
  std::size_t chunk_count = 0;
  std::size_t max_ngram = 1;
  std::unordered_map<std::string, std::uint32_t> doc_freq;
  std::vector<std::unordered_map<std::string, std::uint32_t>> term_counts;
  std::vector<std::uint32_t> chunk_lengths;
};

namespace detail {

inline bool is_token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace detail

/// Lowercases ASCII letters and splits on anything that is not a letter,
/// digit, underscore or non-ASCII byte. Hyphens and apostrophes split.
inline TokenList tokenize(std::string_view text) {
  TokenList out;
  std::string current;
  for (char ch : text) {
    if (detail::is_token_byte(static_cast<unsigned char>(ch))) {
      current.push_back(detail::ascii_lower(ch));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

inline std::string join_tokens(std::span<const Token> tokens,
                               std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

inline std::string make_chunk_id(std::string_view source_doc,
                                 std::uint32_t position,
                                 std::string_view text) {
  std::uint64_t h = fnv1a(source_doc);
  h = fnv1a("\x1f", h);
  h = fnv1a_u64(position, h);
  h = fnv1a("\x1f", h);
  h = fnv1a(text, h);
  return "c" + hex64(h);
}

/// Fixed-length token windows; window i starts at i * (chunk_length - overlap).
/// The final window of a document may be shorter and is kept.
inline std::vector<Chunk> split_corpus(std::span<const Document> docs,
                                       std::size_t chunk_length,
                                       std::size_t overlap) {
  if (chunk_length == 0 || overlap >= chunk_length) {
    throw Error(ErrorKind::config,
                "chunk_overlap (" + std::to_string(overlap) +
                    ") must be smaller than chunk_length (" +
                    std::to_string(chunk_length) + ")");
  }
  const std::size_t stride = chunk_length - overlap;
  std::vector<Chunk> chunks;
  for (const auto& doc : docs) {
    const TokenList tokens = tokenize(doc.text);
    std::uint32_t position = 0;
    for (std::size_t start = 0; start < tokens.size(); start += stride) {
      const std::size_t end = std::min(tokens.size(), start + chunk_length);
      Chunk c;
      c.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                      tokens.begin() + static_cast<std::ptrdiff_t>(end));
      c.text = join_tokens(c.tokens);
      c.source_doc = doc.id;
      c.position = position++;
      c.id = make_chunk_id(c.source_doc, c.position, c.text);
      chunks.push_back(std::move(c));
      if (end == tokens.size()) break;
    }
  }
  return chunks;
}

inline std::vector<Chunk> split_corpus(std::span<const std::string> texts,
                                       std::size_t chunk_length,
                                       std::size_t overlap) {
  std::vector<Document> docs;
  docs.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    docs.push_back({"doc" + std::to_string(i), texts[i]});
  }
  return split_corpus(std::span<const Document>(docs), chunk_length, overlap);
}

/// All contiguous n-grams of length 1..max_n, grouped by length, each in
/// positional order. Duplicates are kept.
inline std::vector<std::string> ngrams(std::span<const Token> tokens,
                                       std::size_t max_n) {
  std::vector<std::string> out;
  for (std::size_t n = 1; n <= max_n && n <= tokens.size(); ++n) {
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      out.push_back(join_tokens(tokens.subspan(i, n)));
    }
  }
  return out;
}

inline CorpusStats build_stats(std::span<const Chunk> chunks,
                               std::size_t max_ngram) {
  CorpusStats stats;
  stats.chunk_count = chunks.size();
  stats.max_ngram = max_ngram;
  stats.term_counts.resize(chunks.size());
  stats.chunk_lengths.resize(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    stats.chunk_lengths[i] = static_cast<std::uint32_t>(chunks[i].tokens.size());
    auto& counts = stats.term_counts[i];
    for (auto& term : ngrams(chunks[i].tokens, max_ngram)) ++counts[term];
    for (const auto& [term, _] : counts) ++stats.doc_freq[term];
  }
  return stats;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Reads a directory of plain-text files (sorted by name, non-recursive) or a
/// JSON-lines file of {"id": ..., "text": ...} records.
inline std::vector<Document> load_documents(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Document> docs;
    for (const auto& f : files) {
      docs.push_back({f.filename().string(), read_file(f)});
    }
    return docs;
  }
  if (!fs::is_regular_file(path, ec)) {
    throw Error(ErrorKind::io, "corpus path not readable: " + path.string());
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      docs.push_back({rec.at("id").get<std::string>(),
                      rec.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::format, path.string() + ":" +
                                         std::to_string(line_no) + ": " +
                                         e.what());
    }
  }
  return docs;
}

}  // namespace agrag
