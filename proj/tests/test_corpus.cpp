#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "agrag/corpus.hpp"

using namespace agrag;

namespace {

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += "w" + std::to_string(i) + " ";
  return s;
}

}  // namespace

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("The Kidney works."), (TokenList{"the", "kidney", "works"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("A-B a_b"), (TokenList{"a", "b", "a_b"}));
  EXPECT_EQ(tokenize("  multiple\tspaces\nand, commas;"),
            (TokenList{"multiple", "spaces", "and", "commas"}));
}

TEST(Tokenize, KeepsNonAsciiBytesInsideTokens) {
  EXPECT_EQ(tokenize("Café au lait"), (TokenList{"café", "au", "lait"}));
}

TEST(SplitCorpus, StrideIsLengthMinusOverlap) {
  const std::vector<std::string> docs{words(10)};
  const auto chunks = split_corpus(std::span<const std::string>(docs), 4, 1);
  ASSERT_EQ(chunks.size(), 3u);
  const auto all = tokenize(docs[0]);
  const std::size_t starts[] = {0, 3, 6};
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    EXPECT_EQ(chunks[i].tokens.front(), all[starts[i]]);
    EXPECT_EQ(chunks[i].position, i);
    EXPECT_EQ(chunks[i].source_doc, "doc0");
  }
  EXPECT_EQ(chunks.back().tokens.back(), all.back());
}

TEST(SplitCorpus, FullLengthDocumentIsOneChunk) {
  const std::vector<std::string> docs{words(256)};
  EXPECT_EQ(split_corpus(std::span<const std::string>(docs), 256, 32).size(), 1u);
}

TEST(SplitCorpus, EmptyInputs) {
  EXPECT_TRUE(split_corpus(std::span<const std::string>(), 256, 32).empty());
  const std::vector<std::string> docs{"", "  ..  "};
  EXPECT_TRUE(split_corpus(std::span<const std::string>(docs), 4, 1).empty());
}

TEST(SplitCorpus, OverlapNotSmallerThanLengthIsConfigError) {
  const std::vector<std::string> docs{words(5)};
  try {
    split_corpus(std::span<const std::string>(docs), 4, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(SplitCorpus, ReconstructionAndOverlapProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng() % 60;
    const std::size_t lt = 1 + rng() % 12;
    const std::size_t lo = rng() % lt;
    const std::vector<std::string> docs{words(n)};
    const auto chunks = split_corpus(std::span<const std::string>(docs), lt, lo);
    TokenList rebuilt;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& t = chunks[i].tokens;
      ASSERT_LE(t.size(), lt);
      if (i + 1 < chunks.size()) {
        ASSERT_EQ(t.size(), lt);
      }
      if (i > 0) {
        const auto& prev = chunks[i - 1].tokens;
        const std::size_t shared = std::min(lo, prev.size());
        ASSERT_TRUE(std::equal(prev.end() - static_cast<long>(shared), prev.end(), t.begin()));
      }
      rebuilt.insert(rebuilt.end(), t.begin() + static_cast<long>(i == 0 ? 0 : lo), t.end());
    }
    ASSERT_EQ(rebuilt, tokenize(docs[0])) << "n=" << n << " lt=" << lt << " lo=" << lo;
  }
}

TEST(SplitCorpus, IdsAreStableAndUnique) {
  const std::vector<std::string> docs{"a b c a b c", "a b c a b c"};
  const auto first = split_corpus(std::span<const std::string>(docs), 3, 0);
  const auto second = split_corpus(std::span<const std::string>(docs), 3, 0);
  EXPECT_EQ(first, second);
  std::set<std::string> ids;
  for (const auto& c : first) ids.insert(c.id);
  EXPECT_EQ(ids.size(), first.size());  // same text, different doc/position
}

TEST(Ngrams, Enumeration) {
  EXPECT_EQ(ngrams(TokenList{"a", "b", "c"}, 2),
            (std::vector<std::string>{"a", "b", "c", "a b", "b c"}));
  EXPECT_EQ(ngrams(TokenList{"a"}, 3), (std::vector<std::string>{"a"}));
  EXPECT_EQ(ngrams(TokenList{"a", "b"}, 1), (std::vector<std::string>{"a", "b"}));
}

TEST(Ngrams, SizeFormula) {
  for (std::size_t len = 0; len < 15; ++len) {
    TokenList t(len, "x");
    for (std::size_t b = 1; b < 5; ++b) {
      std::size_t expected = 0;
      for (std::size_t n = 1; n <= std::min(b, len); ++n) expected += len - n + 1;
      EXPECT_EQ(ngrams(t, b).size(), expected);
    }
  }
}

TEST(CorpusStats, CountsAndBounds) {
  const std::vector<std::string> docs{"a b a", "b c", "a b a"};
  const auto chunks = split_corpus(std::span<const std::string>(docs), 10, 0);
  const auto stats = build_stats(chunks, 2);
  EXPECT_EQ(stats.chunk_count, 3u);
  EXPECT_EQ(stats.doc_freq.at("a"), 2u);
  EXPECT_EQ(stats.doc_freq.at("b"), 3u);
  EXPECT_EQ(stats.doc_freq.at("a b"), 2u);
  EXPECT_EQ(stats.term_counts[0].at("a"), 2u);
  EXPECT_EQ(stats.chunk_lengths[1], 2u);
  for (const auto& [term, df] : stats.doc_freq) EXPECT_LE(df, stats.chunk_count);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    for (const auto& [term, n] : stats.term_counts[i]) EXPECT_LE(n, stats.chunk_lengths[i]);
  }
}

TEST(LoadDocuments, DirectoryAndJsonLines) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "agrag_corpus_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "docs");
  std::ofstream(dir / "docs" / "b.txt") << "second doc";
  std::ofstream(dir / "docs" / "a.txt") << "first doc";
  auto docs = load_documents(dir / "docs");
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].id, "a.txt");
  EXPECT_EQ(docs[1].text, "second doc");

  std::ofstream(dir / "c.jsonl") << R"({"id": "x", "text": "hello world"})" << "\n\n"
                                 << R"({"id": "y", "text": "bye"})" << "\n";
  docs = load_documents(dir / "c.jsonl");
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].id, "x");
  EXPECT_EQ(docs[1].text, "bye");

  std::ofstream(dir / "bad.jsonl") << "{not json}\n";
  EXPECT_THROW(load_documents(dir / "bad.jsonl"), Error);
  try {
    load_documents(dir / "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  fs::remove_all(dir);
}
