#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "agrag/error.hpp"
#include "agrag/graph.hpp"
#include "agrag/hash.hpp"

// Index container, all integers little-endian:
//
//   "AGRAGIDX"  u32 version  u64 file_size  u64 config_fingerprint
//   str provider_identity  u32 dim  u32 entities  u32 chunks  u32 edges  u32 facts
//   section "ENTS": { str id, str surface } * entities
//   section "CHNK": { str id, str source_doc, u32 position, str text } * chunks
//   section "EDGE": { u32 u, u32 v, u8 kind, str label, u32 n, u32 fact * n } * edges
//   section "FACT": { u32 subject, u32 object, u32 chunk, u32 edge, str relation } * facts
//   section "EMBD": f32 rows for entities, facts, chunks, edges (dim each)
//   u32 crc32 over every preceding byte
//
// str = u32 byte length + bytes. Chunk tokens are re-derived from text.

namespace agrag {

inline constexpr std::string_view kIndexMagic = "AGRAGIDX";
inline constexpr std::uint32_t kIndexFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void section(std::string_view tag) { bytes(tag); }
  void table(const EmbeddingTable& t) {
    for (float f : t.raw()) f32(f);
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) {
      throw Error(ErrorKind::truncated, "index ends unexpectedly at byte " +
                                            std::to_string(pos_));
    }
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const auto n = u32();
    return std::string(take(n));
  }
  void section(std::string_view tag) {
    if (take(tag.size()) != tag) {
      throw Error(ErrorKind::format, "index section '" + std::string(tag) + "' missing");
    }
  }
  void table(EmbeddingTable& t, std::size_t rows, std::size_t dim) {
    t.reset(dim);
    auto& raw = t.raw();
    raw.resize(rows * dim);
    for (auto& f : raw) f = f32();
  }
  std::size_t position() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t checked_u32(std::size_t n, const char* what) {
  if (n > UINT32_MAX) throw Error(ErrorKind::size_limit, std::string(what) + " count overflow");
  return static_cast<std::uint32_t>(n);
}

}  // namespace detail

inline std::string serialize_index(const KnowledgeGraph& g) {
  detail::ByteWriter w;
  const auto dim = g.entity_embeddings.dim() ? g.entity_embeddings.dim()
                                             : g.chunk_embeddings.dim();
  w.bytes(kIndexMagic);
  w.u32(kIndexFormatVersion);
  w.u64(0);  // file size, patched below
  w.u64(g.config_fingerprint);
  w.str(g.provider_identity);
  w.u32(detail::checked_u32(dim, "dimension"));
  w.u32(detail::checked_u32(g.entities().size(), "entity"));
  w.u32(detail::checked_u32(g.chunks().size(), "chunk"));
  w.u32(detail::checked_u32(g.edges().size(), "edge"));
  w.u32(detail::checked_u32(g.facts().size(), "fact"));

  w.section("ENTS");
  for (const auto& e : g.entities()) {
    w.str(e.id);
    w.str(e.surface);
  }
  w.section("CHNK");
  for (const auto& c : g.chunks()) {
    w.str(c.id);
    w.str(c.source_doc);
    w.u32(c.position);
    w.str(c.text);
  }
  w.section("EDGE");
  for (const auto& e : g.edges()) {
    w.u32(e.u);
    w.u32(e.v);
    w.u8(static_cast<std::uint8_t>(e.kind));
    w.str(e.label);
    w.u32(detail::checked_u32(e.fact_ids.size(), "edge fact"));
    for (auto f : e.fact_ids) w.u32(f);
  }
  w.section("FACT");
  for (const auto& f : g.facts()) {
    w.u32(f.subject);
    w.u32(f.object);
    w.u32(f.source_chunk);
    w.u32(f.edge);
    w.str(f.relation);
  }
  w.section("EMBD");
  const auto check = [&](const EmbeddingTable& t, std::size_t rows, const char* what) {
    if (t.size() != rows || (rows && t.dim() != dim)) {
      throw Error(ErrorKind::index_corruption,
                  std::string(what) + " embeddings do not match graph");
    }
    w.table(t);
  };
  check(g.entity_embeddings, g.entities().size(), "entity");
  check(g.fact_embeddings, g.facts().size(), "fact");
  check(g.chunk_embeddings, g.chunks().size(), "chunk");
  check(g.edge_embeddings, g.edges().size(), "edge");

  auto& buf = w.buffer();
  const std::uint64_t total = buf.size() + 4;
  for (int i = 0; i < 8; ++i) {
    buf[kIndexMagic.size() + 4 + i] = static_cast<char>((total >> (8 * i)) & 0xff);
  }
  Crc32 crc;
  crc.update(buf);
  w.u32(crc.value());
  return std::move(buf);
}

inline KnowledgeGraph deserialize_index(std::string_view data) {
  if (data.size() < kIndexMagic.size() ||
      data.substr(0, kIndexMagic.size()) != kIndexMagic) {
    throw Error(ErrorKind::format, data.empty() ? "index file is empty"
                                                : "not an index file (bad magic)");
  }
  detail::ByteReader r(data);
  r.take(kIndexMagic.size());
  const auto version = r.u32();
  if (version != kIndexFormatVersion) {
    throw Error(ErrorKind::version_mismatch,
                "index format version " + std::to_string(version) +
                    ", expected " + std::to_string(kIndexFormatVersion));
  }
  const auto declared = r.u64();
  if (data.size() < declared) {
    throw Error(ErrorKind::truncated, "index truncated: " + std::to_string(data.size()) +
                                          " of " + std::to_string(declared) + " bytes");
  }
  if (data.size() != declared || declared < 4) {
    throw Error(ErrorKind::format, "index size does not match header");
  }
  Crc32 crc;
  crc.update(data.substr(0, data.size() - 4));
  detail::ByteReader tail(data.substr(data.size() - 4));
  if (crc.value() != tail.u32()) {
    throw Error(ErrorKind::checksum_mismatch, "index checksum mismatch");
  }

  const auto fingerprint = r.u64();
  auto identity = r.str();
  const auto dim = r.u32();
  const auto n_entities = r.u32();
  const auto n_chunks = r.u32();
  const auto n_edges = r.u32();
  const auto n_facts = r.u32();

  r.section("ENTS");
  std::vector<Entity> entities(n_entities);
  for (auto& e : entities) {
    e.id = r.str();
    e.surface = r.str();
  }
  r.section("CHNK");
  std::vector<Chunk> chunks(n_chunks);
  for (auto& c : chunks) {
    c.id = r.str();
    c.source_doc = r.str();
    c.position = r.u32();
    c.text = r.str();
    c.tokens = tokenize(c.text);
  }
  r.section("EDGE");
  std::vector<Edge> edges(n_edges);
  for (auto& e : edges) {
    e.u = r.u32();
    e.v = r.u32();
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(EdgeKind::pseudo_relation)) {
      throw Error(ErrorKind::index_corruption, "unknown edge kind");
    }
    e.kind = static_cast<EdgeKind>(kind);
    e.label = r.str();
    e.fact_ids.resize(r.u32());
    for (auto& f : e.fact_ids) f = r.u32();
  }
  r.section("FACT");
  std::vector<TripleFact> facts(n_facts);
  for (auto& f : facts) {
    f.subject = r.u32();
    f.object = r.u32();
    f.source_chunk = r.u32();
    f.edge = r.u32();
    f.relation = r.str();
  }

  KnowledgeGraph g(std::move(entities), std::move(chunks));
  const auto node_count = g.node_count();
  for (const auto& e : edges) {
    if (e.u >= node_count || e.v >= node_count) {
      throw Error(ErrorKind::index_corruption, "edge endpoint out of range");
    }
  }
  g.restore(std::move(edges), std::move(facts));

  r.section("EMBD");
  r.table(g.entity_embeddings, n_entities, dim);
  r.table(g.fact_embeddings, n_facts, dim);
  r.table(g.chunk_embeddings, n_chunks, dim);
  r.table(g.edge_embeddings, n_edges, dim);
  if (r.position() != data.size() - 4) {
    throw Error(ErrorKind::format, "trailing bytes after index sections");
  }
  g.config_fingerprint = fingerprint;
  g.provider_identity = std::move(identity);
  g.finalize();
  return g;
}

/// Writes via a temporary file and rename, so a failed save never leaves a
/// partial index behind.
inline void save_index(const KnowledgeGraph& g, const std::filesystem::path& path) {
  const auto bytes = serialize_index(g);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::io, "cannot move index into place at " + path.string());
  }
}

/// Loads an index. A fingerprint differing from `expected_fingerprint` is
/// reported (warning + `warnings`) but the index is still returned.
inline KnowledgeGraph load_index(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> expected_fingerprint = {},
                                 std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read index " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto g = deserialize_index(data);
  if (expected_fingerprint && *expected_fingerprint != g.config_fingerprint) {
    std::string msg = "index config fingerprint " + hex64(g.config_fingerprint) +
                      " differs from current configuration " +
                      hex64(*expected_fingerprint) +
                      "; results may not match a fresh index";
    spdlog::warn("{}", msg);
    if (warnings) warnings->push_back(std::move(msg));
  }
  return g;
}

inline nlohmann::json node_json(const KnowledgeGraph& g, NodeId n) {
  const auto ref = g.node(n);
  nlohmann::json j{{"id", n}, {"kind", to_string(ref.kind)}};
  if (ref.kind == NodeKind::entity) {
    j["entity_id"] = g.entities()[ref.index].id;
    j["surface"] = g.entities()[ref.index].surface;
  } else if (ref.kind == NodeKind::passage) {
    const auto& c = g.chunks()[ref.index];
    j["chunk_id"] = c.id;
    j["source_doc"] = c.source_doc;
    j["position"] = c.position;
    j["text"] = c.text;
  }
  return j;
}

inline nlohmann::json edge_json(const KnowledgeGraph& g, EdgeId e) {
  const auto& edge = g.edges()[e];
  nlohmann::json j{{"id", e},
                   {"u", edge.u},
                   {"v", edge.v},
                   {"u_label", g.node_label(edge.u)},
                   {"v_label", g.node_label(edge.v)},
                   {"kind", to_string(edge.kind)},
                   {"label", edge.label}};
  if (edge.kind == EdgeKind::relation) j["fact_ids"] = edge.fact_ids;
  return j;
}

inline nlohmann::json fact_json(const KnowledgeGraph& g, FactId f) {
  const auto& fact = g.facts()[f];
  return {{"id", f},
          {"subject", g.entities()[fact.subject].surface},
          {"relation", fact.relation},
          {"object", g.entities()[fact.object].surface},
          {"source_chunk", g.chunks()[fact.source_chunk].id},
          {"edge", fact.edge}};
}

inline nlohmann::json summary_json(const KnowledgeGraph& g) {
  std::size_t by_kind[4] = {0, 0, 0, 0};
  for (const auto& e : g.edges()) ++by_kind[static_cast<int>(e.kind)];
  return {{"format_version", kIndexFormatVersion},
          {"config_fingerprint", hex64(g.config_fingerprint)},
          {"provider_identity", g.provider_identity},
          {"embedding_dim", g.entity_embeddings.dim()},
          {"nodes",
           {{"entity", g.entities().size()},
            {"passage", g.chunks().size()},
            {"pseudo", 1},
            {"total", g.node_count()}}},
          {"edges",
           {{"relation", by_kind[0]},
            {"contains", by_kind[1]},
            {"synonym", by_kind[2]},
            {"pseudo_relation", by_kind[3]},
            {"total", g.edges().size()}}},
          {"facts", g.facts().size()}};
}

/// Full inspection dump (no embedding payloads).
inline nlohmann::json export_json(const KnowledgeGraph& g) {
  nlohmann::json j = summary_json(g);
  j["node_list"] = nlohmann::json::array();
  for (NodeId n = 0; n < g.node_count(); ++n) j["node_list"].push_back(node_json(g, n));
  j["edge_list"] = nlohmann::json::array();
  for (EdgeId e = 0; e < g.edges().size(); ++e) j["edge_list"].push_back(edge_json(g, e));
  j["fact_list"] = nlohmann::json::array();
  for (FactId f = 0; f < g.facts().size(); ++f) j["fact_list"].push_back(fact_json(g, f));
  return j;
}

}  // namespace agrag
