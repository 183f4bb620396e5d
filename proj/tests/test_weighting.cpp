#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "agrag/weighting.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace agrag;

namespace {

std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs(const Topology& t) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (const auto& e : t.edges()) out.emplace_back(e.u, e.v);
  return out;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Personalization, TwoFactsThreeDistinctEntities) {
  KnowledgeGraph g({make_entity("a"), make_entity("b"), make_entity("c"), make_entity("d")},
                   split_corpus(std::vector<std::string>{"a b c d"}, 100, 0));
  g.add_fact(0, "r", 1, 0);
  g.add_fact(1, "s", 2, 0);
  const std::vector<FactId> facts{0, 1};
  const auto p = personalization_vector(g, facts);
  ASSERT_EQ(p.size(), g.node_count());
  EXPECT_DOUBLE_EQ(p[0], 1.0 / 3);
  EXPECT_DOUBLE_EQ(p[1], 1.0 / 3);
  EXPECT_DOUBLE_EQ(p[2], 1.0 / 3);
  EXPECT_DOUBLE_EQ(p[3], 0.0);
  EXPECT_DOUBLE_EQ(p[4], 0.0);
}

TEST(Personalization, SelfFactAndEmptyFallback) {
  KnowledgeGraph g({make_entity("a"), make_entity("b")},
                   split_corpus(std::vector<std::string>{"a b"}, 100, 0));
  g.add_fact(0, "is", 0, 0);
  const std::vector<FactId> one{0};
  const auto p = personalization_vector(g, one);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(sum(p), 1.0);
  const auto uniform = personalization_vector(g, {});
  for (double x : uniform) EXPECT_DOUBLE_EQ(x, 1.0 / static_cast<double>(g.node_count()));
  const std::vector<FactId> bad{7};
  EXPECT_THROW(personalization_vector(g, bad), Error);
}

TEST(Ppr, ZeroDampingReturnsPersonalization) {
  const Topology t(3, {{0, 1}, {1, 2}});
  const std::vector<double> p{0.2, 0.3, 0.5};
  const auto r = ppr(t, p, 0.0, 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r.scores[i], p[i]);
}

TEST(Ppr, PathOfTwoClosedForm) {
  // x0 = (1-d) + d x1, x1 = d x0 with p = (1, 0)  =>  x0 = 1/(1+d).
  const Topology t(2, {{0, 1}});
  const std::vector<double> p{1.0, 0.0};
  const double d = 0.5;
  const auto r = ppr(t, p, d, 1e-12);
  EXPECT_NEAR(r.scores[0], 1.0 / (1 + d), 1e-10);
  EXPECT_NEAR(r.scores[1], d / (1 + d), 1e-10);
}

TEST(Ppr, MatchesDenseOracleOnRandomGraphs) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u01(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    auto rt = testing_support::random_topology(rng, n, rng() % (2 * n), 0.1, 1.0);
    // Leave some nodes isolated to exercise the dangling rule.
    const std::size_t isolated = rng() % 3;
    const Topology t(n + isolated, rt.edges);
    std::vector<double> p(n + isolated, 0.0);
    for (auto s : testing_support::random_terminals(rng, n + isolated, 1 + rng() % 4)) p[s] = 1;
    const double mass = sum(p);
    for (auto& x : p) x /= mass;
    const double d = 0.05 + 0.9 * u01(rng);
    const double tol = 1e-9;
    const auto r = ppr(t, p, d, tol);
    const auto want = oracle::dense_ppr(n + isolated, pairs(t), p, d);
    // Contraction by d bounds the distance to the fixed point.
    const double bound = tol * d / (1 - d) * static_cast<double>(n + isolated) + 1e-12;
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(r.scores[i], want[i], bound);
    ASSERT_NEAR(sum(r.scores), 1.0, 1e-9);
    for (double x : r.scores) ASSERT_GE(x, 0.0);
  }
}

TEST(Ppr, ResidualBelowToleranceAtStop) {
  std::mt19937_64 rng(3);
  const auto rt = testing_support::random_topology(rng, 30, 40, 0.1, 1.0);
  const Topology t(30, rt.edges);
  std::vector<double> p(30, 0.0);
  p[4] = 1;
  const auto r = ppr(t, p, 0.5, 1e-7);
  EXPECT_LT(r.last_delta, 1e-7);
  EXPECT_GT(r.iterations, 1u);
  // L1 contraction by d bounds the gap to n * tol * d / (1 - d).
  auto again = ppr(t, p, 0.5, 1e-12);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(r.scores[i], again.scores[i], 30 * 1e-7);
}

TEST(Ppr, RejectsBadInputs) {
  const Topology t(2, {{0, 1}});
  const std::vector<double> p{1.0, 0.0};
  EXPECT_THROW(ppr(t, p, 1.0, 1e-7), Error);
  EXPECT_THROW(ppr(t, p, -0.1, 1e-7), Error);
  EXPECT_THROW(ppr(t, p, 0.5, 0.0), Error);
  const std::vector<double> short_p{1.0};
  EXPECT_THROW(ppr(t, short_p, 0.5, 1e-7), Error);
  const std::vector<double> unnormalised{1.0, 1.0};
  EXPECT_THROW(ppr(t, unnormalised, 0.5, 1e-7), Error);
}

TEST(Ppr, IterationCapRaisesNonConvergence) {
  const Topology t(3, {{0, 1}, {1, 2}});
  const std::vector<double> p{1.0, 0.0, 0.0};
  try {
    ppr(t, p, 0.99, 1e-15, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::non_convergence);
  }
}

TEST(PassageDamping, ScalesOnlyPassages) {
  const std::vector<NodeKind> kinds{NodeKind::entity, NodeKind::passage, NodeKind::pseudo};
  const auto out = apply_passage_damping({0.2, 0.6, 0.2}, kinds, 0.05);
  EXPECT_DOUBLE_EQ(out[0], 0.2);
  EXPECT_DOUBLE_EQ(out[1], 0.6 * 0.05);
  EXPECT_DOUBLE_EQ(out[2], 0.2);
}

TEST(EdgeCosts, FromSimilarity) {
  EXPECT_DOUBLE_EQ(edge_cost_from_similarity(1.0), 0.0);
  EXPECT_DOUBLE_EQ(edge_cost_from_similarity(0.0), 0.5);
  EXPECT_DOUBLE_EQ(edge_cost_from_similarity(-1.0), 1.0);
  EXPECT_DOUBLE_EQ(edge_cost_from_similarity(0.6), 0.2);
}

TEST(EdgeCosts, PerKindRules) {
  std::mt19937_64 rng(8);
  const auto g = testing_support::random_graph(rng, 15, 6, 32, 0.5);
  MockEmbeddingProvider emb(32);
  const auto q = emb.embed_one("e1 e2 e3");
  const auto costs = edge_costs(g, q);
  ASSERT_EQ(costs.size(), g.edges().size());
  for (EdgeId id = 0; id < g.edges().size(); ++id) {
    const auto& e = g.edges()[id];
    if (e.kind == EdgeKind::pseudo_relation) {
      EXPECT_DOUBLE_EQ(costs[id], 10.0);
      continue;
    }
    double ms = -1;
    if (e.kind == EdgeKind::relation) {
      for (auto f : e.fact_ids) {
        const auto row = g.fact_embeddings.row(f);
        ms = std::max(ms, oracle::cosine(q, {row.begin(), row.end()}));
      }
    } else {
      const auto row = g.edge_embeddings.row(id);
      ms = oracle::cosine(q, {row.begin(), row.end()});
    }
    EXPECT_NEAR(costs[id], std::max(1e-6, (1 - ms) / 2), 1e-12);
    EXPECT_GT(costs[id], 0.0);
  }
}

TEST(WeightGraph, ScoresSumToOneBeforeDamping) {
  std::mt19937_64 rng(12);
  const auto g = testing_support::random_graph(rng, 20, 8);
  MockEmbeddingProvider emb(32);
  std::vector<FactId> facts;
  for (FactId f = 0; f < std::min<std::size_t>(3, g.facts().size()); ++f) facts.push_back(f);
  const auto view = weight_graph(g, facts, emb.embed_one("e1"));
  EXPECT_NEAR(sum(view.raw_scores), 1.0, 1e-9);
  for (NodeId n = 0; n < g.node_count(); ++n) {
    const double f = g.node(n).kind == NodeKind::passage ? kDefaultPassageFactor : 1.0;
    EXPECT_DOUBLE_EQ(view.node_scores[n], view.raw_scores[n] * f);
  }
  EXPECT_EQ(view.edge_costs.size(), g.edges().size());
}
