#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stalegraph/errors.hpp"
#include "stalegraph/embedding.hpp"
#include "stalegraph/time_encoder.hpp"
#include "test_util.hpp"

using namespace stalegraph;

namespace {

struct Fixture {
  ModelDims dims{4, 3, 2};
  EmbeddingConfig cfg;
  ParameterStore params;
  MemoryTable mem{8, 4};
  TemporalAdjacency adj{8, 2};
  std::vector<Event> log;

  explicit Fixture(std::size_t heads = 1, std::uint64_t seed = 1) {
    cfg.d_emb = 4;
    cfg.heads = heads;
    cfg.neighbors = 10;
    std::mt19937_64 rng(seed);
    add_embedding_parameters(params, dims, cfg, rng);
    params.at("time.phase") = testutil::random_matrix(1, 3, rng);
    for (const char* b : {"attn1.ffn_b1", "attn1.ffn_b2"}) params.at(b) = testutil::random_matrix(1, 4, rng, 0.3);
    for (NodeId n = 0; n < 8; ++n) mem.set(n, testutil::random_matrix(1, 4, rng).row(0), 0.0);
    const NodeId partners[] = {4, 5, 6, 4, 7};
    for (std::size_t i = 0; i < 5; ++i) {
      const Event e{i, i < 3 ? 0u : 1u, partners[i], 1.0 + double(i), testutil::random_matrix(1, 2, rng).values()};
      adj.insert(e);
      log.push_back(e);
    }
  }

  EmbeddingVector attention(NodeId n, double t) const { return attention_embed(n, t, mem, adj, params, dims, cfg); }
};

std::vector<double> affine_row(const std::vector<double>& x, const Matrix& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t j = 0; j < w.cols(); ++j)
    for (std::size_t k = 0; k < x.size(); ++k) out[j] += x[k] * w(k, j);
  return out;
}

std::vector<double> concat(std::initializer_list<std::vector<double>> parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> state_of(const MemoryTable& m, NodeId n) {
  const auto s = m.state(n);
  return {s.begin(), s.end()};
}

}  // namespace

TEST(TimeEncoding, Examples) {
  const TimeEncoder zero_phase{{1.0, 0.5, 0.1}, {0.0, 0.0, 0.0}};
  EXPECT_EQ(time_encode(zero_phase, 0.0), (std::vector<double>{1, 1, 1}));
  const TimeEncoder flat{{0.0, 0.0}, {0.3, -1.0}};
  EXPECT_EQ(time_encode(flat, 5.0), time_encode(flat, 1234.5));
  std::mt19937_64 rng(2);
  const Matrix f = testutil::random_matrix(1, 5, rng), ph = testutil::random_matrix(1, 5, rng);
  const TimeEncoder enc{f.values(), ph.values()};
  const auto out = time_encode(enc, 2.5);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out[j], std::cos(f[j] * 2.5 + ph[j]));
  const auto ladder = geometric_frequencies(4);
  EXPECT_EQ(ladder[0], 1.0);
  EXPECT_NEAR(ladder[2], 1e-2, 1e-18);
}

TEST(TimeEncoding, TapeFormAgreesAndPassesFiniteDifferences) {
  std::mt19937_64 rng(3);
  ParameterStore s;
  s.add("time.freq", testutil::random_matrix(1, 6, rng));
  s.add("time.phase", testutil::random_matrix(1, 6, rng));
  const Matrix dt = Matrix::from_rows({{0.0}, {2.5}, {-1.0}, {7.25}});
  ad::Tape t;
  BoundParams p(t, s, false);
  const Matrix& rows = time_encode(p, dt).value();
  const TimeEncoder enc = TimeEncoder::from(s);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto v = time_encode(enc, dt(r, 0));
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(rows(r, j), v[j]);
  }
  const auto report = gradient_check(
      s, [&](ad::Tape&, const BoundParams& bp) { return ad::sum(ad::mul(time_encode(bp, dt), time_encode(bp, dt))); },
      12, 1e-5, 4);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Embedding, NoNeighborsZeroWeightsGivesOutputBias) {
  Fixture f;
  for (auto& [name, m] : f.params.arrays())
    if (name.rfind("attn1.", 0) == 0 && name != "attn1.ffn_b2") std::fill(m.values().begin(), m.values().end(), 0.0);
  const auto e = f.attention(3, 50.0);  // node 3 has no history
  EXPECT_EQ(e.values, f.params.at("attn1.ffn_b2").values());
}

TEST(Embedding, ThreeNeighborsMatchStraightLineOracle) {
  Fixture f;
  const double t = 10.0;
  const auto& P = f.params;
  const TimeEncoder enc = TimeEncoder::from(P);
  const auto h0 = state_of(f.mem, 0);
  const auto q = affine_row(concat({h0, time_encode(enc, 0.0)}), P.at("attn1.wq"));
  std::vector<std::vector<double>> keys, vals;
  for (std::size_t i = 0; i < 3; ++i) {
    const Event& e = f.log[i];
    const auto in = concat({state_of(f.mem, e.destination), e.features, time_encode(enc, t - e.timestamp)});
    keys.push_back(affine_row(in, P.at("attn1.wk")));
    vals.push_back(affine_row(in, P.at("attn1.wv")));
  }
  std::vector<double> score(3), att(4, 0.0);
  double mx = -1e300, z = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    score[j] = 0.0;
    for (std::size_t c = 0; c < 4; ++c) score[j] += q[c] * keys[j][c];
    score[j] /= 2.0;
    mx = std::max(mx, score[j]);
  }
  for (double& s : score) z += (s = std::exp(s - mx));
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 4; ++c) att[c] += score[j] / z * vals[j][c];
  auto hidden = affine_row(concat({att, h0}), P.at("attn1.ffn_w1"));
  for (std::size_t c = 0; c < 4; ++c) hidden[c] = std::tanh(hidden[c] + P.at("attn1.ffn_b1")[c]);
  auto out = affine_row(hidden, P.at("attn1.ffn_w2"));
  for (std::size_t c = 0; c < 4; ++c) out[c] += P.at("attn1.ffn_b2")[c];

  const auto got = f.attention(0, t);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(got.values[c], out[c], 1e-12);
}

TEST(Embedding, AttentionWeightsSumToOneAndSingleNeighborGetsAll) {
  Fixture f(2);
  ad::Tape tape;
  BoundParams p(tape, f.params, false);
  EmbeddingContext ctx(p, f.mem, f.adj, f.dims, f.cfg);
  const std::vector<EmbeddingRequest> req{{0, 10.0}, {1, 4.5}, {3, 10.0}};
  std::vector<double> w;
  std::vector<std::size_t> off;
  ctx.attention(req, &w, &off);
  EXPECT_EQ(off, (std::vector<std::size_t>{0, 3, 4, 4}));
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_NEAR(w[0 * 2 + h] + w[1 * 2 + h] + w[2 * 2 + h], 1.0, 1e-12);
    EXPECT_EQ(w[3 * 2 + h], 1.0);  // node 1 at t=4.5 sees only its t=4 event
  }
}

TEST(Embedding, BatchRowsEqualSingleRequests) {
  Fixture f(2);
  ad::Tape tape;
  BoundParams p(tape, f.params, false);
  EmbeddingContext ctx(p, f.mem, f.adj, f.dims, f.cfg);
  const std::vector<EmbeddingRequest> req{{0, 10.0}, {1, 4.5}, {3, 10.0}, {4, 2.5}};
  const Matrix& rows = ctx.attention(req).value();
  for (std::size_t i = 0; i < req.size(); ++i) {
    const auto single = f.attention(req[i].node, req[i].time).values;
    EXPECT_TRUE(std::equal(single.begin(), single.end(), rows.row(i).begin()));
  }
}

TEST(Embedding, CausalityIgnoresLaterEvents) {
  Fixture f;
  const auto before = f.attention(0, 2.5);
  TemporalAdjacency truncated(8, 2);
  for (const auto& e : f.log)
    if (e.timestamp < 2.5) truncated.insert(e);
  const auto cut = attention_embed(0, 2.5, f.mem, truncated, f.params, f.dims, f.cfg);
  EXPECT_EQ(before.values, cut.values);
}

TEST(Embedding, StaleNodeIsSelfPlusSimilarPlusAttention) {
  Fixture f;
  SimilarityConfig sim;
  sim.backend = KnnBackend::brute_force;
  SimilarityIndex index(collect_candidates(f.mem), sim);
  const std::vector<Event> batch{{10, 0, 4, 12.0, {0.0, 0.0}}, {11, 1, 5, 13.0, {0.0, 0.0}}};
  const std::vector<NodeId> negatives{6, 7};
  StalenessReport report;
  report.stale_set = {0};
  const auto out = embed_batch(batch, negatives, f.mem, f.adj, f.params, f.dims, f.cfg, report, &index, sim);

  const auto nn = index.query(f.mem.state(0), 1, {0});
  ASSERT_EQ(nn.size(), 1u);
  const auto s = state_of(f.mem, 0);
  const auto v = f.attention(nn[0].id, 12.0).values;
  const auto g = f.attention(0, 12.0).values;
  const auto& got = out.at(0).values;
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(got[c], (s[c] + v[c]) + g[c]) << c;
  for (NodeId n : {1u, 4u, 5u, 6u, 7u}) EXPECT_EQ(out.at(n).values, f.attention(n, out.at(n).at_time).values);
  EXPECT_EQ(out.at(5).at_time, 13.0);
}

TEST(Embedding, SumMeanAndMemoryModes) {
  Fixture f;
  SimilarityConfig sim;
  sim.k = 2;
  SimilarityIndex index(collect_candidates(f.mem), sim);
  const std::vector<Event> batch{{10, 0, 4, 12.0, {0.0, 0.0}}};
  StalenessReport report;
  report.stale_set = {0};
  const auto nn = index.query(f.mem.state(0), 2, {0});
  ASSERT_EQ(nn.size(), 2u);
  const auto s = state_of(f.mem, 0);
  const auto g = f.attention(0, 12.0).values;

  auto run = [&](SimilarMode mode, Combine combine) {
    EmbeddingConfig cfg = f.cfg;
    cfg.similar_mode = mode;
    cfg.combine = combine;
    return embed_batch(batch, {}, f.mem, f.adj, f.params, f.dims, cfg, report, &index, sim).at(0).values;
  };
  const auto a0 = f.attention(nn[0].id, 12.0).values, a1 = f.attention(nn[1].id, 12.0).values;
  const auto m0 = state_of(f.mem, nn[0].id), m1 = state_of(f.mem, nn[1].id);
  const auto sum_att = run(SimilarMode::attention, Combine::sum);
  const auto mean_att = run(SimilarMode::attention, Combine::mean);
  const auto sum_mem = run(SimilarMode::memory, Combine::sum);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(sum_att[c], (s[c] + (a0[c] + a1[c])) + g[c]);
    EXPECT_EQ(mean_att[c], (s[c] + (a0[c] + a1[c]) * 0.5) + g[c]);
    EXPECT_EQ(sum_mem[c], (s[c] + (m0[c] + m1[c])) + g[c]);
  }
}

TEST(Embedding, EmptyStaleSetOrEmptyIndexFallsBackToAttention) {
  Fixture f;
  const std::vector<Event> batch{{10, 0, 4, 12.0, {0.0, 0.0}}};
  SimilarityConfig sim;
  StalenessReport none;
  const auto plain = embed_batch(batch, {}, f.mem, f.adj, f.params, f.dims, f.cfg, none, nullptr, sim);
  StalenessReport stale;
  stale.stale_set = {0};
  const auto skipped = embed_batch(batch, {}, f.mem, f.adj, f.params, f.dims, f.cfg, stale, nullptr, sim);
  SimilarityIndex empty(CandidateSet{}, sim);
  const auto skipped2 = embed_batch(batch, {}, f.mem, f.adj, f.params, f.dims, f.cfg, stale, &empty, sim);
  for (NodeId n : {0u, 4u}) {
    EXPECT_EQ(plain.at(n).values, f.attention(n, 12.0).values);
    EXPECT_EQ(skipped.at(n).values, plain.at(n).values);
    EXPECT_EQ(skipped2.at(n).values, plain.at(n).values);
  }
}

TEST(Embedding, SelfMapUsedWhenWidthsDiffer) {
  ModelDims dims{4, 3, 0};
  EmbeddingConfig cfg;
  cfg.d_emb = 6;
  ParameterStore params;
  std::mt19937_64 rng(5);
  add_embedding_parameters(params, dims, cfg, rng);
  EXPECT_TRUE(params.contains("self_map"));
  EXPECT_EQ(params.at("self_map").rows(), 4u);
  EXPECT_EQ(params.at("self_map").cols(), 6u);
  EmbeddingConfig bad;
  bad.d_emb = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Embedding, TwoLayerPassesFiniteDifferences) {
  Fixture f(2);
  f.cfg.layers = 2;
  ParameterStore params;
  std::mt19937_64 rng(7);
  add_embedding_parameters(params, f.dims, f.cfg, rng);
  const std::vector<EmbeddingRequest> req{{0, 10.0}, {1, 10.0}, {4, 10.0}};
  const auto report = gradient_check(
      params,
      [&](ad::Tape&, const BoundParams& p) {
        EmbeddingContext ctx(p, f.mem, f.adj, f.dims, f.cfg);
        auto e = ctx.attention(req);
        return ad::sum(ad::mul(e, e));
      },
      200, 1e-5, 8);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}
