#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stalegraph/errors.hpp"
#include "stalegraph/model.hpp"
#include "test_util.hpp"

using namespace stalegraph;

namespace {

/// Stream where every event has a fresh source, so no source ever has history.
EventStream fresh_source_stream(std::size_t n) {
  EventStream s;
  s.num_sources = n;
  s.num_destinations = 5;
  s.d_edge = 1;
  for (std::size_t i = 0; i < n; ++i) s.events.push_back({i, i, n + i % 5, double(i) * 0.5, {double(i % 3)}});
  return s;
}

/// Engine advanced by a few trained batches so memory, pending rows and staleness are all non-trivial.
EngineState warmed_engine(const EventStream& s, double alpha, std::size_t batches) {
  EngineConfig cfg = testutil::small_engine(s.d_edge, 3);
  cfg.staleness.alpha = alpha;
  auto st = init_engine(cfg, s.num_sources, s.num_destinations);
  std::size_t b = 0;
  for (auto batch : batch_iter(s, cfg.train.batch_size)) {
    if (b++ == batches) break;
    process_batch(st, batch, BatchMode::train, st.negative_rng);
  }
  return st;
}

}  // namespace

TEST(Decoder, ZeroWeightsGiveHalf) {
  ParameterStore p;
  p.add("decoder.w1", Matrix(6, 3));
  p.add("decoder.b1", Matrix(1, 3));
  p.add("decoder.w2", Matrix(3, 1));
  p.add("decoder.b2", Matrix(1, 1));
  EXPECT_EQ(decode_link({{1, 2, 3}}, {{-4, 5, 0.5}}, p), 0.5);
}

TEST(Decoder, MatchesStraightLineArithmetic) {
  std::mt19937_64 rng(1);
  ParameterStore p;
  p.add("decoder.w1", testutil::random_matrix(4, 3, rng));
  p.add("decoder.b1", testutil::random_matrix(1, 3, rng));
  p.add("decoder.w2", testutil::random_matrix(3, 1, rng));
  p.add("decoder.b2", testutil::random_matrix(1, 1, rng));
  const EmbeddingVector a{{0.3, -1.2}}, b{{0.7, 0.1}};
  const double x[4] = {0.3, -1.2, 0.7, 0.1};
  double logit = p.at("decoder.b2")[0];
  for (std::size_t j = 0; j < 3; ++j) {
    double h = p.at("decoder.b1")[j];
    for (std::size_t k = 0; k < 4; ++k) h += x[k] * p.at("decoder.w1")(k, j);
    logit += std::tanh(h) * p.at("decoder.w2")(j, 0);
  }
  const double prob = decode_link(a, b, p);
  EXPECT_NEAR(prob, 1.0 / (1.0 + std::exp(-logit)), 1e-14);
  EXPECT_GT(prob, 0.0);
  EXPECT_LT(prob, 1.0);
  EXPECT_EQ(prob, decode_link(a, b, p));
  EXPECT_THROW(decode_link(a, {{1.0}}, p), ConfigError);
}

TEST(Decoder, PassesFiniteDifferences) {
  std::mt19937_64 rng(2);
  ParameterStore p;
  p.add("decoder.w1", testutil::random_matrix(8, 4, rng));
  p.add("decoder.b1", testutil::random_matrix(1, 4, rng));
  p.add("decoder.w2", testutil::random_matrix(4, 1, rng));
  p.add("decoder.b2", testutil::random_matrix(1, 1, rng));
  p.add("src", testutil::random_matrix(5, 4, rng));
  p.add("dst", testutil::random_matrix(5, 4, rng));
  const auto report = gradient_check(
      p,
      [](ad::Tape&, const BoundParams& bp) {
        return ad::bce_with_logits(decode_logits(bp, bp["src"], bp["dst"]), {1, 0, 1, 0, 0});
      },
      200, 1e-5, 5);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(NegativeSampling, TwoDestinationsIsForced) {
  std::vector<Event> batch;
  for (std::size_t i = 0; i < 50; ++i) batch.push_back({i, 0, 3, double(i), {}});
  std::mt19937_64 rng(1);
  for (NodeId n : sample_negatives(batch, 3, 2, 1, rng)) EXPECT_EQ(n, 4u);
  EXPECT_THROW(sample_negatives(batch, 3, 1, 1, rng), ConfigError);
}

TEST(NegativeSampling, DeterministicAndUniform) {
  std::vector<Event> batch;
  for (std::size_t i = 0; i < 10000; ++i) batch.push_back({i, 0, 100 + 10, double(i), {}});  // true dst outside range
  std::mt19937_64 r1(5), r2(5);
  const auto a = sample_negatives(batch, 100, 10, 1, r1);
  EXPECT_EQ(a, sample_negatives(batch, 100, 10, 1, r2));
  std::vector<double> count(10, 0.0);
  for (NodeId n : a) count.at(n - 100) += 1.0;
  const double expect = 1000.0, sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (double c : count) EXPECT_LT(std::abs(c - expect), 3 * sigma);
  std::mt19937_64 r3(5);
  const auto multi = sample_negatives(std::span<const Event>(batch).first(4), 100, 10, 3, r3);
  EXPECT_EQ(multi.size(), 12u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParameterStore p;
  p.add("x", Matrix::from_rows({{1.5, -2.0}}));
  AdamState st;
  adam_step(p, {{"x", Matrix(1, 2)}}, st, {});
  EXPECT_EQ(p.at("x"), Matrix::from_rows({{1.5, -2.0}}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore p;
  p.add("x", Matrix(1, 1, 0.0));
  AdamState st;
  AdamConfig cfg;
  adam_step(p, {{"x", Matrix(1, 1, 1.0)}}, st, cfg);
  EXPECT_NEAR(p.at("x")[0], -cfg.learning_rate / (1.0 + cfg.epsilon), 1e-18);
}

TEST(Adam, MinimisesSquare) {
  ParameterStore p;
  p.add("x", Matrix(1, 1, 1.0));
  AdamState st;
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  for (int i = 0; i < 100; ++i) adam_step(p, {{"x", Matrix(1, 1, 2.0 * p.at("x")[0])}}, st, cfg);
  EXPECT_LT(std::abs(p.at("x")[0]), 0.1);
}

TEST(Training, ZeroLearningRateKeepsParametersButUpdatesMemory) {
  const auto s = testutil::small_stream(200, 2);
  EngineConfig cfg = testutil::small_engine(s.d_edge);
  cfg.train.adam.learning_rate = 0.0;
  auto st = init_engine(cfg, s.num_sources, s.num_destinations);
  const auto before = st.params.arrays();
  train_epoch(st, s, 1);
  EXPECT_EQ(st.params.arrays(), before);
  for (const auto& e : s.events) EXPECT_TRUE(st.memory.is_initialized(e.source));
  EXPECT_EQ(st.memory.last_update(s.events.back().source), s.events.back().timestamp);
}

TEST(Training, NoHistoryMeansStalenessIsInert) {
  const auto s = fresh_source_stream(120);
  EngineConfig on = testutil::small_engine(s.d_edge);
  EngineConfig off = on;
  off.staleness.enabled = false;
  auto a = init_engine(on, s.num_sources, s.num_destinations);
  auto b = init_engine(off, s.num_sources, s.num_destinations);
  const auto ea = train_epoch(a, s, 1), eb = train_epoch(b, s, 1);
  EXPECT_EQ(ea.stale_nodes, 0u);
  EXPECT_EQ(ea.batch_losses, eb.batch_losses);
  EXPECT_EQ(a.params.arrays(), b.params.arrays());
}

TEST(Training, LossDecreasesOverFirstEpochs) {
  SynthConfig sc;
  sc.num_communities = 4;
  sc.num_events = 2000;
  sc.seed = 11;
  const auto s = generate_synthetic(sc);
  EngineConfig cfg;
  cfg.dims.d_edge = s.d_edge;
  cfg.train.seed = 4;
  auto st = init_engine(cfg, s.num_sources, s.num_destinations);
  double prev = 1e300;
  for (std::size_t e = 1; e <= 5; ++e) {
    const double loss = train_epoch(st, s, e).mean_loss;
    EXPECT_LT(loss, prev) << "epoch " << e;
    prev = loss;
  }
}

TEST(Training, FixedSeedsGiveIdenticalTrajectories) {
  const auto s = testutil::small_stream(300, 9);
  EngineConfig cfg = testutil::small_engine(s.d_edge);
  cfg.staleness.alpha = 0.3;
  auto a = init_engine(cfg, s.num_sources, s.num_destinations);
  auto b = init_engine(cfg, s.num_sources, s.num_destinations);
  for (std::size_t e = 1; e <= 2; ++e) EXPECT_EQ(train_epoch(a, s, e).batch_losses, train_epoch(b, s, e).batch_losses);
}

TEST(Training, PredictionsDoNotSeeTheirOwnBatch) {
  const auto s = testutil::small_stream(150, 12);
  EngineConfig cfg = testutil::small_engine(s.d_edge);
  cfg.staleness.alpha = 0.3;
  auto base = init_engine(cfg, s.num_sources, s.num_destinations);
  train_epoch(base, s, 1);  // trained parameters, then replay with them frozen
  auto one_pass = base;
  reset_stream_state(one_pass);
  const auto full = replay(one_pass, s, 42);
  const auto batches = batch_iter(s, cfg.train.batch_size);
  std::size_t pos = 0;
  std::mt19937_64 rng(42);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    // Second pass: rebuild the state from the prefix only, then score batch b.
    auto prefix = base;
    reset_stream_state(prefix);
    std::mt19937_64 prefix_rng(42);
    for (std::size_t i = 0; i < b; ++i) process_batch(prefix, batches[i], BatchMode::eval, prefix_rng);
    const auto out = process_batch(prefix, batches[b], BatchMode::eval, prefix_rng);
    for (double p : out.pos_scores) EXPECT_EQ(p, full.pos[pos++]);
  }
  (void)rng;
}

TEST(Training, NonFiniteLossAbortsWithDiagnostic) {
  const auto s = testutil::small_stream(40, 1);
  auto st = init_engine(testutil::small_engine(s.d_edge), s.num_sources, s.num_destinations);
  st.params.at("decoder.b2")[0] = std::nan("");
  try {
    train_epoch(st, s, 1);
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch 0"), std::string::npos);
    EXPECT_NE(msg.find("decoder.w1="), std::string::npos);
  }
}

TEST(Training, EndToEndBatchLossPassesFiniteDifferences) {
  const auto s = testutil::small_stream(200, 14);
  auto st = warmed_engine(s, 0.4, 6);
  const std::span<const Event> batch(s.events.data() + 60, 10);
  const auto report = staleness_report(batch, st.memory, st.cfg.staleness);
  ASSERT_FALSE(report.stale_set.empty());
  const auto* index = prepare_index(st, report);
  std::mt19937_64 rng(3);
  const auto negatives = sample_negatives(batch, st.num_sources, st.num_destinations, 1, rng);
  std::size_t augmented = 0;
  const auto g = gradient_check(
      st.params,
      [&](ad::Tape&, const BoundParams& p) {
        return batch_loss(p, st, batch, negatives, report, index, nullptr, nullptr, &augmented);
      },
      300, 1e-5, 21);
  EXPECT_GT(augmented, 0u);
  EXPECT_LT(g.max_rel_error, 1e-4) << g.worst_param << "[" << g.worst_index << "]";
  // The memory updater receives gradient through the pending refresh.
  ad::Tape t;
  BoundParams p(t, st.params, true);
  t.backward(batch_loss(p, st, batch, negatives, report, index));
  double gru_norm = 0.0;
  for (double v : p.gradients().at("gru.w_ih").values()) gru_norm += v * v;
  EXPECT_GT(gru_norm, 0.0);
}

TEST(Training, EpochLineFormat) {
  EpochStats e;
  e.epoch = 3;
  e.mean_loss = 0.5;
  e.stale_nodes = 1;
  e.scored_nodes = 4;
  e.wall_seconds = 1.5;
  EXPECT_EQ(format_epoch_line(e), "epoch=3 mean_loss=0.5 stale_fraction=0.25 wall_seconds=1.5");
  StalenessReport r;
  r.deltas = {{1, 2.0}};
  EXPECT_EQ(format_staleness_line(7, r), "batch=7 n=1 threshold=none stale=0");
}
