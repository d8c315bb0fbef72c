#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "stalegraph/errors.hpp"
#include "stalegraph/memory.hpp"
#include "stalegraph/time_encoder.hpp"
#include "test_util.hpp"

using namespace stalegraph;

namespace {

RawMessage bare(NodeId target, double t, std::size_t pos = 0) {
  RawMessage m;
  m.target = target;
  m.timestamp = t;
  m.event_pos = pos;
  return m;
}

ParameterStore gru_params(std::size_t in, std::size_t d, std::size_t d_time, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  ParameterStore s;
  s.add("gru.w_ih", testutil::random_matrix(in, 3 * d, rng, scale));
  s.add("gru.w_hh", testutil::random_matrix(d, 3 * d, rng, scale));
  s.add("gru.b_ih", testutil::random_matrix(1, 3 * d, rng, scale));
  s.add("gru.b_hh", testutil::random_matrix(1, 3 * d, rng, scale));
  s.add("time.freq", testutil::random_matrix(1, d_time, rng));
  s.add("time.phase", testutil::random_matrix(1, d_time, rng));
  return s;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Element-by-element GRU, written independently of the tape.
std::vector<double> scalar_gru(const ParameterStore& s, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t d = h.size();
  const Matrix &wi = s.at("gru.w_ih"), &wh = s.at("gru.w_hh"), &bi = s.at("gru.b_ih"), &bh = s.at("gru.b_hh");
  auto lin_i = [&](std::size_t col) {
    double acc = bi(0, col);
    for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * wi(k, col);
    return acc;
  };
  auto lin_h = [&](std::size_t col) {
    double acc = bh(0, col);
    for (std::size_t k = 0; k < d; ++k) acc += h[k] * wh(k, col);
    return acc;
  };
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double r = sigm(lin_i(j) + lin_h(j));
    const double z = sigm(lin_i(d + j) + lin_h(d + j));
    const double n = std::tanh(lin_i(2 * d + j) + r * lin_h(2 * d + j));
    out[j] = (1 - z) * n + z * h[j];
  }
  return out;
}

}  // namespace

TEST(Memory, FreshTableIsZeroAndUninitialized) {
  MemoryTable m(5, 3);
  for (NodeId n = 0; n < 5; ++n) {
    EXPECT_FALSE(is_initialized(m, n));
    EXPECT_EQ(m.last_update(n), kNeverUpdated);
    for (double v : m.state(n)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Memory, ZeroMemoryMessagePayload) {
  MemoryTable m(2, 2);
  TimeEncoder enc{{1.0, 0.1}, {0.0, 0.0}};
  const auto [src, dst] = compute_messages(m, {0, 0, 1, 7.0, {}}, enc);
  EXPECT_EQ(src.payload, (std::vector<double>{0, 0, 0, 0, 1, 1}));
  EXPECT_EQ(src.delta_t, 0.0);
  EXPECT_EQ(dst.target, 1u);
  EXPECT_EQ(src.payload.size(), 2 * 2 + 2 + 0u);
}

TEST(Memory, MessageUsesDeltaSinceLastUpdate) {
  MemoryTable m(2, 2);
  const std::vector<double> s{0.5, -0.5};
  m.set(0, s, 3.0);
  TimeEncoder enc{{1.0, 0.25}, {0.1, 0.2}};
  const auto [src, dst] = compute_messages(m, {0, 0, 1, 5.0, {}}, enc);
  EXPECT_EQ(src.delta_t, 2.0);
  EXPECT_EQ(src.payload[4], std::cos(1.0 * 2.0 + 0.1));
  EXPECT_EQ(src.payload[5], std::cos(0.25 * 2.0 + 0.2));
  EXPECT_EQ(dst.delta_t, 0.0);  // destination never updated
}

TEST(Memory, MessagePayloadEqualsConcatenatedPieces) {
  std::mt19937_64 rng(3);
  MemoryTable m(4, 3);
  const Matrix a = testutil::random_matrix(1, 3, rng), b = testutil::random_matrix(1, 3, rng);
  m.set(1, a.row(0), 1.0);
  m.set(2, b.row(0), 2.0);
  TimeEncoder enc{{0.3, 0.7}, {0.5, -0.1}};
  const Event e{9, 1, 2, 4.5, {0.25, -2.0}};
  const auto [src, dst] = compute_messages(m, e, enc, 6);
  std::vector<double> expect(a.values());
  expect.insert(expect.end(), b.values().begin(), b.values().end());
  for (double v : time_encode(enc, 3.5)) expect.push_back(v);
  expect.insert(expect.end(), e.features.begin(), e.features.end());
  EXPECT_EQ(src.payload, expect);
  EXPECT_EQ(src.event_pos, 6u);
  EXPECT_EQ(dst.self_state, b.values());
  EXPECT_EQ(dst.other_state, a.values());
  EXPECT_EQ(dst.delta_t, 2.5);
}

TEST(Memory, AggregateKeepsLatestPerNode) {
  std::vector<RawMessage> msgs(3);
  msgs[0] = bare(4, 1.0, 0);
  msgs[1] = bare(4, 4.0, 1);
  msgs[2] = bare(4, 2.0, 2);
  const auto out = aggregate_messages(msgs);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].timestamp, 4.0);
  const auto single = aggregate_messages(std::span<const RawMessage>(msgs.data(), 1));
  EXPECT_EQ(single[0], msgs[0]);
}

TEST(Memory, AggregateMatchesBruteForceGrouping) {
  std::mt19937_64 rng(8);
  std::vector<RawMessage> msgs;
  for (std::size_t i = 0; i < 300; ++i)
    {
      const NodeId target = rng() % 20;
      const double t = double(rng() % 10);
      msgs.push_back(bare(target, t, i / 2));
    }
  std::map<NodeId, RawMessage> best;
  for (const auto& m : msgs) {
    auto it = best.find(m.target);
    if (it == best.end() || std::pair(m.timestamp, m.event_pos) >= std::pair(it->second.timestamp, it->second.event_pos))
      best[m.target] = m;
  }
  const auto out = aggregate_messages(msgs);
  ASSERT_EQ(out.size(), best.size());
  std::size_t i = 0;
  for (const auto& [node, m] : best) EXPECT_EQ(out[i++], m) << node;
}

TEST(Memory, ZeroWeightGruHalvesState) {
  ParameterStore s;
  s.add("gru.w_ih", Matrix(2 * 2 + 3, 6));
  s.add("gru.w_hh", Matrix(2, 6));
  s.add("gru.b_ih", Matrix(1, 6));
  s.add("gru.b_hh", Matrix(1, 6));
  s.add("time.freq", Matrix(1, 3, 1.0));
  s.add("time.phase", Matrix(1, 3));
  MemoryTable m(2, 2);
  const std::vector<double> old{0.8, -0.4};
  m.set(0, old, 1.0);
  const TimeEncoder enc = TimeEncoder::from(s);
  const auto [src, dst] = compute_messages(m, {0, 0, 1, 9.0, {}}, enc);
  update_memory(m, 0, src, s);
  EXPECT_EQ(m.state(0)[0], 0.4);
  EXPECT_EQ(m.state(0)[1], -0.2);
  EXPECT_EQ(m.last_update(0), 9.0);
  EXPECT_FALSE(m.is_initialized(1));  // locality
}

TEST(Memory, GruMatchesScalarOracle) {
  const std::size_t d = 3, dt = 2, de = 1, in = 2 * d + dt + de;
  const ParameterStore s = gru_params(in, d, dt, 12);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = testutil::random_matrix(1, in, rng), h = testutil::random_matrix(1, d, rng);
    ad::Tape t;
    BoundParams p(t, s, false);
    const Matrix& got = gru_cell(p, t.constant(x), t.constant(h)).value();
    const auto expect = scalar_gru(s, x.values(), h.values());
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(got(0, j), expect[j], 1e-14);
  }
}

TEST(Memory, GruPassesFiniteDifferences) {
  const std::size_t d = 4, in = 7;
  ParameterStore s = gru_params(in, d, 2, 14);
  std::mt19937_64 rng(15);
  s.add("x", testutil::random_matrix(3, in, rng));
  s.add("h", testutil::random_matrix(3, d, rng));
  const auto report = gradient_check(
      s, [](ad::Tape&, const BoundParams& p) { return ad::sum(ad::tanh(gru_cell(p, p["x"], p["h"]))); }, 200, 1e-5, 3);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}

TEST(Memory, UpdateErrors) {
  const ParameterStore s = gru_params(2 * 2 + 2, 2, 2, 1);
  MemoryTable m(2, 2);
  m.set(0, std::vector<double>{1, 1}, 5.0);
  RawMessage late = bare(0, 4.0);
  late.self_state = {1, 1};
  late.other_state = {0, 0};
  late.payload = {1, 1, 0, 0, 1, 1};
  EXPECT_THROW(update_memory(m, 0, late, s), OrderingError);
  RawMessage bad = late;
  bad.timestamp = 6.0;
  bad.payload[2] = std::nan("");
  EXPECT_THROW(update_memory(m, 0, bad, s), NumericError);
  EXPECT_THROW(compute_messages(m, {0, 0, 1, 4.0, {}}, TimeEncoder::from(s)), OrderingError);
}

TEST(Memory, LastUpdateTracksLatestEventAndInitializedSet) {
  const auto stream = testutil::small_stream(600, 3);
  auto st = init_engine(testutil::small_engine(stream.d_edge), stream.num_sources, stream.num_destinations);
  testutil::replay_frozen(st, stream, 60);
  std::map<NodeId, double> last;
  for (const auto& e : stream.events) last[e.source] = last[e.destination] = e.timestamp;
  for (NodeId n = 0; n < stream.num_nodes(); ++n) {
    const auto it = last.find(n);
    EXPECT_EQ(st.memory.is_initialized(n), it != last.end());
    if (it != last.end()) EXPECT_EQ(st.memory.last_update(n), it->second);
    else
      for (double v : st.memory.state(n)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Memory, RefreshReproducesStoredRowsBitwise) {
  const auto stream = testutil::small_stream(100, 4);
  auto st = init_engine(testutil::small_engine(stream.d_edge), stream.num_sources, stream.num_destinations);
  testutil::replay_frozen(st, stream, 4);
  ASSERT_FALSE(st.memory.pending().empty());
  ad::Tape t;
  BoundParams p(t, st.params, true);
  const Matrix& rows = refresh_pending(p, st.memory).value();
  for (std::size_t i = 0; i < st.memory.pending().size(); ++i) {
    const auto stored = st.memory.state(st.memory.pending()[i].target);
    for (std::size_t j = 0; j < stored.size(); ++j) EXPECT_EQ(rows(i, j), stored[j]);
  }
}
