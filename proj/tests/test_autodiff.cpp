#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stalegraph/autodiff.hpp"
#include "stalegraph/errors.hpp"
#include "stalegraph/params.hpp"
#include "test_util.hpp"

using namespace stalegraph;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

ParameterStore store_with(std::initializer_list<std::pair<const char*, Matrix>> arrays) {
  ParameterStore s;
  for (const auto& [name, m] : arrays) s.add(name, m);
  return s;
}

void expect_gradients(ParameterStore& params, const LossBuilder& loss, std::size_t probes = 60) {
  const auto report = gradient_check(params, loss, probes, kStep, 17);
  EXPECT_LT(report.max_rel_error, kTol) << "worst " << report.worst_param << "[" << report.worst_index
                                        << "] analytic=" << report.worst_analytic
                                        << " numeric=" << report.worst_numeric;
}

}  // namespace

TEST(Autodiff, ProductRule) {
  ad::Tape t;
  auto x = t.variable(Matrix(1, 1, 2.0));
  auto y = t.variable(Matrix(1, 1, 3.0));
  t.backward(ad::mul(x, y));
  EXPECT_EQ(t.grad(x)(0, 0), 3.0);
  EXPECT_EQ(t.grad(y)(0, 0), 2.0);
}

TEST(Autodiff, ConstantLossGivesZeroGradients) {
  ad::Tape t;
  auto x = t.variable(Matrix(2, 2, 1.0));
  auto c = t.constant(Matrix(1, 1, 4.0));
  t.backward(c);
  EXPECT_EQ(t.grad(x), Matrix(2, 2));
}

TEST(Autodiff, NonScalarLossIsUsageError) {
  ad::Tape t;
  auto x = t.variable(Matrix(2, 1, 1.0));
  EXPECT_THROW(t.backward(x), UsageError);
}

TEST(Autodiff, UnusedVariableGetsZeroGradient) {
  ad::Tape t;
  auto x = t.variable(Matrix(1, 3, 1.0));
  auto unused = t.variable(Matrix(2, 2, 5.0));
  t.backward(ad::sum(x));
  EXPECT_EQ(t.grad(x), Matrix(1, 3, 1.0));
  EXPECT_EQ(t.grad(unused), Matrix(2, 2));
}

TEST(Autodiff, FanOutAccumulates) {
  ad::Tape t;
  auto x = t.variable(Matrix(1, 1, 3.0));
  t.backward(ad::add(ad::mul(x, x), x));  // x^2 + x
  EXPECT_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Autodiff, ElementwiseOpsPassFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto params = store_with({{"a", testutil::random_matrix(3, 4, rng)}, {"b", testutil::random_matrix(3, 4, rng)}});
  expect_gradients(params, [](ad::Tape&, const BoundParams& p) {
    auto s = ad::sigmoid(ad::mul(p["a"], p["b"]));
    auto u = ad::tanh(ad::sub(p["a"], ad::affine(p["b"], 0.5, 0.25)));
    auto c = ad::cos(ad::add(s, u));
    return ad::sum(ad::mul(c, c));
  });
}

TEST(Autodiff, MatrixOpsPassFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto params = store_with({{"x", testutil::random_matrix(4, 3, rng)},
                            {"w", testutil::random_matrix(3, 5, rng)},
                            {"b", testutil::random_matrix(1, 5, rng)},
                            {"y", testutil::random_matrix(4, 2, rng)}});
  expect_gradients(params, [](ad::Tape&, const BoundParams& p) {
    auto h = ad::tanh(ad::add_row(ad::matmul(p["x"], p["w"]), p["b"]));
    const ad::Var cols[] = {h, p["y"]};
    auto cat = ad::concat_cols(cols);
    auto sl = ad::slice_cols(cat, 2, 6);
    const ad::Var rows[] = {sl, sl};
    auto stacked = ad::concat_rows(rows);
    auto g = ad::gather_rows(stacked, {0, 7, 3, 3, 5});
    auto seg = ad::segment_sum(g, {0, 2, 2, 5});
    auto sc = ad::scale_rows(seg, {0.5, 2.0, -1.0});
    auto sm = ad::softmax_rows(sc);
    return ad::sum(ad::mul(sm, sc));
  });
}

TEST(Autodiff, SegmentSumEmptySegmentIsZeroRow) {
  ad::Tape t;
  auto a = t.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  auto s = ad::segment_sum(a, {0, 0, 2});
  EXPECT_EQ(s.value(), Matrix::from_rows({{0, 0}, {4, 6}}));
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(6);
  ad::Tape t;
  auto s = ad::softmax_rows(t.constant(testutil::random_matrix(5, 7, rng, 50.0)));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (double v : s.value().row(r)) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Autodiff, SegmentAttentionPassesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto params = store_with({{"q", testutil::random_matrix(3, 4, rng)},
                            {"k", testutil::random_matrix(6, 4, rng)},
                            {"v", testutil::random_matrix(6, 4, rng)}});
  expect_gradients(params, [](ad::Tape&, const BoundParams& p) {
    auto out = ad::segment_attention(p["q"], p["k"], p["v"], {0, 3, 3, 6}, 2, nullptr);
    return ad::sum(ad::mul(out, out));
  });
}

TEST(Autodiff, SegmentAttentionMatchesStraightLineOracle) {
  std::mt19937_64 rng(8);
  const Matrix q = testutil::random_matrix(1, 4, rng), k = testutil::random_matrix(3, 4, rng),
               v = testutil::random_matrix(3, 4, rng);
  ad::Tape t;
  std::vector<double> w;
  auto out = ad::segment_attention(t.constant(q), t.constant(k), t.constant(v), {0, 3}, 2, &w);
  for (std::size_t h = 0; h < 2; ++h) {
    double score[3], mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      score[j] = (q(0, 2 * h) * k(j, 2 * h) + q(0, 2 * h + 1) * k(j, 2 * h + 1)) / std::sqrt(2.0);
      mx = std::max(mx, score[j]);
    }
    for (double& s : score) z += (s = std::exp(s - mx));
    double wsum = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 3; ++j) expect += score[j] / z * v(j, 2 * h + c);
      EXPECT_NEAR(out.value()(0, 2 * h + c), expect, 1e-12);
    }
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(w[j * 2 + h], score[j] / z, 1e-12);
      wsum += w[j * 2 + h];
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
  }
}

TEST(Autodiff, SingleKeyGetsWeightOne) {
  ad::Tape t;
  std::vector<double> w;
  std::mt19937_64 rng(9);
  ad::segment_attention(t.constant(testutil::random_matrix(1, 4, rng)), t.constant(testutil::random_matrix(1, 4, rng)),
                        t.constant(testutil::random_matrix(1, 4, rng)), {0, 1}, 2, &w);
  EXPECT_EQ(w, (std::vector<double>{1.0, 1.0}));
}

TEST(Autodiff, EmptyAttentionSegmentGivesZeroRow) {
  ad::Tape t;
  auto out = ad::segment_attention(t.constant(Matrix(1, 4, 1.0)), t.constant(Matrix(0, 4)), t.constant(Matrix(0, 4)),
                                   {0, 0}, 2, nullptr);
  EXPECT_EQ(out.value(), Matrix(1, 4));
}

TEST(Autodiff, BceMatchesClosedFormAndGradient) {
  std::mt19937_64 rng(10);
  auto params = store_with({{"z", testutil::random_matrix(6, 1, rng, 3.0)}});
  const std::vector<double> labels{1, 0, 1, 1, 0, 0};
  ad::Tape t;
  BoundParams p(t, params, false);
  const double loss = ad::bce_with_logits(p["z"], labels).value()[0];
  double expect = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-params.at("z")[i]));
    expect -= labels[i] ? std::log(s) : std::log(1.0 - s);
  }
  EXPECT_NEAR(loss, expect / 6.0, 1e-12);
  expect_gradients(params, [&](ad::Tape&, const BoundParams& bp) { return ad::bce_with_logits(bp["z"], labels); });
}

TEST(Autodiff, BceIsFiniteForExtremeLogits) {
  ad::Tape t;
  auto z = t.variable(Matrix::from_rows({{1e6}, {-1e6}}));
  auto loss = ad::bce_with_logits(z, {0.0, 1.0});
  EXPECT_TRUE(std::isfinite(loss.value()[0]));
  t.backward(loss);
  EXPECT_EQ(t.grad(z), Matrix(2, 1));  // clamps active
}

TEST(Autodiff, GradientCheckOnLinearMapIsNearExact) {
  std::mt19937_64 rng(11);
  auto params = store_with({{"w", testutil::random_matrix(3, 3, rng)}});
  const Matrix x = testutil::random_matrix(2, 3, rng);
  const auto report = gradient_check(
      params, [&](ad::Tape& t, const BoundParams& p) { return ad::sum(ad::matmul(t.constant(x), p["w"])); }, 9, kStep,
      1);
  EXPECT_LT(report.max_rel_error, 1e-8);
  EXPECT_EQ(report.probes, 9u);
}

TEST(Autodiff, RelativeErrorFloor) {
  EXPECT_EQ(gradient_rel_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_rel_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_rel_error(1e-9, 0.0), 1e-3);
}
