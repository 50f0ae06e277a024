#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "prodcat/gradcheck.hpp"
#include "prodcat/ops.hpp"
#include "prodcat/tensor.hpp"

namespace prodcat {
namespace {

using D = double;
using TensorD = BasicTensor<D>;
using ParamD = BasicParameter<D>;

ParamD random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double bound = 1.0) {
  TensorD t(std::move(shape));
  fill_uniform(t, bound, rng);
  return ParamD(name, std::move(t));
}

TensorD random_weights(const Shape& shape, std::mt19937_64& rng) {
  TensorD t(shape);
  fill_uniform(t, 1.0, rng);
  return t;
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(t.row(1)[0], 4.0f);
  Parameter p("w", t);
  EXPECT_EQ(p.grad.shape(), t.shape());
  EXPECT_EQ(p.grad[5], 0.0f);
}

TEST(ConvBankSpec, Validation) {
  EXPECT_NO_THROW((ConvBankSpec{{1, 2, 3, 4, 5}, 128, 200}.validate()));
  EXPECT_THROW((ConvBankSpec{{2, 1}, 4, 8}.validate()), std::invalid_argument);
  EXPECT_THROW((ConvBankSpec{{0, 1}, 4, 8}.validate()), std::invalid_argument);
  EXPECT_THROW((ConvBankSpec{{1}, 0, 8}.validate()), std::invalid_argument);
  EXPECT_EQ((ConvBankSpec{}.output_width()), 640u);
}

TEST(EmbeddingLookup, IdentityTable) {
  Parameter table("e", Tensor({4, 4}));
  for (std::size_t i = 0; i < 4; ++i) {
    table.value.at(i, i) = 1.0f;
  }
  Graph<float> g;
  const std::vector<std::int32_t> idx{2};
  const auto out = g.value(embedding_lookup(g, table, std::span<const std::int32_t>(idx)));
  EXPECT_EQ(out.shape(), (Shape{1, 4}));
  EXPECT_EQ(out.storage(), (std::vector<float>{0, 0, 1, 0}));
  const std::vector<std::int32_t> bad{4};
  EXPECT_THROW(embedding_lookup(g, table, std::span<const std::int32_t>(bad)), std::invalid_argument);
}

TEST(EmbeddingLookup, RepeatedIndexSumsGradients) {
  std::mt19937_64 rng(1);
  auto table = random_param("e", {4, 3}, rng);
  const std::vector<std::int32_t> idx{3, 3};
  const auto w = random_weights({2, 3}, rng);
  Graph<D> g;
  const Var out = embedding_lookup(g, table, std::span<const std::int32_t>(idx));
  EXPECT_EQ(g.value(out).row(0)[1], g.value(out).row(1)[1]);
  g.backward(weighted_sum(g, out, w));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(table.grad.at(3, c), w.at(0, c) + w.at(1, c));
    EXPECT_EQ(table.grad.at(0, c), 0.0);
  }
  std::vector<ParamD*> params{&table};
  const double err = grad_check<D>(params, [&](Graph<D>& gg) {
    return weighted_sum(gg, embedding_lookup(gg, table, std::span<const std::int32_t>(idx)), w);
  });
  EXPECT_LT(err, 1e-6);
}

TEST(ConvBank, HandConvolutionWidthOne) {
  std::mt19937_64 rng(0);
  auto bank = ConvBank<float>::make(ConvBankSpec{{1}, 1, 3}, "c", rng);
  bank.weights[0].value.fill(1.0f);
  bank.biases[0].value.fill(0.0f);
  Graph<float> g;
  const Var x = g.constant(Tensor({3, 3}, std::vector<float>{1, 0, 0, 0, 2, 0, 1, 1, 1}));
  const auto maps = conv_bank(g, x, bank);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(g.value(maps[0]).shape(), (Shape{3, 1}));
  EXPECT_EQ(g.value(maps[0]).storage(), (std::vector<float>{1, 2, 3}));
}

TEST(ConvBank, ZeroWeightsGiveZeroMapsOfLengthLMinusNPlusOne) {
  std::mt19937_64 rng(0);
  auto bank = ConvBank<float>::make(ConvBankSpec{{1, 2, 3, 4, 5}, 2, 4}, "c", rng);
  for (auto& w : bank.weights) w.value.fill(0.0f);
  Graph<float> g;
  Tensor x({7, 4});
  fill_uniform(x, 1.0, rng);
  const auto maps = conv_bank(g, g.constant(x), bank);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = g.value(maps[i]);
    EXPECT_EQ(m.shape(), (Shape{7 - bank.spec.widths[i] + 1, 2}));
    for (float v : m.data()) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_THROW(conv_bank(g, g.constant(Tensor({4, 4})), bank), std::invalid_argument);
}

TEST(ConvBank, BigramFilterPeaksAtBigramPosition) {
  // One-hot embeddings: tokens 0..4 map to unit vectors; the filter matches "2 then 3".
  std::mt19937_64 rng(0);
  auto bank = ConvBank<float>::make(ConvBankSpec{{2}, 1, 5}, "c", rng);
  bank.weights[0].value.fill(0.0f);
  bank.weights[0].value[2] = 1.0f;
  bank.weights[0].value[5 + 3] = 1.0f;
  const std::vector<int> tokens{0, 3, 2, 1, 4, 2, 3, 0};
  Tensor x({tokens.size(), 5});
  for (std::size_t i = 0; i < tokens.size(); ++i) x.at(i, static_cast<std::size_t>(tokens[i])) = 1.0f;
  Graph<float> g;
  const auto& m = g.value(conv_bank(g, g.constant(x), bank)[0]);
  std::size_t best = 0;
  for (std::size_t t = 1; t < m.size(); ++t) {
    if (m[t] > m[best]) best = t;
  }
  EXPECT_EQ(best, 5u);
  EXPECT_EQ(m[5], 2.0f);
}

TEST(MaxpoolTime, MaxTiesAndMasking) {
  Graph<D> g;
  const Var col = g.constant(TensorD({3, 1}, std::vector<D>{-1, 5, 3}));
  EXPECT_EQ(g.value(maxpool_time(g, col))[0], 5.0);

  ParamD eq("m", TensorD({3, 2}, 2.0));
  Graph<D> g2;
  g2.backward(weighted_sum(g2, maxpool_time(g2, g2.leaf(eq)), TensorD({2}, 1.0)));
  EXPECT_EQ(eq.grad.at(0, 0), 1.0);
  EXPECT_EQ(eq.grad.at(1, 0), 0.0);
  EXPECT_EQ(eq.grad.at(2, 1), 0.0);

  Graph<D> g3;
  const Var masked = g3.constant(TensorD({3, 1}, std::vector<D>{9, 1, 2}));
  EXPECT_EQ(g3.value(maxpool_time(g3, masked, 1))[0], 2.0);
  EXPECT_EQ(g3.value(maxpool_time(g3, masked, 3))[0], 0.0);
}

TEST(MaxpoolTime, TieGradientMatchesForwardDifferenceOnFirstEntry) {
  ParamD m("m", TensorD({3, 1}, 1.0));
  auto loss = [&](Graph<D>& g) { return weighted_sum(g, maxpool_time(g, g.leaf(m)), TensorD({1}, 1.0)); };
  Graph<D> g;
  g.backward(loss(g));
  const double h = 1e-6;
  m.value[0] += h;
  Graph<D> up(false);
  const double forward_diff = (up.value(loss(up))[0] - 1.0) / h;
  EXPECT_NEAR(m.grad[0], forward_diff, 1e-9);
}

TEST(MaxpoolTime, VeryNegativeRowsLeaveOutputUnchanged) {
  std::mt19937_64 rng(2);
  TensorD base({4, 3});
  fill_uniform(base, 1.0, rng);
  TensorD extended({6, 3}, kMaskedActivation);
  std::copy(base.data().begin(), base.data().end(), extended.data().begin() + 6);
  Graph<D> g;
  const TensorD short_max = g.value(maxpool_time(g, g.constant(base)));
  const TensorD long_max = g.value(maxpool_time(g, g.constant(extended)));
  EXPECT_EQ(short_max, long_max);
}

TEST(MeanTime, Examples) {
  Graph<D> g;
  const Var two = g.constant(TensorD({2, 1}, std::vector<D>{2, 4}));
  EXPECT_EQ(g.value(mean_time(g, two, 2))[0], 3.0);
  EXPECT_EQ(g.value(mean_time(g, two, 1))[0], 2.0);
  const auto zero = g.value(mean_time(g, g.constant(TensorD({5, 3}, 7.0)), 0));
  EXPECT_EQ(zero.storage(), (std::vector<D>{0, 0, 0}));
  EXPECT_THROW(mean_time(g, two, 3), std::invalid_argument);
}

TEST(Dense, LinearIdentityAndReluAndConcat) {
  Parameter w("w", Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}));
  Parameter b("b", Tensor({2}));
  Graph<float> g;
  const Var x = g.constant(Tensor({1, 2}, std::vector<float>{-3, 4}));
  const Var y = linear(g, x, w, b);
  EXPECT_EQ(g.value(y).storage(), (std::vector<float>{-3, 4}));
  EXPECT_EQ(g.value(relu(g, y)).storage(), (std::vector<float>{0, 4}));
  const std::vector<Var> parts{g.constant(Tensor({2}, 1.0f)), g.constant(Tensor({3}, 2.0f))};
  EXPECT_EQ(g.value(concat(g, std::span<const Var>(parts))).storage(), (std::vector<float>{1, 1, 2, 2, 2}));
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  Parameter w("w", Tensor({3, 2}));
  Parameter b("b", Tensor({2}));
  Graph<float> g;
  try {
    linear(g, g.constant(Tensor({1, 2})), w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1x2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformLogits) {
  const std::vector<float> logits(4, 0.7f);
  for (float p : softmax<float>(logits)) EXPECT_FLOAT_EQ(p, 0.25f);
  Graph<float> g;
  const std::vector<std::size_t> labels{2};
  const Var loss = softmax_cross_entropy(g, g.constant(Tensor({1, 4}, 0.7f)), std::span<const std::size_t>(labels));
  EXPECT_NEAR(g.value(loss)[0], std::log(4.0), 1e-6);
}

TEST(Softmax, LargeLogitIsStable) {
  // Oracle in long double: p = 1 / (1 + 3 e^-1000) rounds to 1, log p to -3 e^-1000.
  const std::vector<float> logits{0.0f, 1000.0f, 0.0f, 0.0f};
  const auto p = softmax<float>(logits);
  EXPECT_EQ(p[1], 1.0f);
  EXPECT_EQ(p[0], 0.0f);
  Graph<float> g;
  const std::vector<std::size_t> hit{1}, miss{0};
  const Var x = g.constant(Tensor({1, 4}, logits));
  EXPECT_EQ(g.value(softmax_cross_entropy(g, x, std::span<const std::size_t>(hit)))[0], 0.0f);
  EXPECT_FLOAT_EQ(g.value(softmax_cross_entropy(g, x, std::span<const std::size_t>(miss)))[0], 1000.0f);
}

TEST(Softmax, OutputsAreOnTheSimplex) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> dist(0.0f, 20.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> logits(1 + rng() % 12);
    for (auto& x : logits) x = dist(rng);
    double sum = 0.0;
    for (float p : softmax<float>(logits)) {
      EXPECT_GE(p, 0.0f);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
}

TEST(GradCheck, QuadraticAndVacuous) {
  std::mt19937_64 rng(0);
  auto x = random_param("x", {3, 4}, rng);
  std::vector<ParamD*> params{&x};
  EXPECT_LT(grad_check<D>(params, [&](Graph<D>& g) { return half_squared_norm(g, g.leaf(x)); }), 1e-6);
  for (std::size_t i = 0; i < x.value.size(); ++i) EXPECT_NEAR(x.grad[i], x.value[i], 1e-12);

  std::vector<ParamD*> none;
  EXPECT_EQ(grad_check<D>(none, [](Graph<D>& g) { return g.constant(TensorD({1}, 2.0)); }), 0.0);
}

TEST(GradCheck, NonFiniteThrows) {
  ParamD x("x", TensorD({1}, std::numeric_limits<D>::infinity()));
  std::vector<ParamD*> params{&x};
  EXPECT_THROW(grad_check<D>(params, [&](Graph<D>& g) { return half_squared_norm(g, g.leaf(x)); }), Error);
}

// Every differentiable op, randomized shapes, 100 seeds each.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  const std::size_t V = pick(3, 6), Dm = pick(1, 4), L = pick(3, 7), F = pick(1, 3), B = pick(1, 3), C = pick(2, 4);

  auto table = random_param("table", {V, Dm}, rng);
  std::vector<std::int32_t> idx(L);
  for (auto& i : idx) i = static_cast<std::int32_t>(rng() % V);
  auto bank = ConvBank<D>::make(ConvBankSpec{{1, 2, 3}, F, Dm}, "conv", rng);
  for (auto& b : bank.biases) fill_uniform(b.value, 0.5, rng);
  const std::size_t masked = rng() % 3;
  const std::size_t valid = pick(1, L);
  const std::size_t pooled_width = 3 * F + Dm;
  auto w1 = random_param("w1", {2 * pooled_width, 5}, rng);
  auto b1 = random_param("b1", {5}, rng, 0.3);
  auto w2 = random_param("w2", {5, C}, rng);
  auto b2 = random_param("b2", {C}, rng, 0.3);
  auto extra = random_param("extra", {B, pooled_width}, rng);
  std::vector<std::size_t> labels(B);
  for (auto& l : labels) l = rng() % C;
  const std::uint64_t drop_seed = rng();

  std::vector<ParamD*> params{&table, &w1, &b1, &w2, &b2, &extra};
  for (auto& w : bank.weights) params.push_back(&w);
  for (auto& b : bank.biases) params.push_back(&b);

  auto closure = [&](Graph<D>& g) {
    const Var emb = embedding_lookup(g, table, std::span<const std::int32_t>(idx));
    const auto maps = conv_bank(g, emb, bank);
    std::vector<Var> feats;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      feats.push_back(maxpool_time(g, maps[i], pad_only_windows(masked, bank.spec.widths[i])));
    }
    feats.push_back(mean_time(g, emb, valid));
    const std::vector<Var> rows(B, concat(g, std::span<const Var>(feats)));
    const Var ex = g.leaf(extra);
    const std::vector<Var> halves{stack_rows(g, std::span<const Var>(rows)), ex};
    const Var x = concat(g, std::span<const Var>(halves));
    std::mt19937_64 drop_rng(drop_seed);
    const Var h = dropout(g, relu(g, linear(g, x, w1, b1)), 0.3, drop_rng);
    const Var ce = softmax_cross_entropy(g, linear(g, h, w2, b2), std::span<const std::size_t>(labels));
    const std::vector<Var> tail{ce, half_squared_norm(g, ex)};
    return weighted_sum(g, concat(g, std::span<const Var>(tail)), TensorD({2}, 1.0));
  };
  // A step of 1e-5 keeps central differences from straddling ReLU and max-pool switch points.
  const double err = grad_check<D>(params, closure, 1e-5);
  EXPECT_LT(err, 1e-3) << "seed " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 100));

}  // namespace
}  // namespace prodcat
