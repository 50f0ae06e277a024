#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "prodcat/error.hpp"
#include "prodcat/gradcheck.hpp"
#include "prodcat/multicnn.hpp"
#include "test_util.hpp"

namespace prodcat {
namespace {

using testing::random_products;
using testing::tiny_model;

TEST(ModelConfig, DefaultFeatureWidths) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.feature_width(), 1920u);
  cfg.structured_mode = StructuredMode::word_avg;
  EXPECT_EQ(cfg.feature_width(), 1480u);
  cfg.structured_mode = StructuredMode::none;
  EXPECT_EQ(cfg.feature_width(), 1280u);
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.channels.clear();
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.num_classes = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.conv.embed_dim = 100;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(parse_structured_mode("word_avg"), StructuredMode::word_avg);
  EXPECT_THROW(parse_structured_mode("lstm"), ConfigError);
}

TEST(MultiCnn, MissingDictionaryIsConfigError) {
  ModelConfig cfg;
  cfg.channels = {{"product_name", 8, 50}};
  cfg.structured_mode = StructuredMode::none;
  cfg.embed_dim = 4;
  cfg.conv = ConvBankSpec{{1, 2}, 2, 4};
  cfg.fc_sizes = {};
  Vocabularies vocab;
  EXPECT_THROW(MultiCnnModel(cfg, vocab, {"a", "b"}, 0), ConfigError);
  cfg.structured_mode = StructuredMode::conv;
  vocab.unstructured["product_name"] = std::make_shared<Dictionary>();
  EXPECT_THROW(MultiCnnModel(cfg, vocab, {"a", "b"}, 0), ConfigError);
}

TEST(MultiCnn, FeatureWidthsAreAdditive) {
  for (auto mode : {StructuredMode::none, StructuredMode::word_avg, StructuredMode::conv}) {
    auto model = tiny_model(mode);
    Graph<float> g(false);
    const auto enc = model.encode(testing::rails_top());
    EXPECT_EQ(g.value(model.features(g, enc)).size(), model.config().feature_width());
    const std::size_t channel = model.config().conv.output_width();
    const std::size_t extra = mode == StructuredMode::conv ? channel : mode == StructuredMode::word_avg ? 6 : 0;
    EXPECT_EQ(model.config().feature_width(), 2 * channel + extra);
  }
}

TEST(MultiCnn, EmptyProductGivesFiniteLogits) {
  for (auto mode : {StructuredMode::none, StructuredMode::word_avg, StructuredMode::conv}) {
    const auto model = tiny_model(mode);
    Product empty;
    empty.id = "empty";
    const auto logits = model.logits(empty);
    ASSERT_EQ(logits.size(), 3u);
    for (float x : logits) EXPECT_TRUE(std::isfinite(x));
  }
}

TEST(MultiCnn, BatchedLogitsEqualSingle) {
  for (auto mode : {StructuredMode::none, StructuredMode::word_avg, StructuredMode::conv}) {
    const auto model = tiny_model(mode, 4, 7);
    auto products = random_products(40, 21);
    products.push_back(testing::rails_top());
    products.push_back(Product{"empty", {}, {}});
    const auto batched = model.logits(products);
    ASSERT_EQ(batched.size(), products.size());
    for (std::size_t i = 0; i < products.size(); ++i) {
      const auto single = model.logits(products[i]);
      for (std::size_t c = 0; c < single.size(); ++c) {
        EXPECT_NEAR(batched[i][c], single[c], 1e-5) << "mode " << to_string(mode) << " product " << i;
      }
    }
  }
}

TEST(MultiCnn, SameSeedSameWeights) {
  auto a = tiny_model(StructuredMode::conv, 3, 5);
  auto b = tiny_model(StructuredMode::conv, 3, 5);
  auto c = tiny_model(StructuredMode::conv, 3, 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    differs = differs || pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
}

TEST(PredictTopk, FullRankingIsPermutation) {
  const auto model = tiny_model(StructuredMode::conv, 5);
  const auto preds = predict_topk(model, testing::rails_top(), 5);
  ASSERT_EQ(preds.size(), 5u);
  std::set<std::size_t> seen;
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    seen.insert(preds[i].index);
    EXPECT_EQ(preds[i].label, model.labels()[preds[i].index]);
    EXPECT_GT(preds[i].probability, 0.0);
    EXPECT_LT(preds[i].probability, 1.0);
    if (i) EXPECT_LE(preds[i].probability, preds[i - 1].probability);
    sum += preds[i].probability;
  }
  EXPECT_EQ(seen.size(), 5u);
  EXPECT_NEAR(sum, 1.0, 1e-5);
}

TEST(PredictTopk, TiesGoToLowerIndex) {
  auto model = tiny_model(StructuredMode::none, 2);
  for (auto* p : model.parameters()) {
    if (p->name.rfind("output", 0) == 0) p->value.fill(0.0f);
  }
  const auto preds = predict_topk(model, testing::rails_top(), 2);
  EXPECT_EQ(preds[0].index, 0u);
  EXPECT_EQ(preds[1].index, 1u);
  EXPECT_DOUBLE_EQ(preds[0].probability, 0.5);
  const std::vector<float> tied{1.0f, 3.0f, 3.0f, 3.0f};
  EXPECT_EQ(rank_classes<float>(tied, 3), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(PredictTopk, KOutOfRangeThrows) {
  const auto model = tiny_model();
  EXPECT_THROW(predict_topk(model, testing::rails_top(), 0), std::invalid_argument);
  EXPECT_THROW(predict_topk(model, testing::rails_top(), 4), std::invalid_argument);
  EXPECT_EQ(predict_topk(model, testing::rails_top(), 3).size(), 3u);
}

TEST(MultiCnn, MicroModelGradientCheck) {
  ModelConfig cfg;
  cfg.channels = {{"product_name", 10, 20}};
  cfg.structured_mode = StructuredMode::conv;
  cfg.structured_max_len = 10;
  cfg.structured_dict_size = 20;
  cfg.embed_dim = 8;
  cfg.conv = ConvBankSpec{{1, 2, 3}, 4, 8};
  cfg.fc_sizes = {6, 6};
  auto products = random_products(30, 3);
  MultiCnn<double> model(cfg, Vocabularies::build(cfg, products), {"a", "b", "c"}, 11);
  std::vector<EncodedProduct> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(model.encode(products[i]));
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  auto params = model.parameters();
  // Zero biases put empty inputs exactly on ReLU kinks; check at a generic point instead.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (auto* p : params) {
    if (p->name.ends_with("bias")) {
      for (auto& x : p->value.data()) x = jitter(rng);
    }
  }
  const double err = grad_check<double>(
      params,
      [&](Graph<double>& g) {
        return softmax_cross_entropy(g, model.forward(g, batch), std::span<const std::size_t>(labels));
      },
      1e-5);
  EXPECT_LT(err, 1e-3);
}

}  // namespace
}  // namespace prodcat
