#include <cstring>

#include <gtest/gtest.h>

#include "prodcat/checkpoint.hpp"
#include "prodcat/config.hpp"
#include "prodcat/error.hpp"
#include "prodcat/run_store.hpp"
#include "prodcat/synthetic.hpp"
#include "prodcat/trainer.hpp"
#include "test_util.hpp"

namespace prodcat {
namespace {

using testing::TempDir;

TEST(Checkpoint, BinaryLayout) {
  Checkpoint ckpt;
  ckpt.config_hash = 0x0102030405060708ULL;
  ckpt.blocks.push_back({"w", Tensor({2}, std::vector<float>{1.0f, -2.5f})});
  const auto bytes = serialize_checkpoint(ckpt);
  ASSERT_EQ(bytes.size(), 8u + 4 + 8 + 4 + (4 + 1 + 4 + 8 + 8));
  EXPECT_EQ(bytes.substr(0, 8), "PRODCKPT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), kCheckpointVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0x08);
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0x01);
  float last = 0.0f;
  std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
  EXPECT_EQ(last, -2.5f);
  EXPECT_EQ(deserialize_checkpoint(bytes), ckpt);
}

TEST(Checkpoint, RejectsCorruptInput) {
  Checkpoint ckpt;
  ckpt.blocks.push_back({"w", Tensor({3}, 1.0f)});
  const auto bytes = serialize_checkpoint(ckpt);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), Error);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), Error);
  EXPECT_THROW(ckpt.find("missing"), Error);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), IoError);
}

TEST(Checkpoint, RestoreChecksNamesAndShapes) {
  auto model = testing::tiny_model();
  auto params = model.parameters();
  const std::vector<const Parameter*> cp(params.begin(), params.end());
  auto ckpt = snapshot(cp, 7);
  ckpt.blocks.back().value = Tensor({1});
  EXPECT_THROW(restore(ckpt, params), ShapeError);
  ckpt.blocks.pop_back();
  EXPECT_THROW(restore(ckpt, params), Error);
}

TEST(Checkpoint, FileRoundTripIsBitExact) {
  TempDir dir;
  auto model = testing::tiny_model(StructuredMode::word_avg, 4, 3);
  const auto params = model.parameters();
  const std::vector<const Parameter*> cp(params.begin(), params.end());
  const auto ckpt = snapshot(cp, 99);
  save_checkpoint(dir / "m.ckpt", ckpt);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded, ckpt);
  save_checkpoint(dir / "m2.ckpt", loaded);
  EXPECT_EQ(testing::read_file(dir / "m.ckpt"), testing::read_file(dir / "m2.ckpt"));
}

struct Trained {
  RunConfig config;
  SyntheticCorpus corpus;
  DatasetSplit parts;
};

Trained desk_fixture() {
  SyntheticSpec spec;
  spec.classes = 5;
  spec.per_class = 30;
  spec.seed = 2;
  Trained t{RunConfig::parse("channels = product_name:16:300, product_short_description:24:300\n"
                             "structured_max_len = 32\nstructured_dict_size = 300\nembed_dim = 8\n"
                             "conv_widths = 1,2,3\nfilters_per_width = 4\nfc_sizes = 16\n"
                             "base_lr = 0.2\nepochs = 2\nstratify_floor = 1\nbatch_size = 16\n"),
            generate_synthetic(spec),
            {}};
  t.parts = make_split(t.corpus.examples, t.config.train, 1);
  return t;
}

TEST(RunStore, MultiCnnRoundTripEvaluatesIdentically) {
  TempDir dir;
  auto t = desk_fixture();
  MultiCnnModel model(t.config.model, Vocabularies::build(t.config.model, products_of(t.parts.train)),
                      t.corpus.taxonomy.leaf_labels(), 1);
  train(model, t.parts, t.config.train, 1);
  save_run(dir.path(), t.config, t.corpus.taxonomy, model);

  const auto run = load_run(dir.path());
  ASSERT_TRUE(run.multicnn);
  EXPECT_FALSE(run.hierarchical);
  EXPECT_EQ(run.labels, model.labels());
  EXPECT_EQ(run.config.to_text(), t.config.to_text());
  const auto a = model.parameters();
  const auto b = run.multicnn->parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value);
  }
  for (const auto& [attr, dict] : model.vocabularies().unstructured) {
    EXPECT_EQ(*run.multicnn->vocabularies().unstructured.at(attr), *dict);
    EXPECT_TRUE(std::filesystem::exists(dir / dictionary_file(attr)));
  }
  EXPECT_EQ(*run.multicnn->vocabularies().structured, *model.vocabularies().structured);
  EXPECT_EQ(evaluate(*run.multicnn, t.parts.test), evaluate(model, t.parts.test));

  for (const char* name : {"dict.product_name.tsv", "dict.structured.tsv", "model.ckpt"}) {
    const auto before = testing::read_file(dir / name);
    TempDir again;
    save_run(again.path(), run.config, run.taxonomy, *run.multicnn);
    EXPECT_EQ(testing::read_file(again / name), before) << name;
  }
}

TEST(RunStore, HierarchicalRoundTripEvaluatesIdentically) {
  TempDir dir;
  auto t = desk_fixture();
  t.config.kind = ModelKind::hierarchical;
  t.config.hierarchical.hash_dim = 1 << 12;
  t.config.hierarchical.epochs = 5;
  const auto model = train_hierarchical(t.parts.train, t.corpus.taxonomy, t.config.hierarchical);
  save_run(dir.path(), t.config, model);
  const auto run = load_run(dir.path());
  ASSERT_TRUE(run.hierarchical);
  EXPECT_EQ(run.hierarchical->to_checkpoint(), model.to_checkpoint());
  EXPECT_EQ(evaluate(*run.hierarchical, t.parts.test), evaluate(model, t.parts.test));
}

TEST(RunStore, DetectsTamperedConfig) {
  TempDir dir;
  auto t = desk_fixture();
  MultiCnnModel model(t.config.model, Vocabularies::build(t.config.model, products_of(t.parts.train)),
                      t.corpus.taxonomy.leaf_labels(), 1);
  save_run(dir.path(), t.config, t.corpus.taxonomy, model);
  testing::write_file(dir / "config.txt", testing::read_file(dir / "config.txt") + "epochs = 3\n");
  EXPECT_THROW(load_run(dir.path()), IoError);
  EXPECT_THROW(load_run(dir / "missing"), IoError);
}

TEST(RunStore, EpochLog) {
  TempDir dir;
  const EpochRecord a{1, 2.5, 2.25, 0.125, 0.05};
  const EpochRecord b{2, 1.5, 1.75, 0.5, 0.025};
  append_epoch(dir.path(), a);
  append_epoch(dir.path(), b);
  const auto back = read_epochs(dir.path());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].epoch, 2u);
  EXPECT_EQ(back[1].val_top1, 0.5);
  EXPECT_EQ(back[0].lr, 0.05);
  EXPECT_EQ(dictionary_file("product name/x"), "dict.product_name_x.tsv");
}

}  // namespace
}  // namespace prodcat
