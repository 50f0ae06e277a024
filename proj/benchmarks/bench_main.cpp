#include <random>

#include <benchmark/benchmark.h>

#include "prodcat/hierarchical.hpp"
#include "prodcat/multicnn.hpp"
#include "prodcat/ops.hpp"
#include "prodcat/synthetic.hpp"
#include "prodcat/text.hpp"

namespace prodcat {
namespace {

std::vector<Product> corpus_products(std::size_t n) {
  SyntheticSpec spec;
  spec.classes = 50;
  spec.per_class = (n + 49) / 50;
  std::vector<Product> out;
  for (auto& ex : generate_synthetic(spec).examples) out.push_back(std::move(ex.product));
  out.resize(n);
  return out;
}

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.channels = {{"product_name", 32, 20000}, {"product_short_description", 64, 20000}};
  cfg.structured_max_len = 64;
  cfg.structured_dict_size = 20000;
  cfg.embed_dim = 32;
  cfg.conv = ConvBankSpec{{1, 2, 3, 4, 5}, 16, 32};
  cfg.fc_sizes = {128, 128};
  cfg.num_classes = 50;
  return cfg;
}

std::vector<std::string> labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

void BM_ConvBank(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto bank = ConvBank<float>::make(ConvBankSpec{{1, 2, 3, 4, 5}, 128, 200}, "conv", rng);
  Tensor input({len, 200});
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& x : input.data()) x = u(rng);
  for (auto _ : state) {
    Graph<float> g(false);
    const auto maps = conv_bank(g, g.constant(input), bank);
    benchmark::DoNotOptimize(g.value(maps.back()).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_ConvBank)->Arg(32)->Arg(256);

void BM_ForwardSingle(benchmark::State& state) {
  const auto products = corpus_products(64);
  const auto cfg = bench_config();
  MultiCnnModel model(cfg, Vocabularies::build(cfg, products), labels(50), 1);
  for (auto _ : state) {
    for (const auto& p : products) benchmark::DoNotOptimize(model.logits(p));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ForwardSingle);

void BM_ForwardBatched(benchmark::State& state) {
  const auto products = corpus_products(64);
  const auto cfg = bench_config();
  MultiCnnModel model(cfg, Vocabularies::build(cfg, products), labels(50), 1);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(products));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ForwardBatched);

void BM_Encode(benchmark::State& state) {
  const auto products = corpus_products(256);
  const auto cfg = bench_config();
  MultiCnnModel model(cfg, Vocabularies::build(cfg, products), labels(50), 1);
  for (auto _ : state) {
    for (const auto& p : products) benchmark::DoNotOptimize(model.encode(p));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_Encode);

void BM_HashedBow(benchmark::State& state) {
  const auto products = corpus_products(256);
  for (auto _ : state) {
    for (const auto& p : products) benchmark::DoNotOptimize(hashed_bow(p, 1 << 18));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_HashedBow);

}  // namespace
}  // namespace prodcat

BENCHMARK_MAIN();
