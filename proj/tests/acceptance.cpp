// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any failure.
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "prodcat/config.hpp"
#include "prodcat/gradcheck.hpp"
#include "prodcat/hierarchical.hpp"
#include "prodcat/run_store.hpp"
#include "prodcat/schedule.hpp"
#include "prodcat/serve.hpp"
#include "prodcat/synthetic.hpp"
#include "prodcat/trainer.hpp"
#include "test_util.hpp"

namespace prodcat {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

RunConfig desk_config() {
  return RunConfig::parse(
      "channels = product_name:32:20000, product_short_description:64:20000\n"
      "structured_max_len = 64\nstructured_dict_size = 20000\nembed_dim = 32\n"
      "conv_widths = 1,2,3,4,5\nfilters_per_width = 16\nfc_sizes = 128,128\n"
      "base_lr = 0.2\nepochs = 7\nbatch_size = 64\n");
}

/// Low-capacity network for corpora whose titles carry no class signal.
RunConfig lift_config() {
  return RunConfig::parse(
      "channels = product_name:32:20000, product_short_description:64:20000\n"
      "structured_max_len = 64\nstructured_dict_size = 20000\nembed_dim = 32\nembed_init = 1.0\n"
      "conv_widths = 1,2,3,4,5\nfilters_per_width = 4\nfc_sizes = 64\n"
      "base_lr = 0.5\nepochs = 15\nbatch_size = 64\n");
}

/// Trains on the seeded split of `corpus` and scores the test part.
MetricsReport train_and_test(const SyntheticCorpus& corpus, RunConfig cfg, std::uint64_t seed) {
  const auto parts = make_split(corpus.examples, cfg.train, seed);
  MultiCnnModel model(cfg.model, Vocabularies::build(cfg.model, products_of(parts.train)),
                      corpus.taxonomy.leaf_labels(), seed);
  train(model, parts, cfg.train, seed);
  return evaluate(model, parts.test);
}

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.channels = {{"product_name", 10, 20}};
  cfg.structured_mode = StructuredMode::conv;
  cfg.structured_max_len = 10;
  cfg.structured_dict_size = 20;
  cfg.embed_dim = 8;
  cfg.conv = ConvBankSpec{{1, 2, 3}, 4, 8};
  cfg.fc_sizes = {8, 8};
  const auto products = testing::random_products(40, 17);
  MultiCnn<double> model(cfg, Vocabularies::build(cfg, products), {"a", "b", "c"}, 5);
  std::vector<EncodedProduct> batch;
  for (std::size_t i = 0; i < 6; ++i) batch.push_back(model.encode(products[i]));
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
  auto params = model.parameters();
  // Zero biases put empty inputs exactly on ReLU kinks; check at a generic point instead.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (auto* p : params) {
    if (p->name.ends_with("bias")) {
      for (auto& x : p->value.data()) x = jitter(rng);
    }
  }
  // A step of 1e-5 keeps central differences from straddling ReLU and max-pool switch points.
  const double err = grad_check<double>(
      params,
      [&](Graph<double>& g) {
        return softmax_cross_entropy(g, model.forward(g, batch), std::span<const std::size_t>(labels));
      },
      1e-5);
  const double secs = seconds_since(t0);
  return {err < 1e-3 && secs < 60.0, "max relative error " + sci(err) + ", " + num(secs, 1) + " s"};
}

Verdict desk_learning() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;  // 50 classes x 200, overlap 0.3, strong attributes
  const auto report = train_and_test(generate_synthetic(spec), desk_config(), 0);
  const double secs = seconds_since(t0);
  return {report.top(1) >= 0.90 && secs < 1800.0,
          "test top-1 " + num(report.top(1)) + " on " + std::to_string(report.examples) + " examples, " +
              num(secs, 1) + " s"};
}

struct LiftRuns {
  std::vector<MetricsReport> none, word_avg, conv;
  std::vector<std::vector<std::string>> identifying;
};

LiftRuns lift_runs() {
  LiftRuns runs;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticSpec spec;
    spec.overlap = 1.0;
    spec.seed = seed;
    const auto corpus = generate_synthetic(spec);
    runs.identifying.push_back(corpus.identifying_labels());
    for (auto [mode, out] : {std::pair{StructuredMode::none, &runs.none},
                             std::pair{StructuredMode::word_avg, &runs.word_avg},
                             std::pair{StructuredMode::conv, &runs.conv}}) {
      auto cfg = lift_config();
      cfg.model.structured_mode = mode;
      out->push_back(train_and_test(corpus, cfg, seed));
    }
  }
  return runs;
}

Verdict structured_lift(const LiftRuns& runs) {
  bool pass = runs.conv.size() == 3 && runs.none.size() == 3;
  std::string detail;
  for (std::size_t s = 0; s < runs.conv.size(); ++s) {
    const double lift = runs.conv[s].top(1) - runs.none[s].top(1);
    // Support floor scaled to the test split: half the per-class test count.
    const std::size_t min_support = runs.conv[s].examples / runs.conv[s].per_class.size() / 2;
    const auto report = f1_lift_report(runs.none[s], runs.conv[s], min_support);
    const std::set<std::string> ident(runs.identifying[s].begin(), runs.identifying[s].end());
    std::size_t eligible = 0;
    for (const auto& e : report) eligible += ident.count(e.label);
    std::size_t leading = 0;
    while (leading < report.size() && ident.count(report[leading].label)) ++leading;
    const bool ok = lift >= 0.20 && leading >= eligible && eligible > 0;
    pass = pass && ok;
    detail += "seed " + std::to_string(s + 1) + ": base " + num(runs.none[s].top(1)) + " conv " +
              num(runs.conv[s].top(1)) + " lift " + num(lift) + ", " + std::to_string(std::min(leading, eligible)) +
              "/" + std::to_string(eligible) + " identifying classes lead the f1 lift (min_support " +
              std::to_string(min_support) + "); ";
  }
  return {pass, detail};
}

Verdict separator_ablation() {
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticSpec spec;
    spec.classes = 20;
    spec.per_class = 100;
    spec.kind = CorpusKind::separator;
    spec.seed = seed;
    const auto corpus = generate_synthetic(spec);
    auto cfg = lift_config();
    cfg.train.stratify_floor = 100;
    cfg.model.use_separator = true;
    const double with = train_and_test(corpus, cfg, seed).top(1);
    cfg.model.use_separator = false;
    const double without = train_and_test(corpus, cfg, seed).top(1);
    wins += with >= without;
    detail += "seed " + std::to_string(seed) + ": with " + num(with) + " without " + num(without) + "; ";
  }
  return {wins >= 2, std::to_string(wins) + "/3 runs with >= without; " + detail};
}

Verdict word_avg_ordering(const LiftRuns& runs) {
  auto mean = [](const std::vector<MetricsReport>& rs) {
    double sum = 0.0;
    for (const auto& r : rs) sum += r.top(1);
    return sum / static_cast<double>(rs.size());
  };
  const double base = mean(runs.none), avg = mean(runs.word_avg), conv = mean(runs.conv);
  std::string detail = "mean top-1 base " + num(base) + " word_avg " + num(avg) + " struct_conv " + num(conv);
  if (!(base <= avg)) detail += " (violation: base > word_avg)";
  if (!(avg <= conv)) detail += " (violation: word_avg > struct_conv)";
  return {base <= avg && avg <= conv, detail};
}

Verdict hierarchical_oracle() {
  const auto tax = testing::random_taxonomy(20, 11);
  HierarchicalConfig cfg;
  cfg.hash_dim = 1 << 12;
  cfg.epochs = 10;
  const auto model = train_hierarchical(testing::leaf_examples(tax, 8, 11), tax, cfg);
  std::size_t mismatches = 0;
  for (const auto& p : testing::random_products(100, 11)) {
    const auto got = hierarchical_topk(p, model, 20, 20);
    const auto want = testing::exhaustive_topk(p, model);
    if (got.size() != want.size()) {
      ++mismatches;
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i].leaf != want[i].leaf || got[i].probability != want[i].probability) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0 && tax.max_depth() == 3 && tax.leaf_count() == 20,
          std::to_string(mismatches) + " of 100 products differ from exhaustive enumeration"};
}

Verdict hierarchical_failure_mode() {
  SyntheticSpec spec;
  spec.classes = 20;
  spec.per_class = 100;
  spec.kind = CorpusKind::confusable;
  spec.seed = 7;
  const auto corpus = generate_synthetic(spec);
  auto cfg = lift_config();
  cfg.train.stratify_floor = 100;
  const auto parts = make_split(corpus.examples, cfg.train, spec.seed);
  MultiCnnModel flat(cfg.model, Vocabularies::build(cfg.model, products_of(parts.train)),
                     corpus.taxonomy.leaf_labels(), spec.seed);
  train(flat, parts, cfg.train, spec.seed);
  const double flat_top1 = evaluate(flat, parts.test).top(1);

  const auto hier = train_hierarchical(parts.train, corpus.taxonomy, cfg.hierarchical);
  const double hier_top1 = evaluate(hier, parts.test, cfg.beam).top(1);
  const auto levels = error_levels(hier, parts.test, cfg.beam);
  const double root = levels.fraction(0);
  bool root_dominates = root > 0.0;
  std::string per_level;
  for (std::size_t level = 0; level < corpus.taxonomy.max_depth(); ++level) {
    per_level += " level " + std::to_string(level) + " " + num(levels.fraction(level));
    if (level > 0) root_dominates = root_dominates && root > levels.fraction(level);
  }
  return {root_dominates && flat_top1 > hier_top1,
          "error fractions" + per_level + "; flat top-1 " + num(flat_top1) + " hierarchical top-1 " + num(hier_top1)};
}

Verdict sgdr_exactness() {
  const auto t0 = Clock::now();
  SgdrSchedule s;
  s.base_lr = 0.05;
  s.min_lr = 0.001;
  s.steps_per_epoch = 20;
  bool ok = s.cycle_boundaries(4) == std::vector<std::size_t>{1, 3, 7, 15};
  std::size_t start = 0;
  for (std::size_t cycle = 0; cycle < 4; ++cycle) {
    const std::size_t length = s.steps_per_epoch << cycle;
    ok = ok && s.lr_at(start) == s.base_lr;
    ok = ok && std::abs(s.lr_at(start + length / 2) - (s.base_lr + s.min_lr) / 2) < 1e-12;
    ok = ok && cosine_annealing(s.base_lr, s.min_lr, static_cast<double>(length), static_cast<double>(length)) ==
                   s.min_lr;
    ok = ok && std::abs(s.lr_at_epoch(static_cast<double>(s.cycle_boundaries(cycle + 1).back())) - s.base_lr) < 1e-12;
    for (std::size_t i = 0; i < length; ++i) {
      const double want =
          cosine_annealing(s.base_lr, s.min_lr, static_cast<double>(i), static_cast<double>(length));
      ok = ok && std::abs(s.lr_at(start + i) - want) < 1e-15;
    }
    // Within a cycle the rate falls strictly and stays above min_lr until the restart.
    for (std::size_t i = 1; i < length; ++i) ok = ok && s.lr_at(start + i) < s.lr_at(start + i - 1);
    ok = ok && s.lr_at(start + length - 1) > s.min_lr;
    start += length;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 1.0, "starts, midpoints, ends and boundaries 1,3,7,15 checked in " + num(secs * 1000, 2) + " ms"};
}

Verdict serving() {
  const auto t0 = Clock::now();
  testing::TempDir dir;
  RunConfig cfg;
  cfg.model = testing::tiny_model(StructuredMode::conv, 6, 4).config();
  {
    const auto toy = testing::tiny_model(StructuredMode::conv, 6, 4);
    save_run(dir.path(), cfg, Taxonomy::from_paths({{"c", "class0"}, {"c", "class1"}, {"c", "class2"},
                                                    {"d", "class3"}, {"d", "class4"}, {"d", "class5"}}),
             toy);
  }
  const auto run = load_run(dir.path());
  const BatcherConfig defaults;
  const bool defaults_ok = defaults.poll_interval.count() == 0.3 && defaults.max_batch == 1024 &&
                           run.config.serve.poll_interval.count() == 0.3 && run.config.serve.max_batch == 1024;
  PredictionService service(run.multicnn, run.config.serve, run.config.hash());
  service.start();
  HttpServer server(service, 128);
  const int port = server.start("127.0.0.1:0");

  const auto products = testing::random_products(100, 99);
  auto body = [&](std::size_t i) {
    nlohmann::json doc{{"request_id", "q" + std::to_string(i)}, {"k", 6}};
    doc["unstructured"] = products[i].unstructured;
    doc["structured"] = nlohmann::json::array();
    for (const auto& [n, v] : products[i].structured) doc["structured"].push_back({n, v});
    return doc.dump();
  };
  std::atomic<std::size_t> matched{0}, answered{0};
  std::mutex failures_mu;
  std::vector<std::string> failures;
  auto check = [&](std::size_t i) {
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);
    const auto reply = client.Post("/v1/predict", body(i), "application/json");
    if (!reply || reply->status != 200) {
      std::lock_guard lock(failures_mu);
      failures.push_back(reply ? std::to_string(reply->status) + " " + reply->body : httplib::to_string(reply.error()));
      return;
    }
    ++answered;
    const auto preds = nlohmann::json::parse(reply->body)["predictions"];
    const auto offline = predict_topk(*run.multicnn, products[i], 6);
    bool same = preds.size() == offline.size();
    for (std::size_t j = 0; same && j < offline.size(); ++j) {
      same = preds[j]["label"] == offline[j].label &&
             std::abs(preds[j]["probability"].get<double>() - offline[j].probability) <= 1e-5;
    }
    matched += same;
  };
  std::vector<std::thread> clients;
  for (std::size_t i = 0; i < products.size(); ++i) clients.emplace_back(check, i);
  for (auto& c : clients) c.join();
  const auto concurrent = service.batcher().stats();
  const std::size_t largest =
      *std::max_element(concurrent.recent_batch_sizes.begin(), concurrent.recent_batch_sizes.end());

  const std::size_t before = concurrent.recent_batch_sizes.size();
  httplib::Client client("127.0.0.1", port);
  for (std::size_t i = 0; i < 10; ++i) {
    nlohmann::json doc{{"request_id", "seq" + std::to_string(i)}};
    client.Post("/v1/predict", doc.dump(), "application/json");
  }
  const auto sequential = service.batcher().stats().recent_batch_sizes;
  const bool all_single = sequential.size() == before + 10 &&
                          std::all_of(sequential.begin() + static_cast<std::ptrdiff_t>(before), sequential.end(),
                                      [](std::size_t n) { return n == 1; });
  server.stop();
  service.stop();
  const double secs = seconds_since(t0);
  return {matched == 100 && largest > 1 && all_single && defaults_ok && secs < 120.0,
          std::to_string(matched.load()) + "/100 responses match offline inference (" +
              std::to_string(answered.load()) + " answered), largest concurrent batch " + std::to_string(largest) +
              ", " + std::to_string(concurrent.batches) + " batches, sequential batches all size 1: " +
              (all_single ? "yes" : "no") + ", defaults 0.3 s / 1024 accepted: " + (defaults_ok ? "yes" : "no") +
              ", " + num(secs, 1) + " s" + (failures.empty() ? "" : "; first failure: " + failures.front())};
}

Verdict persistence() {
  testing::TempDir dir;
  SyntheticSpec spec;
  spec.classes = 8;
  spec.per_class = 40;
  spec.seed = 5;
  const auto corpus = generate_synthetic(spec);
  auto cfg = desk_config();
  cfg.train.epochs = 1;
  cfg.train.stratify_floor = 40;
  const auto parts = make_split(corpus.examples, cfg.train, 5);
  MultiCnnModel model(cfg.model, Vocabularies::build(cfg.model, products_of(parts.train)),
                      corpus.taxonomy.leaf_labels(), 5);
  train(model, parts, cfg.train, 5);
  save_run(dir / "a", cfg, corpus.taxonomy, model);
  const auto run = load_run(dir / "a");
  save_run(dir / "b", run.config, run.taxonomy, *run.multicnn);
  bool files_equal = true;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "a")) {
    const auto name = entry.path().filename();
    files_equal = files_equal && testing::read_file(entry.path()) == testing::read_file(dir / "b" / name);
  }
  const bool eval_equal = evaluate(*run.multicnn, parts.test) == evaluate(model, parts.test);

  auto hcfg = cfg;
  hcfg.kind = ModelKind::hierarchical;
  hcfg.hierarchical.hash_dim = 1 << 12;
  const auto hier = train_hierarchical(parts.train, corpus.taxonomy, hcfg.hierarchical);
  save_run(dir / "h", hcfg, hier);
  const auto hrun = load_run(dir / "h");
  const bool hier_equal = serialize_checkpoint(hrun.hierarchical->to_checkpoint()) ==
                              serialize_checkpoint(hier.to_checkpoint()) &&
                          evaluate(*hrun.hierarchical, parts.test) == evaluate(hier, parts.test);
  return {files_equal && eval_equal && hier_equal,
          std::string("dictionaries and checkpoint re-save byte-identical: ") + (files_equal ? "yes" : "no") +
              ", reloaded evaluation identical: " + (eval_equal ? "yes" : "no") +
              ", hierarchical round trip identical: " + (hier_equal ? "yes" : "no")};
}

}  // namespace
}  // namespace prodcat

int main() {
  using namespace prodcat;
  bool all = true;
  auto report = [&](int n, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << n << " " << name << ": " << v.detail << std::endl;
  };
  report(1, "gradient correctness", gradient_correctness);
  report(2, "desk-scale learning", desk_learning);
  LiftRuns runs;
  try {
    runs = lift_runs();
  } catch (const std::exception& e) {
    std::cout << "lift runs failed: " << e.what() << std::endl;
  }
  report(3, "structured-attribute lift", [&] { return structured_lift(runs); });
  report(4, "separator ablation", separator_ablation);
  report(5, "word-averaging ordering", [&] { return word_avg_ordering(runs); });
  report(6, "hierarchical oracle equivalence", hierarchical_oracle);
  report(7, "hierarchical failure mode", hierarchical_failure_mode);
  report(8, "SGDR schedule exactness", sgdr_exactness);
  report(9, "serving transparency and batching", serving);
  report(10, "persistence round trips", persistence);
  return all ? 0 : 1;
}
