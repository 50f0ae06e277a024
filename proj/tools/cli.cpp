#include "cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <pthread.h>
#include <sstream>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "prodcat/catalog.hpp"
#include "prodcat/config.hpp"
#include "prodcat/error.hpp"
#include "prodcat/hierarchical.hpp"
#include "prodcat/metrics.hpp"
#include "prodcat/multicnn.hpp"
#include "prodcat/run_store.hpp"
#include "prodcat/serve.hpp"
#include "prodcat/synthetic.hpp"
#include "prodcat/trainer.hpp"

namespace prodcat::cli {

namespace {

namespace fs = std::filesystem;

/// Bad flag values found after parsing; reported like parse errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Data {
  Taxonomy taxonomy;
  std::vector<LabeledExample> examples;
};

Data load_data(const fs::path& data, const std::string& taxonomy_flag, std::ostream& err) {
  const bool dir = fs::is_directory(data);
  const fs::path corpus = dir ? data / "corpus.jsonl" : data;
  const fs::path taxonomy = !taxonomy_flag.empty() ? fs::path(taxonomy_flag)
                            : dir                   ? data / "taxonomy.txt"
                                                    : data.parent_path() / "taxonomy.txt";
  Data out;
  out.taxonomy = Taxonomy::load(taxonomy);
  auto result = ingest(corpus, out.taxonomy);
  for (const auto& e : result.errors) {
    err << "warning: " << corpus.string() << ":" << e.line << ": " << e.message << "\n";
  }
  if (result.examples.empty()) {
    throw Error("no valid records in " + corpus.string());
  }
  out.examples = std::move(result.examples);
  return out;
}

std::vector<LabeledExample> load_examples(const fs::path& path, const Taxonomy& taxonomy, std::ostream& err) {
  auto result = ingest(path, taxonomy);
  for (const auto& e : result.errors) {
    err << "warning: " << path.string() << ":" << e.line << ": " << e.message << "\n";
  }
  if (result.examples.empty()) {
    throw Error("no valid records in " + path.string());
  }
  return std::move(result.examples);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

Vocabularies load_vocabularies(const fs::path& dir, const ModelConfig& model) {
  Vocabularies vocab;
  for (const auto& c : model.channels) {
    vocab.unstructured[c.attribute] =
        std::make_shared<const Dictionary>(Dictionary::load(dir / dictionary_file(c.attribute)));
  }
  if (model.structured_mode != StructuredMode::none) {
    vocab.structured = std::make_shared<const Dictionary>(Dictionary::load(dir / "dict.structured.tsv"));
  }
  return vocab;
}

void print_report(std::ostream& out, const MetricsReport& report) {
  out << "examples " << report.examples << "\n";
  for (const auto& [k, acc] : report.topk_accuracy) {
    out << "top" << k << " " << fixed(acc) << "\n";
  }
}

MetricsReport evaluate_run(const Run& run, std::span<const LabeledExample> examples) {
  if (run.multicnn) {
    return evaluate(*run.multicnn, examples);
  }
  return evaluate(*run.hierarchical, examples, run.config.beam);
}

// ---------------------------------------------------------------- commands

struct BuildDictsArgs {
  std::string config, data, taxonomy, out;
};

int build_dicts(const BuildDictsArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = RunConfig::load(a.config);
  const auto data = load_data(a.data, a.taxonomy, err);
  const auto products = products_of(data.examples);
  const auto vocab = Vocabularies::build(cfg.model, products);
  fs::create_directories(a.out);
  for (const auto& [attribute, dict] : vocab.unstructured) {
    dict->save(fs::path(a.out) / dictionary_file(attribute));
    out << dictionary_file(attribute) << " " << dict->size() << " tokens\n";
  }
  if (vocab.structured) {
    vocab.structured->save(fs::path(a.out) / "dict.structured.tsv");
    out << "dict.structured.tsv " << vocab.structured->size() << " tokens\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config, data, taxonomy, out, dicts;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;
};

int train_command(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = RunConfig::load(a.config);
  if (a.epochs) {
    cfg.train.epochs = *a.epochs;
  }
  const auto data = load_data(a.data, a.taxonomy, err);
  const auto parts = make_split(data.examples, cfg.train, a.seed);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  fs::remove(dir / "metrics.jsonl");
  out << "split train=" << parts.train.size() << " validation=" << parts.validation.size()
      << " test=" << parts.test.size() << "\n";

  if (cfg.kind == ModelKind::hierarchical) {
    auto hcfg = cfg.hierarchical;
    hcfg.seed = a.seed;
    const auto model = train_hierarchical(parts.train, data.taxonomy, hcfg);
    save_run(dir, cfg, model);
    if (!parts.validation.empty()) {
      out << "validation top1 " << fixed(evaluate(model, parts.validation, cfg.beam).top(1)) << "\n";
    }
  } else {
    const auto products = products_of(parts.train);
    auto vocab = a.dicts.empty() ? Vocabularies::build(cfg.model, products) : load_vocabularies(a.dicts, cfg.model);
    MultiCnnModel model(cfg.model, std::move(vocab), data.taxonomy.leaf_labels(), a.seed);
    out << "parameters " << model.parameter_count() << "\n";
    const auto result = train(model, parts, cfg.train, a.seed, [&](const EpochRecord& r) {
      append_epoch(dir, r);
      out << "epoch " << r.epoch << "/" << cfg.train.epochs << " train_loss " << fixed(r.train_loss) << " val_loss "
          << fixed(r.val_loss) << " val_top1 " << fixed(r.val_top1) << " lr " << fixed(r.lr, 6) << "\n";
    });
    if (result.curve.size() >= 2) {
      out << "first-epoch val_loss / final val_loss " << fixed(result.curve.front().val_loss / result.curve.back().val_loss)
          << "\n";
    }
    out << "best epoch " << result.best_epoch << "\n";
    save_run(dir, cfg, data.taxonomy, model);
  }
  write_corpus(dir / "test.jsonl", parts.test);
  out << "wrote " << dir.string() << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string run, data, out;
};

int evaluate_command(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const auto run = load_run(a.run);
  const fs::path data = a.data.empty() ? fs::path(a.run) / "test.jsonl" : fs::path(a.data);
  const auto examples = load_examples(data, run.taxonomy, err);
  const auto report = evaluate_run(run, examples);
  const fs::path dest = a.out.empty() ? fs::path(a.run) / "report.json" : fs::path(a.out);
  report.save(dest);
  print_report(out, report);
  if (run.hierarchical) {
    const auto levels = error_levels(*run.hierarchical, examples, run.config.beam);
    for (const auto& [level, count] : levels.by_level) {
      out << "errors at level " << level << " " << count << " (" << fixed(levels.fraction(level)) << ")\n";
    }
  }
  out << "wrote " << dest.string() << "\n";
  return 0;
}

struct CompareArgs {
  std::string a, b, data;
  std::size_t min_support = 100;
  std::size_t top = 0;
};

int compare_command(const CompareArgs& c, std::ostream& out, std::ostream& err) {
  auto report_for = [&](const std::string& dir) {
    const fs::path saved = fs::path(dir) / "report.json";
    if (c.data.empty() && fs::exists(saved)) {
      return MetricsReport::load(saved);
    }
    const auto run = load_run(dir);
    const fs::path data = c.data.empty() ? fs::path(dir) / "test.jsonl" : fs::path(c.data);
    return evaluate_run(run, load_examples(data, run.taxonomy, err));
  };
  const auto ra = report_for(c.a);
  const auto rb = report_for(c.b);
  if (ra.examples != rb.examples) {
    throw Error("reports cover different evaluation sets (" + std::to_string(ra.examples) + " vs " +
                std::to_string(rb.examples) + " examples)");
  }
  out << "a top1 " << fixed(ra.top(1)) << "\n";
  out << "b top1 " << fixed(rb.top(1)) << "\n";
  const auto lift = f1_lift_report(ra, rb, c.min_support);
  out << "rank\tlabel\tdelta_f1\tsupport\n";
  for (std::size_t i = 0; i < lift.size() && (c.top == 0 || i < c.top); ++i) {
    out << i + 1 << "\t" << lift[i].label << "\t" << fixed(lift[i].delta_f1, 3) << "\t" << lift[i].support << "\n";
  }
  return 0;
}

struct PredictArgs {
  std::string run, data;
  std::size_t k = 3;
};

int predict_command(const PredictArgs& a, std::ostream& out, std::ostream& /*err*/) {
  const auto run = load_run(a.run);
  if (a.k < 1 || a.k > run.labels.size()) {
    throw UsageError("--k must be in [1, " + std::to_string(run.labels.size()) + "]");
  }
  std::ifstream in(a.data);
  if (!in) {
    throw IoError("cannot read " + a.data);
  }
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    LabeledExample ex;
    try {
      ex = parse_record(line, false);
    } catch (const std::invalid_argument& e) {
      throw Error(a.data + ":" + std::to_string(number) + ": " + e.what());
    }
    nlohmann::ordered_json doc{{"id", ex.product.id}, {"predictions", nlohmann::ordered_json::array()}};
    if (run.multicnn) {
      for (const auto& p : predict_topk(*run.multicnn, ex.product, a.k)) {
        doc["predictions"].push_back({{"label", p.label}, {"probability", p.probability}});
      }
    } else {
      for (const auto& s : hierarchical_topk(ex.product, *run.hierarchical, a.k, std::max(a.k, run.config.beam))) {
        doc["predictions"].push_back({{"label", s.label}, {"probability", s.probability}});
      }
    }
    out << doc.dump() << "\n";
  }
  return 0;
}

struct ServeArgs {
  std::string run, bind;
  std::optional<double> poll_interval;
  std::optional<std::size_t> max_batch;
  std::optional<std::size_t> k;
};

int serve_command(const ServeArgs& a, std::ostream& out, std::ostream& /*err*/) {
  // Block the shutdown signals before any thread starts so that only sigwait
  // below sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &signals, &previous);

  const auto run = load_run(a.run);
  if (!run.multicnn) {
    throw Error("serve needs a multicnn run");
  }
  auto batch = run.config.serve;
  std::string bind = run.config.bind;
  apply_env_overrides(batch, bind);
  if (a.poll_interval) batch.poll_interval = Seconds(*a.poll_interval);
  if (a.max_batch) batch.max_batch = *a.max_batch;
  if (a.k) batch.k = *a.k;
  if (!a.bind.empty()) bind = a.bind;
  batch.validate();

  PredictionService service(run.multicnn, batch, run.config.hash());
  service.start();
  HttpServer server(service);
  const int port = server.start(bind);
  out << "listening on " << parse_bind(bind).first << ":" << port << " poll_interval " << batch.poll_interval.count()
      << " max_batch " << batch.max_batch << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  service.stop();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  out << "stopped" << std::endl;
  return 0;
}

struct SyntheticArgs {
  std::size_t classes = 50;
  std::size_t per_class = 200;
  double overlap = 0.3;
  std::string attr_signal = "strong";
  std::string kind = "standard";
  std::uint64_t seed = 0;
  std::string out;
};

int gen_synthetic(const SyntheticArgs& a, std::ostream& out, std::ostream& /*err*/) {
  SyntheticSpec spec;
  try {
    spec.classes = a.classes;
    spec.per_class = a.per_class;
    spec.overlap = a.overlap;
    spec.attr_signal = parse_attr_signal(a.attr_signal);
    spec.kind = parse_corpus_kind(a.kind);
    spec.seed = a.seed;
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto corpus = generate_synthetic(spec);
  corpus.write(a.out);
  out << "wrote " << corpus.examples.size() << " products in " << corpus.classes.size() << " classes to " << a.out
      << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Product categorization: dictionaries, training, evaluation and serving", "prodcat"};
  app.require_subcommand(1);

  BuildDictsArgs bd;
  auto* cmd_bd = app.add_subcommand("build-dicts", "Build per-attribute and structured dictionaries from a corpus");
  cmd_bd->add_option("--config", bd.config, "Run config file")->required();
  cmd_bd->add_option("--data", bd.data, "Corpus directory or .jsonl file")->required();
  cmd_bd->add_option("--taxonomy", bd.taxonomy, "Taxonomy file (default: next to the corpus)");
  cmd_bd->add_option("--out", bd.out, "Output directory")->required();

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "Split a corpus, train a model and write a run directory");
  cmd_tr->add_option("--config", tr.config, "Run config file")->required();
  cmd_tr->add_option("--data", tr.data, "Corpus directory or .jsonl file")->required();
  cmd_tr->add_option("--taxonomy", tr.taxonomy, "Taxonomy file (default: next to the corpus)");
  cmd_tr->add_option("--out", tr.out, "Run directory")->required();
  cmd_tr->add_option("--seed", tr.seed, "Seed for splitting, initialization and shuffling");
  cmd_tr->add_option("--dicts", tr.dicts, "Reuse dictionaries from build-dicts");
  cmd_tr->add_option("--epochs", tr.epochs, "Override the configured epoch count");

  EvaluateArgs ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "Top-k accuracy and per-class f1 of a run");
  cmd_ev->add_option("--run", ev.run, "Run directory")->required();
  cmd_ev->add_option("--data", ev.data, "Labeled .jsonl file (default: the run's test split)");
  cmd_ev->add_option("--out", ev.out, "Report path (default: <run>/report.json)");

  CompareArgs cp;
  auto* cmd_cp = app.add_subcommand("compare", "Per-class f1 lift of run b over run a");
  cmd_cp->add_option("--a", cp.a, "Baseline run directory")->required();
  cmd_cp->add_option("--b", cp.b, "Candidate run directory")->required();
  cmd_cp->add_option("--data", cp.data, "Evaluate both runs on this labeled .jsonl file");
  cmd_cp->add_option("--min-support", cp.min_support, "Skip classes with fewer test examples");
  cmd_cp->add_option("--top", cp.top, "Print only the first N classes (0 = all)");

  PredictArgs pr;
  auto* cmd_pr = app.add_subcommand("predict", "Top-k labels for each product in a .jsonl file");
  cmd_pr->add_option("--run", pr.run, "Run directory")->required();
  cmd_pr->add_option("--data", pr.data, ".jsonl products (labels optional)")->required();
  cmd_pr->add_option("--k", pr.k, "Predictions per product");

  ServeArgs sv;
  auto* cmd_sv = app.add_subcommand("serve", "Serve a run over HTTP with micro-batching");
  cmd_sv->add_option("--run", sv.run, "Run directory")->required();
  cmd_sv->add_option("--bind", sv.bind, "host:port (port 0 picks a free port)");
  cmd_sv->add_option("--poll-interval", sv.poll_interval, "Seconds between queue drains");
  cmd_sv->add_option("--max-batch", sv.max_batch, "Largest batch per forward pass");
  cmd_sv->add_option("--k", sv.k, "Default predictions per request");

  SyntheticArgs gs;
  auto* cmd_gs = app.add_subcommand("gen-synthetic", "Write a synthetic taxonomy, corpus and truth file");
  cmd_gs->add_option("--classes", gs.classes, "Number of product types");
  cmd_gs->add_option("--per-class", gs.per_class, "Products per type");
  cmd_gs->add_option("--overlap", gs.overlap, "Share of title words drawn from the common pool");
  cmd_gs->add_option("--attr-signal", gs.attr_signal, "none, weak or strong");
  cmd_gs->add_option("--kind", gs.kind, "standard, confusable or separator");
  cmd_gs->add_option("--seed", gs.seed, "Generator seed");
  cmd_gs->add_option("--out", gs.out, "Output directory")->required();

  std::vector<const char*> argv{"prodcat"};
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "error: " << e.what() << "\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (cmd_bd->parsed()) return build_dicts(bd, out, err);
    if (cmd_tr->parsed()) return train_command(tr, out, err);
    if (cmd_ev->parsed()) return evaluate_command(ev, out, err);
    if (cmd_cp->parsed()) return compare_command(cp, out, err);
    if (cmd_pr->parsed()) return predict_command(pr, out, err);
    if (cmd_sv->parsed()) return serve_command(sv, out, err);
    if (cmd_gs->parsed()) return gen_synthetic(gs, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.get_subcommands().front()->help();
    return 2;
  } catch (const std::exception& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    err << "error: " << message << "\n";
    return 1;
  }
  return 2;
}

}  // namespace prodcat::cli
