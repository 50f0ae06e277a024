#include "prodcat/run_store.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prodcat/checkpoint.hpp"
#include "prodcat/error.hpp"

namespace prodcat {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kRunFormat = 1;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
}

json base_manifest(const RunConfig& config, const std::vector<std::string>& labels) {
  json doc;
  doc["format"] = kRunFormat;
  doc["model"] = std::string(to_string(config.kind));
  doc["config"] = "config.txt";
  doc["config_hash"] = config.hash();
  doc["taxonomy"] = "taxonomy.txt";
  doc["labels"] = labels;
  doc["checkpoint"] = "model.ckpt";
  return doc;
}

}  // namespace

std::string dictionary_file(const std::string& attribute) {
  std::string safe;
  for (const char c : attribute) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    safe += ok ? c : '_';
  }
  return "dict." + safe + ".tsv";
}

void save_run(const fs::path& dir, const RunConfig& config, const Taxonomy& taxonomy, const MultiCnnModel& model) {
  fs::create_directories(dir);
  auto doc = base_manifest(config, model.labels());
  json dicts = json::object();
  for (const auto& channel : config.model.channels) {
    const auto name = dictionary_file(channel.attribute);
    model.vocabularies().unstructured.at(channel.attribute)->save(dir / name);
    dicts[channel.attribute] = name;
  }
  if (model.vocabularies().structured) {
    model.vocabularies().structured->save(dir / "dict.structured.tsv");
    doc["structured_dictionary"] = "dict.structured.tsv";
  }
  doc["dictionaries"] = dicts;
  write_file(dir / "config.txt", config.to_text());
  taxonomy.save(dir / "taxonomy.txt");
  save_checkpoint(dir / "model.ckpt", snapshot(model.parameters(), config.hash()));
  write_file(dir / "manifest.json", doc.dump(2) + "\n");
}

void save_run(const fs::path& dir, const RunConfig& config, const HierarchicalModel& model) {
  fs::create_directories(dir);
  auto doc = base_manifest(config, model.taxonomy().leaf_labels());
  write_file(dir / "config.txt", config.to_text());
  model.taxonomy().save(dir / "taxonomy.txt");
  save_checkpoint(dir / "model.ckpt", model.to_checkpoint());
  write_file(dir / "manifest.json", doc.dump(2) + "\n");
}

Run load_run(const fs::path& dir) {
  json doc;
  try {
    doc = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  Run run;
  try {
    if (doc.at("format").get<int>() != kRunFormat) {
      throw IoError("unsupported run format in " + dir.string());
    }
    run.config = RunConfig::parse(read_file(dir / doc.at("config").get<std::string>()));
    if (doc.at("config_hash").get<std::uint64_t>() != run.config.hash()) {
      throw IoError("config.txt in " + dir.string() + " does not match the manifest hash");
    }
    run.taxonomy = Taxonomy::load(dir / doc.at("taxonomy").get<std::string>());
    run.labels = doc.at("labels").get<std::vector<std::string>>();
    const auto ckpt = load_checkpoint(dir / doc.at("checkpoint").get<std::string>());

    if (parse_model_kind(doc.at("model").get<std::string>()) == ModelKind::hierarchical) {
      run.hierarchical = std::make_shared<HierarchicalModel>(
          HierarchicalModel::from_checkpoint(run.taxonomy, run.config.hierarchical, ckpt));
      return run;
    }

    if (ckpt.config_hash != run.config.hash()) {
      throw IoError("checkpoint in " + dir.string() + " was written for a different config");
    }
    Vocabularies vocab;
    for (const auto& [attribute, file] : doc.at("dictionaries").items()) {
      vocab.unstructured[attribute] =
          std::make_shared<const Dictionary>(Dictionary::load(dir / file.get<std::string>()));
    }
    if (const auto it = doc.find("structured_dictionary"); it != doc.end()) {
      vocab.structured = std::make_shared<const Dictionary>(Dictionary::load(dir / it->get<std::string>()));
    }
    auto model = std::make_shared<MultiCnnModel>(run.config.model, std::move(vocab), run.labels, 0);
    restore(ckpt, model->parameters());
    run.multicnn = std::move(model);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return run;
}

std::string format_epoch(const EpochRecord& r) {
  json doc{{"epoch", r.epoch},
           {"train_loss", r.train_loss},
           {"val_loss", r.val_loss},
           {"val_top1", r.val_top1},
           {"lr", r.lr}};
  return doc.dump();
}

void append_epoch(const fs::path& dir, const EpochRecord& record) {
  std::ofstream out(dir / "metrics.jsonl", std::ios::app);
  out << format_epoch(record) << '\n';
  if (!out) {
    throw IoError("cannot append to " + (dir / "metrics.jsonl").string());
  }
}

std::vector<EpochRecord> read_epochs(const fs::path& dir) {
  std::ifstream in(dir / "metrics.jsonl");
  if (!in) {
    throw IoError("cannot read " + (dir / "metrics.jsonl").string());
  }
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto doc = json::parse(line);
    out.push_back({doc.at("epoch").get<std::size_t>(), doc.at("train_loss").get<double>(),
                   doc.at("val_loss").get<double>(), doc.at("val_top1").get<double>(), doc.at("lr").get<double>()});
  }
  return out;
}

}  // namespace prodcat
