#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prodcat/catalog.hpp"
#include "prodcat/config.hpp"
#include "prodcat/hierarchical.hpp"
#include "prodcat/multicnn.hpp"
#include "prodcat/trainer.hpp"

namespace prodcat {

/// A training run directory:
///
///   manifest.json       model kind, config hash, labels, file references
///   config.txt          RunConfig text
///   taxonomy.txt        taxonomy the labels come from
///   dict.<attr>.tsv     one per unstructured channel, plus dict.structured.tsv
///   model.ckpt          weights
///   metrics.jsonl       one record per epoch
///   test.jsonl          held-out examples
struct Run {
  RunConfig config;
  Taxonomy taxonomy;
  std::vector<std::string> labels;
  std::shared_ptr<MultiCnnModel> multicnn;
  std::shared_ptr<HierarchicalModel> hierarchical;
};

void save_run(const std::filesystem::path& dir, const RunConfig& config, const Taxonomy& taxonomy,
              const MultiCnnModel& model);
void save_run(const std::filesystem::path& dir, const RunConfig& config, const HierarchicalModel& model);
Run load_run(const std::filesystem::path& dir);

std::string format_epoch(const EpochRecord& record);
void append_epoch(const std::filesystem::path& dir, const EpochRecord& record);
std::vector<EpochRecord> read_epochs(const std::filesystem::path& dir);

/// File name for an attribute's dictionary inside a run directory.
std::string dictionary_file(const std::string& attribute);

}  // namespace prodcat
