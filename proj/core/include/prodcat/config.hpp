#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "prodcat/catalog.hpp"
#include "prodcat/hierarchical.hpp"
#include "prodcat/multicnn.hpp"
#include "prodcat/serve.hpp"

namespace prodcat {

enum class ModelKind { multicnn, hierarchical };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct TrainSettings {
  double base_lr = 0.05;
  double min_lr = 0.0;
  double momentum = 0.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 7;
  std::size_t stratify_floor = 200;
  SplitFractions split{};
};

/// Everything a run needs besides data and seed. Text form is one
/// `key = value` per line; '#' starts a comment; unknown keys are rejected.
///
///   model = multicnn | hierarchical
///   channels = product_name:32:500000, product_short_description:256:1000000
///   structured_mode = none | word_avg | conv
///   separator = true | false
///   conv_widths = 1,2,3,4,5
///   fc_sizes = 512,512
struct RunConfig {
  ModelKind kind = ModelKind::multicnn;
  ModelConfig model{};
  TrainSettings train{};
  HierarchicalConfig hierarchical{};
  std::size_t beam = 10;
  BatcherConfig serve{};
  std::string bind = "127.0.0.1:8080";

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical text; parse(to_text()) reproduces the config.
  std::string to_text() const;
  std::uint64_t hash() const;
  void validate() const;
};

}  // namespace prodcat
