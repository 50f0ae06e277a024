#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace prodcat {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct MetricsReport {
  std::size_t examples = 0;
  /// k -> fraction of examples whose label is among the k best; k in {1,2,3}.
  std::map<std::size_t, double> topk_accuracy;
  std::map<std::string, ClassMetrics> per_class;

  double top(std::size_t k) const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static MetricsReport load(const std::filesystem::path& path);

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// `ranked[i]` is example i's class indices, best first, holding at least
/// min(3, labels.size()) entries. Per-class scores use the top-1 prediction;
/// 0/0 is scored as 0. Every label appears in per_class, even with support 0.
MetricsReport score_rankings(std::span<const std::vector<std::size_t>> ranked, std::span<const std::size_t> truth,
                             const std::vector<std::string>& labels);

struct LiftEntry {
  std::string label;
  double delta_f1 = 0.0;
  std::size_t support = 0;
};

/// f1(b) - f1(a) per label with support >= min_support, largest first (ties by
/// label). Throws std::invalid_argument when the label sets differ.
std::vector<LiftEntry> f1_lift_report(const MetricsReport& a, const MetricsReport& b, std::size_t min_support = 100);

}  // namespace prodcat
