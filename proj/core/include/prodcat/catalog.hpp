#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prodcat {

/// A catalog item: free-text attributes keyed by name plus an ordered list of
/// structured name/value pairs.
struct Product {
  std::string id;
  std::map<std::string, std::string> unstructured;
  std::vector<std::pair<std::string, std::string>> structured;

  friend bool operator==(const Product&, const Product&) = default;
};

struct LabeledExample {
  Product product;
  std::string label;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Rooted category tree. Leaves are product types and double as class labels,
/// so leaf names are unique across the whole tree.
///
/// Text form: one root-to-leaf path per line, segments joined by " > ", the
/// implicit root omitted. Blank lines and lines starting with '#' are ignored.
class Taxonomy {
 public:
  using NodeId = std::size_t;
  static constexpr NodeId kRoot = 0;

  struct Node {
    std::string name;
    NodeId parent = kRoot;
    std::vector<NodeId> children;
    std::size_t depth = 0;
  };

  Taxonomy();

  static Taxonomy from_paths(const std::vector<std::vector<std::string>>& paths);
  static Taxonomy parse(std::string_view text);
  static Taxonomy load(const std::filesystem::path& path);

  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  bool is_leaf(NodeId id) const { return nodes_.at(id).children.empty(); }

  /// Leaves in declaration order; this order defines class indices.
  const std::vector<NodeId>& leaves() const { return leaves_; }
  std::vector<std::string> leaf_labels() const;
  std::size_t leaf_count() const { return leaves_.size(); }

  std::optional<NodeId> find_leaf(std::string_view label) const;
  /// Position of a leaf within leaves().
  std::optional<std::size_t> leaf_index(std::string_view label) const;
  /// Any node with this name (first in declaration order).
  std::optional<NodeId> find_node(std::string_view name) const;

  /// Node ids from the root to `id`, inclusive at both ends.
  std::vector<NodeId> path_to(NodeId id) const;
  /// Segments below the root joined by " > ".
  std::string path_string(NodeId id) const;
  std::size_t max_depth() const;

 private:
  NodeId add_child(NodeId parent, std::string name);

  std::vector<Node> nodes_;
  std::vector<NodeId> leaves_;
  std::map<std::string, NodeId, std::less<>> leaf_by_name_;
};

/// A record that failed validation during ingest; `line` is 1-based.
struct RecordError {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  std::vector<LabeledExample> examples;
  std::vector<RecordError> errors;
};

/// Reads a line-delimited JSON corpus. Each record carries `id`, `label`,
/// `unstructured` (object of strings) and `structured` (array of [name, value]).
/// Bad records are reported per line; an unreadable file throws IoError.
IngestResult ingest(const std::filesystem::path& path, const Taxonomy& taxonomy);
IngestResult ingest_text(std::string_view text, const Taxonomy& taxonomy);

/// Record parsing without taxonomy checks. Throws std::invalid_argument naming
/// the offending field. With `require_label` off a missing label is left empty.
LabeledExample parse_record(std::string_view line, bool require_label = true);
std::string format_record(const LabeledExample& example);
void write_corpus(const std::filesystem::path& path, std::span<const LabeledExample> examples);

/// Repeats examples of low-support classes cyclically until each class has at
/// least `floor` examples. The input order is preserved and repetitions are
/// appended class by class in order of first appearance.
std::vector<LabeledExample> stratify(std::span<const LabeledExample> examples, std::size_t floor = 200);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> validation;
  std::vector<LabeledExample> test;
};

/// Per-class seeded shuffle followed by largest-remainder partitioning.
DatasetSplit split(std::span<const LabeledExample> examples, SplitFractions fractions, std::uint64_t seed);

/// Largest-remainder apportionment of `n` items by `fractions`; ties go to the
/// earlier part (train, then validation, then test).
std::array<std::size_t, 3> apportion(std::size_t n, SplitFractions fractions);

}  // namespace prodcat
