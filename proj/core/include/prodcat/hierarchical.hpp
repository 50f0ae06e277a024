#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prodcat/catalog.hpp"
#include "prodcat/checkpoint.hpp"
#include "prodcat/tensor.hpp"

namespace prodcat {

struct HashedFeature {
  std::uint32_t bucket = 0;
  float count = 0.0f;

  friend bool operator==(const HashedFeature&, const HashedFeature&) = default;
};

/// Sorted by bucket, no duplicates.
using SparseVector = std::vector<HashedFeature>;

/// Token counts of every unstructured attribute hashed with FNV-1a into
/// `hash_dim` buckets.
SparseVector hashed_bow(const Product& product, std::size_t hash_dim);

struct HierarchicalConfig {
  std::size_t hash_dim = std::size_t{1} << 18;
  double l2 = 1e-4;
  std::size_t epochs = 50;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  /// Worker threads for per-node training; nodes are independent.
  std::size_t threads = 1;

  void validate() const;
};

/// Multinomial logistic regression deciding between a node's children.
struct NodeClassifier {
  enum class Mode : int {
    trained = 0,
    single_child_data = 1,  ///< training data reached only one child
    no_data = 2,            ///< no training data; uniform over children
  };

  Taxonomy::NodeId node = Taxonomy::kRoot;
  std::vector<Taxonomy::NodeId> children;
  Mode mode = Mode::trained;
  std::size_t only_child = 0;
  Tensor weight;  ///< [hash_dim x children]
  Tensor bias;    ///< [children]
};

class HierarchicalModel {
 public:
  HierarchicalModel(Taxonomy taxonomy, HierarchicalConfig config);

  const Taxonomy& taxonomy() const { return taxonomy_; }
  const HierarchicalConfig& config() const { return config_; }

  /// P(child | node, x) for each child in taxonomy order. Nodes with a single
  /// child return {1}.
  std::vector<double> child_probabilities(Taxonomy::NodeId node, const SparseVector& x) const;

  /// nullptr for leaves and single-child nodes.
  const NodeClassifier* classifier(Taxonomy::NodeId node) const;
  std::size_t classifier_count() const { return classifiers_.size(); }

  /// Weight blocks keyed by node path ("node:<path>.weight" and so on).
  Checkpoint to_checkpoint() const;
  static HierarchicalModel from_checkpoint(Taxonomy taxonomy, HierarchicalConfig config, const Checkpoint& ckpt);
  std::uint64_t config_hash() const;

 private:
  friend HierarchicalModel train_hierarchical(std::span<const LabeledExample>, const Taxonomy&,
                                              const HierarchicalConfig&);

  Taxonomy taxonomy_;
  HierarchicalConfig config_;
  std::map<Taxonomy::NodeId, NodeClassifier> classifiers_;
};

/// One classifier per internal node with two or more children, each trained
/// with L2-regularized SGD on the examples whose label lies below it.
HierarchicalModel train_hierarchical(std::span<const LabeledExample> examples, const Taxonomy& taxonomy,
                                     const HierarchicalConfig& config);

struct LeafScore {
  Taxonomy::NodeId leaf = 0;
  std::size_t leaf_index = 0;
  std::string label;
  double probability = 0.0;
};

/// Beam search from the root; a path's score is the product of the
/// node-conditional probabilities along it. With beam >= leaf count nothing is
/// pruned. Results are ordered by probability, ties by leaf order.
std::vector<LeafScore> hierarchical_topk(const Product& product, const HierarchicalModel& model, std::size_t k,
                                         std::size_t beam = 10);

/// Depth of the node whose decision first sends `predicted` off the path to
/// `truth` (0 = root); nullopt when they are the same leaf.
std::optional<std::size_t> error_level(const Taxonomy& taxonomy, Taxonomy::NodeId predicted, Taxonomy::NodeId truth);

}  // namespace prodcat
