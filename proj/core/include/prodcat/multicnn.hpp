#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prodcat/catalog.hpp"
#include "prodcat/graph.hpp"
#include "prodcat/ops.hpp"
#include "prodcat/text.hpp"

namespace prodcat {

/// How structured attributes reach the classifier.
enum class StructuredMode {
  none,      ///< unstructured channels only
  word_avg,  ///< mean of the serialized attributes' word embeddings
  conv,      ///< one more convolutional channel over the serialized attributes
};

std::string_view to_string(StructuredMode mode);
StructuredMode parse_structured_mode(std::string_view text);

/// One unstructured attribute with its own dictionary and embedding table.
struct ChannelConfig {
  std::string attribute;
  std::size_t max_len = 32;
  std::size_t dict_size = 500000;

  friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

struct ModelConfig {
  std::vector<ChannelConfig> channels{{"product_name", 32, 500000}, {"product_short_description", 256, 1000000}};
  StructuredMode structured_mode = StructuredMode::conv;
  bool use_separator = true;
  std::size_t structured_max_len = 256;
  std::size_t structured_dict_size = 100000;
  std::size_t embed_dim = 200;
  /// Embedding tables start uniform in [-embed_init, embed_init].
  double embed_init = 0.05;
  ConvBankSpec conv{};
  /// Hidden layer widths, each followed by a rectifier.
  std::vector<std::size_t> fc_sizes{512, 512};
  /// Dropout after each hidden layer while training.
  double dropout = 0.0;
  std::size_t num_classes = 2;

  void validate() const;
  /// Width of the concatenated feature vector fed to the first dense layer.
  std::size_t feature_width() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Dictionaries a model encodes with, keyed by unstructured attribute name.
struct Vocabularies {
  std::map<std::string, std::shared_ptr<const Dictionary>> unstructured;
  std::shared_ptr<const Dictionary> structured;

  /// Builds one dictionary per configured channel and, unless the structured
  /// mode is `none`, the joint attribute dictionary.
  static Vocabularies build(const ModelConfig& config, std::span<const Product> products);
};

struct EncodedProduct {
  std::vector<TokenSequence> channels;
  TokenSequence structured;
};

struct Prediction {
  std::size_t index = 0;
  std::string label;
  double probability = 0.0;
};

/// Class indices ordered by score (descending, ties by lower index), first k.
template <typename T>
std::vector<std::size_t> rank_classes(std::span<const T> scores, std::size_t k);

/// Flat classifier: per-attribute embedding + multi-width conv + max-over-time
/// channels, optionally a structured-attribute channel, then a dense stack.
template <typename T>
class MultiCnn {
 public:
  MultiCnn(ModelConfig config, Vocabularies vocab, std::vector<std::string> labels, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabularies& vocabularies() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t num_classes() const { return labels_.size(); }

  EncodedProduct encode(const Product& product) const;

  /// Concatenated channel features for one product -> [feature_width].
  Var features(Graph<T>& g, const EncodedProduct& encoded);
  /// Logits for a batch -> [B x num_classes].
  Var forward(Graph<T>& g, std::span<const EncodedProduct> batch);

  /// Batched inference on a non-recording graph; one logit row per product.
  std::vector<std::vector<T>> logits(std::span<const Product> products) const;
  std::vector<T> logits(const Product& product) const;

  std::vector<BasicParameter<T>*> parameters();
  std::vector<const BasicParameter<T>*> parameters() const;
  std::size_t parameter_count() const;

 private:
  struct Channel {
    BasicParameter<T> embedding;
    ConvBank<T> bank;
  };

  struct Dense {
    BasicParameter<T> weight;
    BasicParameter<T> bias;
  };

  Var channel_features(Graph<T>& g, Channel& channel, const TokenSequence& seq);

  ModelConfig config_;
  Vocabularies vocab_;
  std::vector<std::string> labels_;
  std::vector<Channel> channels_;
  std::optional<Channel> structured_;
  std::vector<Dense> dense_;
  std::mt19937_64 dropout_rng_;
};

using MultiCnnModel = MultiCnn<float>;

/// Softmax over the logits and the k most probable classes.
std::vector<Prediction> predict_topk(const MultiCnnModel& model, const Product& product, std::size_t k);
std::vector<Prediction> topk_from_logits(std::span<const float> logits, const std::vector<std::string>& labels,
                                         std::size_t k);

}  // namespace prodcat
