#include "prodcat/multicnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "prodcat/error.hpp"

namespace prodcat {

std::string_view to_string(StructuredMode mode) {
  switch (mode) {
    case StructuredMode::none:
      return "none";
    case StructuredMode::word_avg:
      return "word_avg";
    case StructuredMode::conv:
      return "conv";
  }
  return "none";
}

StructuredMode parse_structured_mode(std::string_view text) {
  if (text == "none") return StructuredMode::none;
  if (text == "word_avg") return StructuredMode::word_avg;
  if (text == "conv") return StructuredMode::conv;
  throw ConfigError("unknown structured_mode '" + std::string(text) + "' (expected none, word_avg or conv)");
}

void ModelConfig::validate() const {
  if (channels.empty()) {
    throw ConfigError("model needs at least one unstructured channel");
  }
  for (const auto& c : channels) {
    if (c.attribute.empty() || c.max_len < 1 || c.dict_size < Dictionary::kReserved) {
      throw ConfigError("invalid channel '" + c.attribute + "'");
    }
  }
  if (num_classes < 2) {
    throw ConfigError("num_classes must be >= 2");
  }
  if (embed_dim < 1 || conv.embed_dim != embed_dim) {
    throw ConfigError("conv embed_dim " + std::to_string(conv.embed_dim) + " differs from embed_dim " +
                      std::to_string(embed_dim));
  }
  try {
    conv.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(embed_init > 0.0)) {
    throw ConfigError("embed_init must be > 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0, 1)");
  }
  for (auto w : fc_sizes) {
    if (w < 1) {
      throw ConfigError("fc layer widths must be >= 1");
    }
  }
  if (structured_mode != StructuredMode::none &&
      (structured_max_len < 1 || structured_dict_size < Dictionary::kReserved)) {
    throw ConfigError("invalid structured channel limits");
  }
}

std::size_t ModelConfig::feature_width() const {
  std::size_t width = channels.size() * conv.output_width();
  if (structured_mode == StructuredMode::conv) {
    width += conv.output_width();
  } else if (structured_mode == StructuredMode::word_avg) {
    width += embed_dim;
  }
  return width;
}

Vocabularies Vocabularies::build(const ModelConfig& config, std::span<const Product> products) {
  Vocabularies vocab;
  for (const auto& channel : config.channels) {
    std::vector<std::string> corpus;
    corpus.reserve(products.size());
    for (const auto& p : products) {
      if (const auto it = p.unstructured.find(channel.attribute); it != p.unstructured.end()) {
        corpus.push_back(it->second);
      }
    }
    vocab.unstructured[channel.attribute] =
        std::make_shared<const Dictionary>(build_dictionary(corpus, channel.dict_size));
  }
  if (config.structured_mode != StructuredMode::none) {
    vocab.structured = std::make_shared<const Dictionary>(build_attribute_dictionary(products, config.structured_dict_size));
  }
  return vocab;
}

template <typename T>
std::vector<std::size_t> rank_classes(std::span<const T> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(k);
  return order;
}

template std::vector<std::size_t> rank_classes<float>(std::span<const float>, std::size_t);
template std::vector<std::size_t> rank_classes<double>(std::span<const double>, std::size_t);

template <typename T>
MultiCnn<T>::MultiCnn(ModelConfig config, Vocabularies vocab, std::vector<std::string> labels, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)), labels_(std::move(labels)),
      dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.num_classes = labels_.size();
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t dim = config_.embed_dim;

  auto make_embedding = [&](const std::string& name, std::size_t rows) {
    BasicTensor<T> table({rows, dim});
    fill_uniform(table, config_.embed_init, rng);
    return BasicParameter<T>(name, std::move(table));
  };

  for (const auto& channel : config_.channels) {
    const auto it = vocab_.unstructured.find(channel.attribute);
    if (it == vocab_.unstructured.end() || !it->second) {
      throw ConfigError("no dictionary for channel '" + channel.attribute + "'");
    }
    const std::string prefix = "channel." + channel.attribute;
    Channel c{make_embedding(prefix + ".embedding", it->second->size()), {}};
    c.bank = ConvBank<T>::make(config_.conv, prefix, rng);
    channels_.push_back(std::move(c));
  }
  if (config_.structured_mode != StructuredMode::none) {
    if (!vocab_.structured) {
      throw ConfigError("structured mode '" + std::string(to_string(config_.structured_mode)) +
                        "' requires a structured-attribute dictionary");
    }
    structured_.emplace(Channel{make_embedding("structured.embedding", vocab_.structured->size()), {}});
    if (config_.structured_mode == StructuredMode::conv) {
      structured_->bank = ConvBank<T>::make(config_.conv, "structured", rng);
    }
  }

  std::size_t in = config_.feature_width();
  auto make_dense = [&](const std::string& name, std::size_t out) {
    BasicTensor<T> w({in, out});
    fill_uniform(w, std::sqrt(6.0 / static_cast<double>(in)), rng);
    dense_.push_back(Dense{BasicParameter<T>(name + ".weight", std::move(w)),
                           BasicParameter<T>(name + ".bias", BasicTensor<T>({out}))});
    in = out;
  };
  for (std::size_t i = 0; i < config_.fc_sizes.size(); ++i) {
    make_dense("fc" + std::to_string(i), config_.fc_sizes[i]);
  }
  make_dense("output", labels_.size());
}

template <typename T>
EncodedProduct MultiCnn<T>::encode(const Product& product) const {
  const std::size_t min_len = std::max(kMinEncodedLength, config_.conv.max_width());
  EncodedProduct out;
  out.channels.reserve(config_.channels.size());
  for (const auto& channel : config_.channels) {
    const auto it = product.unstructured.find(channel.attribute);
    const std::string_view text = it == product.unstructured.end() ? std::string_view{} : std::string_view(it->second);
    auto seq = prodcat::encode(text, *vocab_.unstructured.at(channel.attribute), channel.max_len, min_len);
    seq.source_attribute = channel.attribute;
    out.channels.push_back(std::move(seq));
  }
  if (structured_) {
    out.structured = prodcat::encode(serialize_structured(product, config_.use_separator), *vocab_.structured,
                                     config_.structured_max_len, min_len);
    out.structured.source_attribute = "structured";
  }
  return out;
}

template <typename T>
Var MultiCnn<T>::channel_features(Graph<T>& g, Channel& channel, const TokenSequence& seq) {
  const Var embedded = embedding_lookup(g, channel.embedding, std::span<const std::int32_t>(seq.indices));
  const auto maps = conv_bank(g, embedded, channel.bank);
  std::vector<Var> pooled;
  pooled.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    pooled.push_back(maxpool_time(g, maps[i], pad_only_windows(seq.pad_count, channel.bank.spec.widths[i])));
  }
  return concat(g, std::span<const Var>(pooled));
}

template <typename T>
Var MultiCnn<T>::features(Graph<T>& g, const EncodedProduct& encoded) {
  if (encoded.channels.size() != channels_.size()) {
    throw std::invalid_argument("encoded product has " + std::to_string(encoded.channels.size()) +
                                " channels, model expects " + std::to_string(channels_.size()));
  }
  std::vector<Var> parts;
  parts.reserve(channels_.size() + 1);
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    parts.push_back(channel_features(g, channels_[c], encoded.channels[c]));
  }
  if (config_.structured_mode == StructuredMode::conv) {
    parts.push_back(channel_features(g, *structured_, encoded.structured));
  } else if (config_.structured_mode == StructuredMode::word_avg) {
    const auto& seq = encoded.structured;
    const auto real = std::span<const std::int32_t>(seq.indices).subspan(seq.pad_count);
    const std::int32_t pad[] = {Dictionary::kPad};
    const Var embedded = embedding_lookup(g, structured_->embedding, real.empty() ? std::span<const std::int32_t>(pad) : real);
    parts.push_back(mean_time(g, embedded, real.size()));
  }
  return concat(g, std::span<const Var>(parts));
}

template <typename T>
Var MultiCnn<T>::forward(Graph<T>& g, std::span<const EncodedProduct> batch) {
  if (batch.empty()) {
    throw std::invalid_argument("forward: empty batch");
  }
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (const auto& encoded : batch) {
    rows.push_back(features(g, encoded));
  }
  Var h = stack_rows(g, std::span<const Var>(rows));
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    h = linear(g, h, dense_[i].weight, dense_[i].bias);
    if (i + 1 < dense_.size()) {
      h = relu(g, h);
      if (g.recording() && config_.dropout > 0.0) {
        h = dropout(g, h, config_.dropout, dropout_rng_);
      }
    }
  }
  return h;
}

template <typename T>
std::vector<std::vector<T>> MultiCnn<T>::logits(std::span<const Product> products) const {
  if (products.empty()) {
    return {};
  }
  std::vector<EncodedProduct> encoded;
  encoded.reserve(products.size());
  for (const auto& p : products) {
    encoded.push_back(encode(p));
  }
  // A non-recording graph only reads parameters.
  auto& self = const_cast<MultiCnn&>(*this);
  Graph<T> g(false);
  const auto& out = g.value(self.forward(g, encoded));
  std::vector<std::vector<T>> rows(products.size());
  for (std::size_t b = 0; b < products.size(); ++b) {
    const auto r = out.row(b);
    rows[b].assign(r.begin(), r.end());
  }
  return rows;
}

template <typename T>
std::vector<T> MultiCnn<T>::logits(const Product& product) const {
  return logits(std::span<const Product>(&product, 1)).front();
}

template <typename T>
std::vector<BasicParameter<T>*> MultiCnn<T>::parameters() {
  std::vector<BasicParameter<T>*> out;
  auto add_channel = [&](Channel& c) {
    out.push_back(&c.embedding);
    for (std::size_t i = 0; i < c.bank.weights.size(); ++i) {
      out.push_back(&c.bank.weights[i]);
      out.push_back(&c.bank.biases[i]);
    }
  };
  for (auto& c : channels_) {
    add_channel(c);
  }
  if (structured_) {
    add_channel(*structured_);
  }
  for (auto& d : dense_) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

template <typename T>
std::vector<const BasicParameter<T>*> MultiCnn<T>::parameters() const {
  auto mutable_params = const_cast<MultiCnn&>(*this).parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename T>
std::size_t MultiCnn<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) {
    n += p->value.size();
  }
  return n;
}

template class MultiCnn<float>;
template class MultiCnn<double>;

std::vector<Prediction> topk_from_logits(std::span<const float> logits, const std::vector<std::string>& labels,
                                         std::size_t k) {
  if (k < 1 || k > logits.size()) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(logits.size()) + "], got " + std::to_string(k));
  }
  const auto probs = softmax<float>(logits);
  std::vector<Prediction> out;
  for (auto idx : rank_classes<float>(probs, k)) {
    out.push_back(Prediction{idx, labels.at(idx), static_cast<double>(probs[idx])});
  }
  return out;
}

std::vector<Prediction> predict_topk(const MultiCnnModel& model, const Product& product, std::size_t k) {
  if (k < 1 || k > model.num_classes()) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(model.num_classes()) + "], got " +
                                std::to_string(k));
  }
  return topk_from_logits(model.logits(product), model.labels(), k);
}

}  // namespace prodcat
