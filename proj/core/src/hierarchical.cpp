#include "prodcat/hierarchical.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "prodcat/error.hpp"
#include "prodcat/text.hpp"

namespace prodcat {

namespace {

std::string node_key(const Taxonomy& tax, Taxonomy::NodeId id) { return "node:" + tax.path_string(id); }

std::vector<double> softmax_logits(std::vector<double> z) {
  const double peak = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : z) {
    v /= total;
  }
  return z;
}

struct NodeData {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
};

NodeClassifier fit_node(const Taxonomy& tax, Taxonomy::NodeId node, const NodeData& data,
                        const std::vector<SparseVector>& features, const HierarchicalConfig& cfg) {
  NodeClassifier clf;
  clf.node = node;
  clf.children = tax.node(node).children;
  const std::size_t classes = clf.children.size();

  std::vector<std::size_t> seen(classes, 0);
  for (auto t : data.targets) {
    ++seen[t];
  }
  const auto represented = std::count_if(seen.begin(), seen.end(), [](std::size_t n) { return n > 0; });
  if (represented == 0) {
    clf.mode = NodeClassifier::Mode::no_data;
    return clf;
  }
  if (represented == 1) {
    clf.mode = NodeClassifier::Mode::single_child_data;
    clf.only_child = static_cast<std::size_t>(std::find_if(seen.begin(), seen.end(), [](std::size_t n) { return n > 0; }) -
                                              seen.begin());
    return clf;
  }

  // Weights are kept as scale * v so the L2 shrink is O(1) per step.
  std::vector<double> v(cfg.hash_dim * classes, 0.0);
  std::vector<double> bias(classes, 0.0);
  double scale = 1.0;
  const double lr = cfg.learning_rate;
  const double shrink = 1.0 - lr * cfg.l2;

  std::mt19937_64 rng(cfg.seed ^ fnv1a64(node_key(tax, node)));
  std::vector<std::size_t> order(data.rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> z(classes);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) {
      const auto& x = features[data.rows[i]];
      const std::size_t y = data.targets[i];
      for (std::size_t c = 0; c < classes; ++c) z[c] = 0.0;
      for (const auto& f : x) {
        const double* row = v.data() + static_cast<std::size_t>(f.bucket) * classes;
        for (std::size_t c = 0; c < classes; ++c) z[c] += f.count * row[c];
      }
      for (std::size_t c = 0; c < classes; ++c) z[c] = bias[c] + scale * z[c];
      const auto p = softmax_logits(z);
      scale *= shrink;
      for (const auto& f : x) {
        double* row = v.data() + static_cast<std::size_t>(f.bucket) * classes;
        for (std::size_t c = 0; c < classes; ++c) {
          const double err = p[c] - (c == y ? 1.0 : 0.0);
          row[c] -= lr * err * f.count / scale;
        }
      }
      for (std::size_t c = 0; c < classes; ++c) {
        bias[c] -= lr * (p[c] - (c == y ? 1.0 : 0.0));
      }
      if (scale < 1e-6) {
        for (auto& w : v) w *= scale;
        scale = 1.0;
      }
    }
  }
  clf.weight = Tensor({cfg.hash_dim, classes});
  for (std::size_t i = 0; i < v.size(); ++i) {
    clf.weight[i] = static_cast<float>(scale * v[i]);
  }
  clf.bias = Tensor({classes});
  for (std::size_t c = 0; c < classes; ++c) {
    clf.bias[c] = static_cast<float>(bias[c]);
  }
  return clf;
}

}  // namespace

SparseVector hashed_bow(const Product& product, std::size_t hash_dim) {
  if (hash_dim < 2) {
    throw std::invalid_argument("hashed_bow: hash_dim must be >= 2");
  }
  std::map<std::uint32_t, float> counts;
  for (const auto& [name, text] : product.unstructured) {
    for (const auto& token : tokenize(text)) {
      counts[static_cast<std::uint32_t>(fnv1a64(token) % hash_dim)] += 1.0f;
    }
  }
  SparseVector out;
  out.reserve(counts.size());
  for (const auto& [bucket, count] : counts) {
    out.push_back({bucket, count});
  }
  return out;
}

void HierarchicalConfig::validate() const {
  if (hash_dim < 2 || (hash_dim & (hash_dim - 1)) != 0) {
    throw ConfigError("hash_dim must be a power of two >= 2");
  }
  if (l2 < 0 || learning_rate <= 0) {
    throw ConfigError("hierarchical l2 must be >= 0 and learning_rate > 0");
  }
}

HierarchicalModel::HierarchicalModel(Taxonomy taxonomy, HierarchicalConfig config)
    : taxonomy_(std::move(taxonomy)), config_(config) {
  config_.validate();
}

const NodeClassifier* HierarchicalModel::classifier(Taxonomy::NodeId node) const {
  const auto it = classifiers_.find(node);
  return it == classifiers_.end() ? nullptr : &it->second;
}

std::vector<double> HierarchicalModel::child_probabilities(Taxonomy::NodeId node, const SparseVector& x) const {
  const auto& children = taxonomy_.node(node).children;
  if (children.empty()) {
    throw std::invalid_argument("child_probabilities: node is a leaf");
  }
  if (children.size() == 1) {
    return {1.0};
  }
  const auto& clf = classifiers_.at(node);
  const std::size_t classes = children.size();
  switch (clf.mode) {
    case NodeClassifier::Mode::no_data:
      return std::vector<double>(classes, 1.0 / static_cast<double>(classes));
    case NodeClassifier::Mode::single_child_data: {
      std::vector<double> p(classes, 0.0);
      p[clf.only_child] = 1.0;
      return p;
    }
    case NodeClassifier::Mode::trained:
      break;
  }
  std::vector<double> z(classes, 0.0);
  for (const auto& f : x) {
    if (f.bucket >= clf.weight.dim(0)) {
      throw std::invalid_argument("child_probabilities: feature bucket outside hash_dim");
    }
    const auto row = clf.weight.row(f.bucket);
    for (std::size_t c = 0; c < classes; ++c) {
      z[c] += static_cast<double>(f.count) * static_cast<double>(row[c]);
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    z[c] += static_cast<double>(clf.bias[c]);
  }
  return softmax_logits(std::move(z));
}

std::uint64_t HierarchicalModel::config_hash() const {
  const std::string text = std::to_string(config_.hash_dim) + "|" + std::to_string(config_.l2) + "|" +
                           std::to_string(config_.epochs) + "|" + std::to_string(config_.learning_rate) + "|" +
                           taxonomy_.to_text();
  return fnv1a64(text);
}

Checkpoint HierarchicalModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_hash = config_hash();
  for (const auto& [id, clf] : classifiers_) {
    const auto key = node_key(taxonomy_, id);
    ckpt.blocks.push_back(
        {key + ".mode", Tensor({2}, std::vector<float>{static_cast<float>(static_cast<int>(clf.mode)),
                                                        static_cast<float>(clf.only_child)})});
    if (clf.mode == NodeClassifier::Mode::trained) {
      ckpt.blocks.push_back({key + ".weight", clf.weight});
      ckpt.blocks.push_back({key + ".bias", clf.bias});
    }
  }
  return ckpt;
}

HierarchicalModel HierarchicalModel::from_checkpoint(Taxonomy taxonomy, HierarchicalConfig config,
                                                     const Checkpoint& ckpt) {
  HierarchicalModel model(std::move(taxonomy), config);
  if (ckpt.config_hash != model.config_hash()) {
    throw ConfigError("hierarchical checkpoint was written for a different configuration or taxonomy");
  }
  const auto& tax = model.taxonomy_;
  for (Taxonomy::NodeId id = 0; id < tax.size(); ++id) {
    if (tax.node(id).children.size() < 2) {
      continue;
    }
    const auto key = node_key(tax, id);
    NodeClassifier clf;
    clf.node = id;
    clf.children = tax.node(id).children;
    const auto& mode = ckpt.find(key + ".mode");
    clf.mode = static_cast<NodeClassifier::Mode>(static_cast<int>(mode[0]));
    clf.only_child = static_cast<std::size_t>(mode[1]);
    if (clf.mode == NodeClassifier::Mode::trained) {
      clf.weight = ckpt.find(key + ".weight");
      clf.bias = ckpt.find(key + ".bias");
      if (clf.weight.shape() != Shape{config.hash_dim, clf.children.size()}) {
        throw ShapeError("hierarchical block " + key + ".weight has shape " + shape_string(clf.weight.shape()));
      }
    }
    model.classifiers_.emplace(id, std::move(clf));
  }
  return model;
}

HierarchicalModel train_hierarchical(std::span<const LabeledExample> examples, const Taxonomy& taxonomy,
                                     const HierarchicalConfig& config) {
  HierarchicalModel model(taxonomy, config);
  std::vector<SparseVector> features;
  std::vector<std::vector<Taxonomy::NodeId>> paths;
  features.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto leaf = taxonomy.find_leaf(ex.label);
    if (!leaf) {
      throw std::invalid_argument("train_hierarchical: label '" + ex.label + "' is not a taxonomy leaf");
    }
    features.push_back(hashed_bow(ex.product, config.hash_dim));
    paths.push_back(taxonomy.path_to(*leaf));
  }

  std::vector<Taxonomy::NodeId> decision_nodes;
  std::map<Taxonomy::NodeId, NodeData> data;
  for (Taxonomy::NodeId id = 0; id < taxonomy.size(); ++id) {
    if (taxonomy.node(id).children.size() >= 2) {
      decision_nodes.push_back(id);
      data[id];
    }
  }
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& path = paths[i];
    for (std::size_t depth = 0; depth + 1 < path.size(); ++depth) {
      const auto it = data.find(path[depth]);
      if (it == data.end()) {
        continue;
      }
      const auto& children = taxonomy.node(path[depth]).children;
      const auto target = static_cast<std::size_t>(std::find(children.begin(), children.end(), path[depth + 1]) -
                                                   children.begin());
      it->second.rows.push_back(i);
      it->second.targets.push_back(target);
    }
  }

  std::vector<NodeClassifier> fitted(decision_nodes.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < decision_nodes.size(); j = next++) {
      fitted[j] = fit_node(taxonomy, decision_nodes[j], data.at(decision_nodes[j]), features, config);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, decision_nodes.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(worker);
    }
  }
  for (auto& clf : fitted) {
    model.classifiers_.emplace(clf.node, std::move(clf));
  }
  return model;
}

std::vector<LeafScore> hierarchical_topk(const Product& product, const HierarchicalModel& model, std::size_t k,
                                         std::size_t beam) {
  const auto& tax = model.taxonomy();
  if (k < 1 || k > tax.leaf_count()) {
    throw std::invalid_argument("hierarchical_topk: k must be in [1, " + std::to_string(tax.leaf_count()) + "]");
  }
  if (beam < k) {
    throw std::invalid_argument("hierarchical_topk: beam (" + std::to_string(beam) + ") must be >= k (" +
                                std::to_string(k) + ")");
  }
  const auto x = hashed_bow(product, model.config().hash_dim);

  struct Hypothesis {
    Taxonomy::NodeId node;
    double score;
  };
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    return a.score > b.score || (a.score == b.score && a.node < b.node);
  };

  std::vector<Hypothesis> frontier{{Taxonomy::kRoot, 1.0}};
  while (std::any_of(frontier.begin(), frontier.end(), [&](const Hypothesis& h) { return !tax.is_leaf(h.node); })) {
    std::vector<Hypothesis> next;
    for (const auto& h : frontier) {
      if (tax.is_leaf(h.node)) {
        next.push_back(h);
        continue;
      }
      const auto& children = tax.node(h.node).children;
      const auto probs = model.child_probabilities(h.node, x);
      for (std::size_t c = 0; c < children.size(); ++c) {
        next.push_back({children[c], h.score * probs[c]});
      }
    }
    std::stable_sort(next.begin(), next.end(), better);
    if (next.size() > beam) {
      next.resize(beam);
    }
    frontier = std::move(next);
  }

  std::vector<LeafScore> out;
  for (const auto& h : frontier) {
    const auto& label = tax.node(h.node).name;
    out.push_back({h.node, *tax.leaf_index(label), label, h.score});
  }
  std::stable_sort(out.begin(), out.end(), [](const LeafScore& a, const LeafScore& b) {
    return a.probability > b.probability || (a.probability == b.probability && a.leaf_index < b.leaf_index);
  });
  out.resize(std::min(k, out.size()));
  return out;
}

std::optional<std::size_t> error_level(const Taxonomy& taxonomy, Taxonomy::NodeId predicted, Taxonomy::NodeId truth) {
  if (predicted == truth) {
    return std::nullopt;
  }
  const auto a = taxonomy.path_to(predicted);
  const auto b = taxonomy.path_to(truth);
  std::size_t depth = 0;
  while (depth + 1 < a.size() && depth + 1 < b.size() && a[depth + 1] == b[depth + 1]) {
    ++depth;
  }
  return depth;
}

}  // namespace prodcat
