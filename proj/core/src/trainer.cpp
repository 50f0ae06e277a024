#include "prodcat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "prodcat/error.hpp"
#include "prodcat/schedule.hpp"

namespace prodcat {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<std::size_t> label_indices(const std::vector<std::string>& labels,
                                       std::span<const LabeledExample> examples) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    index.emplace(labels[i], i);
  }
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto it = index.find(ex.label);
    if (it == index.end()) {
      throw std::invalid_argument("label '" + ex.label + "' is not one of the model's classes");
    }
    out.push_back(it->second);
  }
  return out;
}

std::vector<EncodedProduct> encode_all(const MultiCnnModel& model, std::span<const LabeledExample> examples) {
  std::vector<EncodedProduct> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back(model.encode(ex.product));
  }
  return out;
}

/// Mean loss and top-1 over pre-encoded examples, no gradients.
std::pair<double, double> measure(MultiCnnModel& model, std::span<const EncodedProduct> encoded,
                                  std::span<const std::size_t> labels) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < encoded.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, encoded.size() - start);
    Graph<float> g(false);
    const auto logits = model.forward(g, encoded.subspan(start, n));
    const auto lab = labels.subspan(start, n);
    const auto l = softmax_cross_entropy(g, logits, lab);
    loss += static_cast<double>(g.value(l)[0]) * static_cast<double>(n);
    const auto& z = g.value(logits);
    for (std::size_t b = 0; b < n; ++b) {
      if (rank_classes<float>(z.row(b), 1)[0] == lab[b]) {
        ++correct;
      }
    }
  }
  const auto total = static_cast<double>(encoded.size());
  return {loss / total, static_cast<double>(correct) / total};
}

}  // namespace

DatasetSplit make_split(std::span<const LabeledExample> examples, const TrainSettings& settings, std::uint64_t seed) {
  auto parts = split(examples, settings.split, seed);
  parts.train = stratify(parts.train, settings.stratify_floor);
  return parts;
}

std::vector<Product> products_of(std::span<const LabeledExample> examples) {
  std::vector<Product> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back(ex.product);
  }
  return out;
}

TrainResult train(MultiCnnModel& model, const DatasetSplit& split, const TrainSettings& settings, std::uint64_t seed,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (split.train.empty()) {
    throw std::invalid_argument("train: empty training split");
  }
  if (settings.batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  const auto params = model.parameters();
  const std::vector<const Parameter*> const_params(params.begin(), params.end());

  const auto train_encoded = encode_all(model, split.train);
  const auto train_labels = label_indices(model.labels(), split.train);
  // Without a validation split the training loss selects the checkpoint.
  const bool has_val = !split.validation.empty();
  const auto val_encoded = has_val ? encode_all(model, split.validation) : std::vector<EncodedProduct>{};
  const auto val_labels = has_val ? label_indices(model.labels(), split.validation) : std::vector<std::size_t>{};

  const std::size_t n = split.train.size();
  SgdrSchedule schedule;
  schedule.base_lr = settings.base_lr;
  schedule.min_lr = settings.min_lr;
  schedule.steps_per_epoch = (n + settings.batch_size - 1) / settings.batch_size;
  schedule.validate();

  TrainResult result;
  result.best = snapshot(const_params, 0);
  double best_loss = std::numeric_limits<double>::infinity();

  std::vector<BasicTensor<float>> velocity;
  if (settings.momentum > 0.0) {
    for (auto* p : params) {
      velocity.emplace_back(p->value.shape());
    }
  }

  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  std::vector<EncodedProduct> batch;
  std::vector<std::size_t> batch_labels;

  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = settings.base_lr;
    for (std::size_t start = 0; start < n; start += settings.batch_size, ++step) {
      const std::size_t end = std::min(n, start + settings.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_encoded[order[i]]);
        batch_labels.push_back(train_labels[order[i]]);
      }
      lr = schedule.lr_at(step);

      for (auto* p : params) {
        p->zero_grad();
      }
      Graph<float> g;
      const auto logits = model.forward(g, batch);
      const auto loss_var = softmax_cross_entropy(g, logits, batch_labels);
      const double loss = g.value(loss_var)[0];
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << ", lr " << lr << ", batch ids:";
        for (std::size_t i = start; i < end; ++i) {
          msg << ' ' << split.train[order[i]].product.id;
        }
        msg << ')';
        throw TrainingError(msg.str());
      }
      loss_sum += loss * static_cast<double>(end - start);
      g.backward(loss_var);

      const auto rate = static_cast<float>(lr);
      const auto mu = static_cast<float>(settings.momentum);
      for (std::size_t j = 0; j < params.size(); ++j) {
        auto value = params[j]->value.data();
        const auto grad = params[j]->grad.data();
        if (velocity.empty()) {
          for (std::size_t i = 0; i < value.size(); ++i) {
            value[i] -= rate * grad[i];
          }
        } else {
          auto v = velocity[j].data();
          for (std::size_t i = 0; i < value.size(); ++i) {
            v[i] = mu * v[i] + grad[i];
            value[i] -= rate * v[i];
          }
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    if (has_val) {
      std::tie(rec.val_loss, rec.val_top1) = measure(model, val_encoded, val_labels);
    } else {
      std::tie(rec.val_loss, rec.val_top1) = measure(model, train_encoded, train_labels);
    }
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      result.best = snapshot(const_params, 0);
      result.best_epoch = epoch;
    }
    result.curve.push_back(rec);
    if (on_epoch) {
      on_epoch(rec);
    }
  }
  restore(result.best, params);
  return result;
}

std::pair<double, double> loss_and_accuracy(MultiCnnModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) {
    throw std::invalid_argument("loss_and_accuracy: no examples");
  }
  const auto encoded = encode_all(model, examples);
  const auto labels = label_indices(model.labels(), examples);
  return measure(model, encoded, labels);
}

MetricsReport evaluate(const MultiCnnModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) {
    throw std::invalid_argument("evaluate: no examples");
  }
  const auto truth = label_indices(model.labels(), examples);
  const std::size_t depth = std::min<std::size_t>(3, model.num_classes());
  std::vector<std::vector<std::size_t>> ranked;
  ranked.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, examples.size() - start);
    const auto products = products_of(examples.subspan(start, n));
    for (const auto& row : model.logits(products)) {
      ranked.push_back(rank_classes<float>(row, depth));
    }
  }
  return score_rankings(ranked, truth, model.labels());
}

MetricsReport evaluate(const HierarchicalModel& model, std::span<const LabeledExample> examples, std::size_t beam) {
  if (examples.empty()) {
    throw std::invalid_argument("evaluate: no examples");
  }
  const auto labels = model.taxonomy().leaf_labels();
  const auto truth = label_indices(labels, examples);
  const std::size_t depth = std::min<std::size_t>(3, labels.size());
  std::vector<std::vector<std::size_t>> ranked;
  ranked.reserve(examples.size());
  for (const auto& ex : examples) {
    std::vector<std::size_t> r;
    for (const auto& s : hierarchical_topk(ex.product, model, depth, std::max(beam, depth))) {
      r.push_back(s.leaf_index);
    }
    ranked.push_back(std::move(r));
  }
  return score_rankings(ranked, truth, labels);
}

double ErrorLevels::fraction(std::size_t level) const {
  if (errors == 0) {
    return 0.0;
  }
  const auto it = by_level.find(level);
  return it == by_level.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(errors);
}

ErrorLevels error_levels(const HierarchicalModel& model, std::span<const LabeledExample> examples, std::size_t beam) {
  const auto& tax = model.taxonomy();
  ErrorLevels out;
  out.examples = examples.size();
  for (const auto& ex : examples) {
    const auto truth = tax.find_leaf(ex.label);
    if (!truth) {
      throw std::invalid_argument("error_levels: label '" + ex.label + "' is not a taxonomy leaf");
    }
    const auto top = hierarchical_topk(ex.product, model, 1, std::max<std::size_t>(1, beam));
    if (const auto level = error_level(tax, top.front().leaf, *truth)) {
      ++out.errors;
      ++out.by_level[*level];
    }
  }
  return out;
}

}  // namespace prodcat
