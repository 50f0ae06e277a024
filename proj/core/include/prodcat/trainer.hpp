#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "prodcat/catalog.hpp"
#include "prodcat/checkpoint.hpp"
#include "prodcat/config.hpp"
#include "prodcat/hierarchical.hpp"
#include "prodcat/metrics.hpp"
#include "prodcat/multicnn.hpp"

namespace prodcat {

/// Seeded stratified split; only the training part is then stratified, so no
/// example is repeated across parts.
DatasetSplit make_split(std::span<const LabeledExample> examples, const TrainSettings& settings, std::uint64_t seed);

std::vector<Product> products_of(std::span<const LabeledExample> examples);

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;  ///< rate used for the epoch's last step
};

struct TrainResult {
  Checkpoint best;
  std::size_t best_epoch = 0;  ///< 0 when no epoch ran
  std::vector<EpochRecord> curve;
};

/// Minibatch SGD on softmax cross-entropy under an SGDR schedule with a
/// one-epoch first cycle. Validation loss is measured after every epoch and
/// the lowest-loss weights are kept; on return the model holds them.
/// Deterministic for a fixed seed. A non-finite loss throws TrainingError.
TrainResult train(MultiCnnModel& model, const DatasetSplit& split, const TrainSettings& settings, std::uint64_t seed,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean cross-entropy and top-1 accuracy.
std::pair<double, double> loss_and_accuracy(MultiCnnModel& model, std::span<const LabeledExample> examples);

MetricsReport evaluate(const MultiCnnModel& model, std::span<const LabeledExample> examples);
MetricsReport evaluate(const HierarchicalModel& model, std::span<const LabeledExample> examples,
                       std::size_t beam = 10);

struct ErrorLevels {
  std::size_t examples = 0;
  std::size_t errors = 0;
  /// Decision depth (0 = root) -> misclassified examples first derailed there.
  std::map<std::size_t, std::size_t> by_level;

  double fraction(std::size_t level) const;
};

/// The depth at which each misclassified example's top-1 leaf leaves the
/// true path.
ErrorLevels error_levels(const HierarchicalModel& model, std::span<const LabeledExample> examples,
                         std::size_t beam = 10);

}  // namespace prodcat
