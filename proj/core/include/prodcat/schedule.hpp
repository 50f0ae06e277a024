#pragma once

#include <cstddef>
#include <vector>

namespace prodcat {

/// min_lr + (base_lr - min_lr) * (1 + cos(pi * t / period)) / 2
double cosine_annealing(double base_lr, double min_lr, double t, double period);

/// Cosine annealing with warm restarts. Cycle c lasts
/// first_cycle_epochs * 2^c epochs, so restarts fall at cumulative epochs
/// 1, 3, 7, 15, ... with the default first cycle.
struct SgdrSchedule {
  double base_lr = 0.05;
  double min_lr = 0.0;
  std::size_t steps_per_epoch = 1;
  std::size_t first_cycle_epochs = 1;

  struct Position {
    std::size_t cycle = 0;
    std::size_t offset = 0;  ///< steps since the cycle started
    std::size_t length = 0;  ///< cycle length in steps
  };

  void validate() const;
  Position position(std::size_t global_step) const;
  double lr_at(std::size_t global_step) const;
  /// Same curve on a continuous epoch axis.
  double lr_at_epoch(double epoch) const;
  /// Cumulative epochs at which the first `cycles` cycles end.
  std::vector<std::size_t> cycle_boundaries(std::size_t cycles) const;
};

}  // namespace prodcat
