#include "prodcat/schedule.hpp"

#include <cmath>
#include <numbers>

#include "prodcat/error.hpp"

namespace prodcat {

double cosine_annealing(double base_lr, double min_lr, double t, double period) {
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t / period));
}

void SgdrSchedule::validate() const {
  if (!(base_lr > min_lr) || min_lr < 0.0) {
    throw ConfigError("schedule requires base_lr > min_lr >= 0");
  }
  if (steps_per_epoch == 0 || first_cycle_epochs == 0) {
    throw ConfigError("schedule requires steps_per_epoch >= 1 and first_cycle_epochs >= 1");
  }
}

SgdrSchedule::Position SgdrSchedule::position(std::size_t global_step) const {
  Position pos;
  pos.length = first_cycle_epochs * steps_per_epoch;
  std::size_t offset = global_step;
  while (offset >= pos.length) {
    offset -= pos.length;
    pos.length *= 2;
    ++pos.cycle;
  }
  pos.offset = offset;
  return pos;
}

double SgdrSchedule::lr_at(std::size_t global_step) const {
  const auto pos = position(global_step);
  return cosine_annealing(base_lr, min_lr, static_cast<double>(pos.offset), static_cast<double>(pos.length));
}

double SgdrSchedule::lr_at_epoch(double epoch) const {
  if (epoch < 0) {
    epoch = 0;
  }
  double period = static_cast<double>(first_cycle_epochs);
  while (epoch >= period) {
    epoch -= period;
    period *= 2;
  }
  return cosine_annealing(base_lr, min_lr, epoch, period);
}

std::vector<std::size_t> SgdrSchedule::cycle_boundaries(std::size_t cycles) const {
  std::vector<std::size_t> out;
  std::size_t total = 0;
  std::size_t period = first_cycle_epochs;
  for (std::size_t c = 0; c < cycles; ++c) {
    total += period;
    out.push_back(total);
    period *= 2;
  }
  return out;
}

}  // namespace prodcat
