#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prodcat/graph.hpp"
#include "prodcat/tensor.hpp"

namespace prodcat {

/// Activation assigned to windows made only of padding so that they never win
/// the max over time.
inline constexpr double kMaskedActivation = -1e30;

/// Multi-width convolution filters over a token-embedding sequence.
struct ConvBankSpec {
  std::vector<std::size_t> widths{1, 2, 3, 4, 5};
  std::size_t filters_per_width = 128;
  std::size_t embed_dim = 200;

  void validate() const;
  std::size_t max_width() const { return widths.empty() ? 0 : widths.back(); }
  /// Pooled feature count: one activation per filter.
  std::size_t output_width() const { return widths.size() * filters_per_width; }

  friend bool operator==(const ConvBankSpec&, const ConvBankSpec&) = default;
};

/// Parameters for one ConvBankSpec: for each width n a weight block of shape
/// [filters x n*embed_dim] (a filter's window is contiguous in the row-major
/// input) and a bias of shape [filters].
template <typename T>
struct ConvBank {
  ConvBankSpec spec;
  std::vector<BasicParameter<T>> weights;
  std::vector<BasicParameter<T>> biases;

  /// Fan-in scaled uniform weights, zero biases.
  static ConvBank make(const ConvBankSpec& spec, const std::string& prefix, std::mt19937_64& rng);
};

/// Number of leading windows of width `width` that cover padding only.
inline std::size_t pad_only_windows(std::size_t pad_count, std::size_t width) {
  return pad_count >= width ? pad_count - width + 1 : 0;
}

/// [L] indices into a [V x D] table -> [L x D]. Backward scatters rows into
/// table.grad.
template <typename T>
Var embedding_lookup(Graph<T>& g, BasicParameter<T>& table, std::span<const std::int32_t> indices);

/// Valid cross-correlation of a [L x D] input with every filter width; one
/// [(L - n + 1) x F] map per width n.
template <typename T>
std::vector<Var> conv_bank(Graph<T>& g, Var input, ConvBank<T>& bank);

/// Per-column max over rows -> [F]. The first `masked_rows` rows are treated as
/// kMaskedActivation; if every row is masked the result is zero. Gradient goes
/// to the first argmax.
template <typename T>
Var maxpool_time(Graph<T>& g, Var map, std::size_t masked_rows = 0);

/// Mean of the first `valid_count` rows -> [F]; zero vector when valid_count
/// is 0.
template <typename T>
Var mean_time(Graph<T>& g, Var map, std::size_t valid_count);

/// x [B x in] * weight [in x out] + bias [out].
template <typename T>
Var linear(Graph<T>& g, Var x, BasicParameter<T>& weight, BasicParameter<T>& bias);

template <typename T>
Var relu(Graph<T>& g, Var x);

/// Inverted dropout: zeroes each entry with probability `rate` and scales the
/// survivors by 1 / (1 - rate). Identity when rate is 0.
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, std::mt19937_64& rng);

/// Concatenation along the last axis. All parts share the leading dimensions.
template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts);

/// Stacks equally sized 1-D tensors into a [B x F] matrix.
template <typename T>
Var stack_rows(Graph<T>& g, std::span<const Var> rows);

/// Mean over the batch of -log softmax(logits[b])[labels[b]] -> [1].
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::size_t> labels);

/// sum(x * weights) -> [1], with `weights` a constant of x's shape.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const BasicTensor<T>& weights);

/// 0.5 * ||x||^2 -> [1].
template <typename T>
Var half_squared_norm(Graph<T>& g, Var x);

/// Numerically stable softmax (max-shifted).
template <typename T>
std::vector<T> softmax(std::span<const T> logits);

}  // namespace prodcat
