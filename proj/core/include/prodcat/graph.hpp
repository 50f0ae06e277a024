#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "prodcat/tensor.hpp"

namespace prodcat {

/// Handle to a value recorded in a Graph.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
};

/// Reverse-mode tape. Values are appended in evaluation order, so walking the
/// tape backwards visits every node after all of its consumers.
///
/// A non-recording graph keeps values only; it is what inference uses and it
/// never writes to parameter gradients.
template <typename T>
class Graph {
 public:
  /// Called with the node's accumulated output gradient.
  using Backward = std::function<void(Graph&, const BasicTensor<T>&)>;

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var emit(BasicTensor<T> value, Backward backward = {}) {
    nodes_.push_back(Node{std::move(value), {}, record_ ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  Var constant(BasicTensor<T> value) { return emit(std::move(value)); }

  /// Copies a parameter's value into the tape; gradients flow back into it.
  Var leaf(BasicParameter<T>& p) {
    return emit(p.value, [&p](Graph&, const BasicTensor<T>& g) {
      auto dst = p.grad.data();
      auto src = g.data();
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
      }
    });
  }

  const BasicTensor<T>& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient accumulator for `v`, allocated as zeros on first use.
  BasicTensor<T>& grad(Var v) {
    auto& node = nodes_.at(v.id);
    if (node.grad.empty()) {
      node.grad = BasicTensor<T>(node.value.shape());
    }
    return node.grad;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable input.
  void backward(Var root) {
    if (!record_) {
      throw std::logic_error("backward on a non-recording graph");
    }
    if (value(root).size() != 1) {
      throw ShapeError("backward root must be a scalar, got " + shape_string(value(root).shape()));
    }
    grad(root).fill(T{1});
    for (std::size_t id = root.id + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.grad.empty() || !node.backward) {
        continue;
      }
      node.backward(*this, node.grad);
    }
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace prodcat
