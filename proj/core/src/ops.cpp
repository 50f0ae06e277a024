#include "prodcat/ops.hpp"

#include <algorithm>
#include <cmath>

namespace prodcat {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(shape));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace

void ConvBankSpec::validate() const {
  if (widths.empty()) {
    throw std::invalid_argument("conv bank: at least one filter width is required");
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1 || (i > 0 && widths[i] <= widths[i - 1])) {
      throw std::invalid_argument("conv bank: widths must be >= 1 and strictly increasing");
    }
  }
  if (filters_per_width < 1) {
    throw std::invalid_argument("conv bank: filters_per_width must be >= 1");
  }
  if (embed_dim < 1) {
    throw std::invalid_argument("conv bank: embed_dim must be >= 1");
  }
}

template <typename T>
ConvBank<T> ConvBank<T>::make(const ConvBankSpec& spec, const std::string& prefix, std::mt19937_64& rng) {
  spec.validate();
  ConvBank bank;
  bank.spec = spec;
  for (auto n : spec.widths) {
    const std::size_t fan_in = n * spec.embed_dim;
    BasicTensor<T> w({spec.filters_per_width, fan_in});
    fill_uniform(w, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
    bank.weights.emplace_back(prefix + ".conv" + std::to_string(n) + ".weight", std::move(w));
    bank.biases.emplace_back(prefix + ".conv" + std::to_string(n) + ".bias", BasicTensor<T>({spec.filters_per_width}));
  }
  return bank;
}

template <typename T>
Var embedding_lookup(Graph<T>& g, BasicParameter<T>& table, std::span<const std::int32_t> indices) {
  require_rank(table.value.shape(), 2, "embedding_lookup");
  if (indices.empty()) {
    throw std::invalid_argument("embedding_lookup: empty index sequence");
  }
  const std::size_t vocab = table.value.dim(0);
  const std::size_t dim = table.value.dim(1);
  BasicTensor<T> out({indices.size(), dim});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= vocab) {
      throw std::invalid_argument("embedding_lookup: index " + std::to_string(indices[i]) + " outside table of " +
                                  std::to_string(vocab) + " rows");
    }
    std::copy_n(table.value.row(static_cast<std::size_t>(indices[i])).begin(), dim, out.row(i).begin());
  }
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  return g.emit(std::move(out), [&table, idx = std::move(idx), dim](Graph<T>&, const BasicTensor<T>& up) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = table.grad.row(static_cast<std::size_t>(idx[i]));
      auto src = up.row(i);
      for (std::size_t d = 0; d < dim; ++d) {
        dst[d] += src[d];
      }
    }
  });
}

template <typename T>
std::vector<Var> conv_bank(Graph<T>& g, Var input, ConvBank<T>& bank) {
  const auto& x = g.value(input);
  require_rank(x.shape(), 2, "conv_bank");
  const std::size_t len = x.dim(0);
  const std::size_t dim = x.dim(1);
  if (dim != bank.spec.embed_dim) {
    mismatch("conv_bank", x.shape(), Shape{len, bank.spec.embed_dim});
  }
  if (len < bank.spec.max_width()) {
    throw std::invalid_argument("conv_bank: sequence length " + std::to_string(len) + " is shorter than filter width " +
                                std::to_string(bank.spec.max_width()));
  }
  const std::size_t filters = bank.spec.filters_per_width;
  std::vector<Var> maps;
  maps.reserve(bank.spec.widths.size());
  for (std::size_t wi = 0; wi < bank.spec.widths.size(); ++wi) {
    const std::size_t n = bank.spec.widths[wi];
    const std::size_t span_len = n * dim;
    const std::size_t steps = len - n + 1;
    auto& weight = bank.weights[wi];
    auto& bias = bank.biases[wi];
    BasicTensor<T> out({steps, filters});
    const T* xd = g.value(input).data().data();
    const T* wd = weight.value.data().data();
    for (std::size_t t = 0; t < steps; ++t) {
      const T* window = xd + t * dim;
      for (std::size_t f = 0; f < filters; ++f) {
        const T* wf = wd + f * span_len;
        T acc = bias.value[f];
        for (std::size_t k = 0; k < span_len; ++k) {
          acc += window[k] * wf[k];
        }
        out.at(t, f) = acc;
      }
    }
    maps.push_back(g.emit(std::move(out), [input, &weight, &bias, steps, filters, span_len, dim](
                                              Graph<T>& graph, const BasicTensor<T>& up) {
      const T* xv = graph.value(input).data().data();
      T* dx = graph.grad(input).data().data();
      const T* wv = weight.value.data().data();
      T* dw = weight.grad.data().data();
      for (std::size_t t = 0; t < steps; ++t) {
        const T* window = xv + t * dim;
        T* dwindow = dx + t * dim;
        for (std::size_t f = 0; f < filters; ++f) {
          const T gtf = up.at(t, f);
          if (gtf == T{0}) {
            continue;
          }
          bias.grad[f] += gtf;
          T* dwf = dw + f * span_len;
          const T* wf = wv + f * span_len;
          for (std::size_t k = 0; k < span_len; ++k) {
            dwf[k] += gtf * window[k];
            dwindow[k] += gtf * wf[k];
          }
        }
      }
    }));
  }
  return maps;
}

template <typename T>
Var maxpool_time(Graph<T>& g, Var map, std::size_t masked_rows) {
  const auto& m = g.value(map);
  require_rank(m.shape(), 2, "maxpool_time");
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  BasicTensor<T> out({cols});
  std::vector<std::size_t> argmax(cols, rows);
  if (masked_rows < rows) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t best = masked_rows;
      for (std::size_t r = masked_rows + 1; r < rows; ++r) {
        if (m.at(r, c) > m.at(best, c)) {
          best = r;
        }
      }
      argmax[c] = best;
      out[c] = m.at(best, c);
    }
  }
  return g.emit(std::move(out), [map, argmax = std::move(argmax), rows](Graph<T>& graph, const BasicTensor<T>& up) {
    auto& dm = graph.grad(map);
    for (std::size_t c = 0; c < argmax.size(); ++c) {
      if (argmax[c] < rows) {
        dm.at(argmax[c], c) += up[c];
      }
    }
  });
}

template <typename T>
Var mean_time(Graph<T>& g, Var map, std::size_t valid_count) {
  const auto& m = g.value(map);
  require_rank(m.shape(), 2, "mean_time");
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  if (valid_count > rows) {
    throw std::invalid_argument("mean_time: valid_count " + std::to_string(valid_count) + " exceeds " +
                                std::to_string(rows) + " rows");
  }
  BasicTensor<T> out({cols});
  if (valid_count > 0) {
    for (std::size_t r = 0; r < valid_count; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        out[c] += m.at(r, c);
      }
    }
    const T inv = T{1} / static_cast<T>(valid_count);
    for (auto& v : out.data()) {
      v *= inv;
    }
  }
  return g.emit(std::move(out), [map, valid_count, cols](Graph<T>& graph, const BasicTensor<T>& up) {
    if (valid_count == 0) {
      return;
    }
    auto& dm = graph.grad(map);
    const T inv = T{1} / static_cast<T>(valid_count);
    for (std::size_t r = 0; r < valid_count; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        dm.at(r, c) += up[c] * inv;
      }
    }
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, BasicParameter<T>& weight, BasicParameter<T>& bias) {
  const auto& xv = g.value(x);
  require_rank(xv.shape(), 2, "linear");
  require_rank(weight.value.shape(), 2, "linear weight");
  const std::size_t batch = xv.dim(0);
  const std::size_t in = xv.dim(1);
  if (weight.value.dim(0) != in) {
    mismatch("linear", xv.shape(), weight.value.shape());
  }
  const std::size_t out_dim = weight.value.dim(1);
  if (bias.value.shape() != Shape{out_dim}) {
    mismatch("linear bias", weight.value.shape(), bias.value.shape());
  }
  BasicTensor<T> out({batch, out_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    auto orow = out.row(b);
    std::copy(bias.value.data().begin(), bias.value.data().end(), orow.begin());
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xv.at(b, i);
      if (xi == T{0}) {
        continue;
      }
      const auto wrow = weight.value.row(i);
      for (std::size_t j = 0; j < out_dim; ++j) {
        orow[j] += xi * wrow[j];
      }
    }
  }
  return g.emit(std::move(out), [x, &weight, &bias, batch, in, out_dim](Graph<T>& graph, const BasicTensor<T>& up) {
    const auto& xv2 = graph.value(x);
    auto& dx = graph.grad(x);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto urow = up.row(b);
      for (std::size_t j = 0; j < out_dim; ++j) {
        bias.grad[j] += urow[j];
      }
      for (std::size_t i = 0; i < in; ++i) {
        const T xi = xv2.at(b, i);
        const auto wrow = weight.value.row(i);
        auto dwrow = weight.grad.row(i);
        T acc{0};
        for (std::size_t j = 0; j < out_dim; ++j) {
          dwrow[j] += xi * urow[j];
          acc += urow[j] * wrow[j];
        }
        dx.at(b, i) += acc;
      }
    }
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  BasicTensor<T> out = g.value(x);
  for (auto& v : out.data()) {
    v = v > T{0} ? v : T{0};
  }
  return g.emit(std::move(out), [x](Graph<T>& graph, const BasicTensor<T>& up) {
    const auto& xv = graph.value(x);
    auto& dx = graph.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T{0}) {
        dx[i] += up[i];
      }
    }
  });
}

template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (rate == 0.0) {
    return x;
  }
  BasicTensor<T> out = g.value(x);
  std::vector<T> mask(out.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? scale : T{0};
    out[i] *= mask[i];
  }
  return g.emit(std::move(out), [x, mask = std::move(mask)](Graph<T>& graph, const BasicTensor<T>& up) {
    auto& dx = graph.grad(x);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      dx[i] += up[i] * mask[i];
    }
  });
}

template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat: no inputs");
  }
  const Shape& first = g.value(parts[0]).shape();
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = g.value(p).shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      mismatch("concat", first, s);
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t outer = shape_volume(first) / first.back();
  Shape out_shape = lead;
  out_shape.push_back(total);
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = g.value(parts[pi]);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data().begin() + o * widths[pi], widths[pi], out.data().begin() + o * total + offset);
    }
    offset += widths[pi];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.emit(std::move(out), [inputs = std::move(inputs), widths = std::move(widths), outer, total](
                                    Graph<T>& graph, const BasicTensor<T>& up) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
      auto& d = graph.grad(inputs[pi]);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < widths[pi]; ++k) {
          d[o * widths[pi] + k] += up[o * total + off + k];
        }
      }
      off += widths[pi];
    }
  });
}

template <typename T>
Var stack_rows(Graph<T>& g, std::span<const Var> rows) {
  if (rows.empty()) {
    throw std::invalid_argument("stack_rows: no inputs");
  }
  const Shape& first = g.value(rows[0]).shape();
  require_rank(first, 1, "stack_rows");
  const std::size_t width = first[0];
  BasicTensor<T> out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& v = g.value(rows[r]);
    if (v.shape() != first) {
      mismatch("stack_rows", first, v.shape());
    }
    std::copy(v.data().begin(), v.data().end(), out.row(r).begin());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return g.emit(std::move(out), [inputs = std::move(inputs)](Graph<T>& graph, const BasicTensor<T>& up) {
    for (std::size_t r = 0; r < inputs.size(); ++r) {
      auto& d = graph.grad(inputs[r]);
      const auto src = up.row(r);
      for (std::size_t k = 0; k < src.size(); ++k) {
        d[k] += src[k];
      }
    }
  });
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.begin(), logits.end());
  if (p.empty()) {
    return p;
  }
  const T peak = *std::max_element(p.begin(), p.end());
  T total{0};
  for (auto& v : p) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : p) {
    v /= total;
  }
  return p;
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const std::size_t> labels) {
  const auto& z = g.value(logits);
  require_rank(z.shape(), 2, "softmax_cross_entropy");
  const std::size_t batch = z.dim(0);
  const std::size_t classes = z.dim(1);
  if (labels.size() != batch) {
    mismatch("softmax_cross_entropy", z.shape(), Shape{labels.size()});
  }
  BasicTensor<T> probs({batch, classes});
  T loss{0};
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[b]) + " >= " +
                                  std::to_string(classes) + " classes");
    }
    const auto row = z.row(b);
    const T peak = *std::max_element(row.begin(), row.end());
    T total{0};
    for (std::size_t c = 0; c < classes; ++c) {
      total += std::exp(row[c] - peak);
    }
    const T log_total = std::log(total);
    for (std::size_t c = 0; c < classes; ++c) {
      probs.at(b, c) = std::exp(row[c] - peak - log_total);
    }
    loss += log_total + peak - row[labels[b]];
  }
  loss /= static_cast<T>(batch);
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return g.emit(BasicTensor<T>({1}, std::vector<T>{loss}),
                [logits, probs = std::move(probs), y = std::move(y), batch, classes](Graph<T>& graph,
                                                                                      const BasicTensor<T>& up) {
                  auto& dz = graph.grad(logits);
                  const T scale = up[0] / static_cast<T>(batch);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < classes; ++c) {
                      const T target = c == y[b] ? T{1} : T{0};
                      dz.at(b, c) += scale * (probs.at(b, c) - target);
                    }
                  }
                });
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const BasicTensor<T>& weights) {
  const auto& xv = g.value(x);
  if (xv.shape() != weights.shape()) {
    mismatch("weighted_sum", xv.shape(), weights.shape());
  }
  T acc{0};
  for (std::size_t i = 0; i < xv.size(); ++i) {
    acc += xv[i] * weights[i];
  }
  return g.emit(BasicTensor<T>({1}, std::vector<T>{acc}), [x, weights](Graph<T>& graph, const BasicTensor<T>& up) {
    auto& dx = graph.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += up[0] * weights[i];
    }
  });
}

template <typename T>
Var half_squared_norm(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  T acc{0};
  for (auto v : xv.data()) {
    acc += v * v;
  }
  return g.emit(BasicTensor<T>({1}, std::vector<T>{acc / T{2}}), [x](Graph<T>& graph, const BasicTensor<T>& up) {
    const auto& xv2 = graph.value(x);
    auto& dx = graph.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += up[0] * xv2[i];
    }
  });
}

#define PRODCAT_INSTANTIATE_OPS(T)                                                                   \
  template struct ConvBank<T>;                                                                       \
  template Var embedding_lookup<T>(Graph<T>&, BasicParameter<T>&, std::span<const std::int32_t>);    \
  template std::vector<Var> conv_bank<T>(Graph<T>&, Var, ConvBank<T>&);                              \
  template Var maxpool_time<T>(Graph<T>&, Var, std::size_t);                                         \
  template Var mean_time<T>(Graph<T>&, Var, std::size_t);                                            \
  template Var linear<T>(Graph<T>&, Var, BasicParameter<T>&, BasicParameter<T>&);                    \
  template Var relu<T>(Graph<T>&, Var);                                                              \
  template Var dropout<T>(Graph<T>&, Var, double, std::mt19937_64&);                                 \
  template Var concat<T>(Graph<T>&, std::span<const Var>);                                           \
  template Var stack_rows<T>(Graph<T>&, std::span<const Var>);                                       \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const std::size_t>);               \
  template Var weighted_sum<T>(Graph<T>&, Var, const BasicTensor<T>&);                               \
  template Var half_squared_norm<T>(Graph<T>&, Var);                                                 \
  template std::vector<T> softmax<T>(std::span<const T>);

PRODCAT_INSTANTIATE_OPS(float)
PRODCAT_INSTANTIATE_OPS(double)

#undef PRODCAT_INSTANTIATE_OPS

}  // namespace prodcat
