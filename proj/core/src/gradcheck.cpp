#include "prodcat/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace prodcat {

namespace {

template <typename T>
double evaluate(const LossClosure<T>& closure) {
  Graph<T> g(false);
  const Var loss = closure(g);
  const auto& v = g.value(loss);
  if (v.size() != 1) {
    throw ShapeError("grad_check: closure must return a scalar, got " + shape_string(v.shape()));
  }
  const double out = static_cast<double>(v[0]);
  if (!std::isfinite(out)) {
    throw Error("grad_check: non-finite loss");
  }
  return out;
}

}  // namespace

template <typename T>
double grad_check(std::span<BasicParameter<T>* const> params, const LossClosure<T>& closure, double eps) {
  for (auto* p : params) {
    p->zero_grad();
  }
  {
    Graph<T> g(true);
    const Var loss = closure(g);
    if (!std::isfinite(static_cast<double>(g.value(loss)[0]))) {
      throw Error("grad_check: non-finite loss");
    }
    g.backward(loss);
  }
  double worst = 0.0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T saved = p->value[i];
      p->value[i] = static_cast<T>(static_cast<double>(saved) + eps);
      const double up = evaluate(closure);
      p->value[i] = static_cast<T>(static_cast<double>(saved) - eps);
      const double down = evaluate(closure);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad[i]);
      if (!std::isfinite(analytic)) {
        throw Error("grad_check: non-finite gradient in " + p->name);
      }
      const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

template double grad_check<float>(std::span<BasicParameter<float>* const>, const LossClosure<float>&, double);
template double grad_check<double>(std::span<BasicParameter<double>* const>, const LossClosure<double>&, double);

}  // namespace prodcat
