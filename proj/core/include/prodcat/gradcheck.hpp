#pragma once

#include <functional>
#include <span>

#include "prodcat/graph.hpp"
#include "prodcat/tensor.hpp"

namespace prodcat {

/// Builds a scalar loss from the parameters on the supplied graph.
template <typename T>
using LossClosure = std::function<Var(Graph<T>&)>;

/// Compares the tape's gradients with central finite differences for every
/// entry of every parameter and returns
///   max |g_analytic - g_numeric| / max(1e-8, |g_analytic| + |g_numeric|).
/// Parameter values are restored afterwards; gradients hold the analytic
/// result. Throws prodcat::Error on non-finite values.
template <typename T>
double grad_check(std::span<BasicParameter<T>* const> params, const LossClosure<T>& closure, double eps = 1e-3);

}  // namespace prodcat
