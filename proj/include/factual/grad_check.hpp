#pragma once

#include <functional>

#include "factual/tensor.hpp"

namespace factual {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Throws TensorError on non-finite values or a step outside [1e-7, 1e-3].
double finite_difference_check(const ScalarFunction& f, const Tensor& x, double step = 1e-5);

}  // namespace factual
