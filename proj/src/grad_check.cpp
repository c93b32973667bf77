#include "factual/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace factual {

namespace {
double eval(const ScalarFunction& f, const Tensor& x) {
  const double v = f(x).item();
  if (!std::isfinite(v)) throw TensorError("finite_difference_check: non-finite function value");
  return v;
}
}  // namespace

double finite_difference_check(const ScalarFunction& f, const Tensor& x, double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw TensorError("finite_difference_check: step must lie in [1e-7, 1e-3]");
  }
  Tensor probe = x.detach().share_leaf(true);
  Tensor out = f(probe);
  if (out.size() != 1) throw TensorError("finite_difference_check: function is not scalar-valued");
  std::vector<double> analytic(x.size(), 0.0);
  if (out.requires_grad()) {
    backward(out);
    if (auto g = probe.grad()) analytic.assign(g->begin(), g->end());
  }

  Tensor work = x.detach();
  auto values = work.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(analytic[i])) throw TensorError("finite_difference_check: non-finite gradient");
    const double orig = values[i];
    values[i] = orig + step;
    const double up = eval(f, work);
    values[i] = orig - step;
    const double down = eval(f, work);
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace factual
