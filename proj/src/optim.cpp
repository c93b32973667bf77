#include "factual/optim.hpp"

namespace factual {

SgdMomentum::SgdMomentum(SgdConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw TensorError("sgd: learning rate must be positive");
  if (!(config_.momentum >= 0.0 && config_.momentum < 1.0)) {
    throw TensorError("sgd: momentum must lie in [0, 1)");
  }
}

void SgdMomentum::step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads) {
  if (params.size() != grads.size()) {
    throw TensorError("sgd: " + std::to_string(params.size()) + " parameters but " +
                      std::to_string(grads.size()) + " gradients");
  }
  if (velocity_.empty()) velocity_.resize(params.size());
  if (velocity_.size() != params.size()) throw TensorError("sgd: parameter slot count changed");
  for (std::size_t s = 0; s < params.size(); ++s) {
    Tensor& p = *params[s];
    const auto& g = grads[s];
    if (g.size() != p.size()) {
      throw TensorError("sgd: gradient of size " + std::to_string(g.size()) + " for parameter of shape " +
                        shape_str(p.shape()));
    }
    auto& v = velocity_[s];
    if (v.empty()) v.assign(p.size(), 0.0);
    const auto old = p.data();
    std::vector<double> next(old.size());
    for (std::size_t i = 0; i < old.size(); ++i) {
      v[i] = config_.momentum * v[i] + g[i] + config_.weight_decay * old[i];
      next[i] = old[i] - config_.lr * v[i];
    }
    p = Tensor::from(p.shape(), std::move(next));
  }
}

}  // namespace factual
