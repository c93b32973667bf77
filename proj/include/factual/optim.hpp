#pragma once

#include <span>
#include <vector>

#include "factual/tensor.hpp"

namespace factual {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// Velocity is keyed by slot position, so callers must pass the same slots in the same order.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig config);

  // Each slot is replaced by a fresh tensor; storage of the previous value is left untouched.
  void step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads);

  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace factual
