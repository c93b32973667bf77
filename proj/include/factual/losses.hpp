#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "factual/tensor.hpp"

namespace factual {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean over anchors i with a positive of
//   -1/|P(i)| * sum_{p in P(i)} log( exp(f_i.f_p/tau) / sum_{a != i} exp(f_i.f_a/tau) ),
// where P(i) holds the other samples sharing i's label. Rows of `reps` must be unit-norm.
Tensor supervised_contrastive_loss(const Tensor& reps, std::span<const std::size_t> labels, double tau = 0.1);

// The same per-anchor term for one extra anchor scored against a fixed reference set
// (the anchor is not part of `refs`, so every reference is in its denominator).
Tensor contrastive_anchor_loss(const Tensor& anchor, std::size_t anchor_label, const Tensor& refs,
                               std::span<const std::size_t> ref_labels, double tau = 0.1);

// Mean of -log softmax(logits)_y.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace factual
