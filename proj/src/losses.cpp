#include "factual/losses.hpp"

#include <cmath>
#include <string>

namespace factual {

namespace {

void check_unit_rows(const Tensor& reps, const char* what) {
  const auto& s = reps.shape();
  if (s.size() != 2) throw LossError(std::string(what) + ": expected B×D representations, got " + shape_str(s));
  const auto v = reps.data();
  for (std::size_t r = 0; r < s[0]; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < s[1]; ++j) ss += v[r * s[1] + j] * v[r * s[1] + j];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-9) {
      throw LossError(std::string(what) + ": row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw LossError("contrastive loss: temperature must be positive");
}

// Large negative logit that vanishes under exp() after max-subtraction.
constexpr double kExcluded = -1e9;

}  // namespace

Tensor supervised_contrastive_loss(const Tensor& reps, std::span<const std::size_t> labels, double tau) {
  check_tau(tau);
  check_unit_rows(reps, "supervised_contrastive_loss");
  const std::size_t b = reps.shape()[0];
  if (b < 2) throw LossError("supervised_contrastive_loss: need at least 2 samples");
  if (labels.size() != b) throw LossError("supervised_contrastive_loss: label count does not match batch");

  std::vector<std::size_t> positives(b, 0);
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) ++positives[i];
    }
    if (positives[i] > 0) ++anchors;
  }
  if (anchors == 0) throw LossError("no positive pairs");

  // Weight w_ip = 1 / (|P(i)| * anchors) on positives; diagonal removed from the softmax domain.
  std::vector<double> diag(b * b, 0.0), weights(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    diag[i * b + i] = kExcluded;
    if (positives[i] == 0) continue;
    const double w = 1.0 / (static_cast<double>(positives[i]) * static_cast<double>(anchors));
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) weights[i * b + j] = w;
    }
  }
  Tensor logits = add(scale(matmul(reps, reps, true), 1.0 / tau), Tensor::from({b, b}, std::move(diag)));
  Tensor logp = log_softmax(logits);
  return scale(sum(mul(logp, Tensor::from({b, b}, std::move(weights)))), -1.0);
}

Tensor contrastive_anchor_loss(const Tensor& anchor, std::size_t anchor_label, const Tensor& refs,
                               std::span<const std::size_t> ref_labels, double tau) {
  check_tau(tau);
  check_unit_rows(anchor, "contrastive_anchor_loss");
  check_unit_rows(refs, "contrastive_anchor_loss");
  if (anchor.shape()[0] != 1) throw LossError("contrastive_anchor_loss: anchor must be a single row");
  const std::size_t m = refs.shape()[0];
  if (ref_labels.size() != m) throw LossError("contrastive_anchor_loss: label count does not match references");
  std::size_t positives = 0;
  for (auto l : ref_labels) positives += l == anchor_label ? 1 : 0;
  if (positives == 0) throw LossError("no positive pairs");
  std::vector<double> weights(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    if (ref_labels[j] == anchor_label) weights[j] = 1.0 / static_cast<double>(positives);
  }
  Tensor logp = log_softmax(scale(matmul(anchor, refs, true), 1.0 / tau));
  return scale(sum(mul(logp, Tensor::from({1, m}, std::move(weights)))), -1.0);
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto& s = logits.shape();
  if (s.size() != 2) throw LossError("cross_entropy_loss: expected B×C logits, got " + shape_str(s));
  const std::size_t b = s[0], c = s[1];
  if (c < 2) throw LossError("cross_entropy_loss: need at least 2 classes");
  if (labels.size() != b) throw LossError("cross_entropy_loss: label count does not match batch");
  std::vector<double> onehot(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw LossError("cross_entropy_loss: label " + std::to_string(labels[i]) + " out of range for " +
                      std::to_string(c) + " classes");
    }
    onehot[i * c + labels[i]] = 1.0 / static_cast<double>(b);
  }
  return scale(sum(mul(log_softmax(logits), Tensor::from({b, c}, std::move(onehot)))), -1.0);
}

}  // namespace factual
