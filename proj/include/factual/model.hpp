#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "factual/tensor.hpp"

namespace factual {

struct ArchitectureConfig {
  std::size_t input_size = 64;
  // Stride of the first convolution; 1 reproduces the plain three-stage net.
  std::size_t stem_stride = 1;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t rep_dim = 128;
  std::size_t proj_hidden = 64;
  std::size_t proj_out = 32;
  std::size_t classes = 4;
  // Fixed input standardization (x - input_mean) / input_std ahead of the first convolution.
  double input_mean = 0.0;
  double input_std = 1.0;
  // Per-image standardization (zero mean, unit RMS) instead of the fixed affine map.
  bool standardize_input = false;

  void validate() const;
  bool operator==(const ArchitectureConfig&) const = default;
};

enum class ParamGroup { encoder, projector, classifier };

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor* tensor;
};

// Parameters in declaration order: conv stages, embedding, projector, classifier.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ArchitectureConfig arch);

  const ArchitectureConfig& arch() const { return arch_; }

  std::vector<NamedParam> named();
  std::vector<Tensor*> group(ParamGroup g);
  std::vector<const Tensor*> group(ParamGroup g) const;

  // Shallow copy whose leaves share storage but carry their own gradient slots.
  ModelParams bind(bool encoder_grad, bool projector_grad, bool classifier_grad) const;
  // Gradients of one group after backward; absent gradients become zeros.
  std::vector<std::vector<double>> grads(ParamGroup g) const;

  // Incremented on every projector forward; lets tests assert the projector is unused.
  std::uint64_t projector_reads() const { return projector_reads_->load(); }

  std::vector<Tensor> conv_w, conv_b;
  Tensor embed_w, embed_b;
  Tensor proj1_w, proj1_b, proj2_w, proj2_b;
  Tensor cls_w, cls_b;

 private:
  friend Tensor project(const ModelParams&, const Tensor&);
  ArchitectureConfig arch_;
  std::shared_ptr<std::atomic<std::uint64_t>> projector_reads_ =
      std::make_shared<std::atomic<std::uint64_t>>(0);
};

// Kaiming-style fan-in uniform weights in ±sqrt(6/fan_in), zero biases.
ModelParams init_params(const ArchitectureConfig& arch, std::uint64_t seed);

// images: B×1×H×W -> B×rep_dim.
Tensor encode(const ModelParams& params, const Tensor& images);
// B×rep_dim -> unit-norm B×proj_out.
Tensor project(const ModelParams& params, const Tensor& reps);
// B×rep_dim -> B×classes logits, a single affine map.
Tensor classify(const ModelParams& params, const Tensor& reps);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

bool params_equal(const ModelParams& a, const ModelParams& b);

}  // namespace factual
