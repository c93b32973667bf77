#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "factual/tensor.hpp"

namespace factual {

class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
};

// Loss J to be maximized, evaluated on a 1×1×H×W image tensor; must return a scalar.
using Scorer = std::function<Tensor(const Tensor& image)>;

enum class LossMode { classifier, contrastive };

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  std::size_t steps = 7;
  // Non-positive means the default 2.5 * epsilon / steps.
  double step_size = 0.0;
  bool random_start = true;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::classifier;

  double effective_step_size() const;
  void validate() const;
};

struct Perturbation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> delta;
  std::vector<std::uint8_t> support;
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

// J(x) and dJ/dx through one forward/backward pass. Throws AttackError when non-finite.
LossGradient input_gradient(const Image& x, const Scorer& scorer);

// x + delta clamped to [0,1].
Image apply_perturbation(const Image& x, const Perturbation& p);

// Coordinatewise projection onto {origin + d : |d| <= eps} intersected with [0,1]^n.
Image project_linf(const Image& candidate, const Image& origin, double epsilon);

// eps * sign(dJ/dx), kept inside [0,1]; sign(0) = 0.
Perturbation fgsm(const Image& x, const Scorer& scorer, double epsilon);

Perturbation pgd(const Image& x, const Scorer& scorer, const AttackConfig& config);

struct Scatterer {
  double row = 0.0;
  double col = 0.0;
  double amplitude = 0.0;
};

struct ScattererSet {
  std::vector<Scatterer> scatterers;
  double sigma = 1.0;
  // ceil(3 sigma)
  std::size_t radius() const;
};

// Sum of unit-peak isotropic Gaussians, each truncated to pixels within radius() of its rounded
// center. Support is the union of those footprints.
Perturbation render_scatterers(const ScattererSet& set, std::size_t height, std::size_t width);

struct OtsaConfig {
  std::size_t scatterers = 3;
  std::size_t steps = 10;
  double sigma = 1.0;
  double max_amplitude = 0.3;
  // Non-positive means max_amplitude / 4.
  double amplitude_step = 0.0;
  double position_step = 0.5;
  std::uint64_t seed = 0;
  // Evaluate J after the last step (costs one extra forward pass).
  bool track_loss = false;

  void validate() const;
};

struct OtsaResult {
  Perturbation perturbation;
  ScattererSet scatterers;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Sign-gradient ascent on scatterer positions and amplitudes. Amplitudes stay in [0, max_amplitude];
// a position whose rounded pixel leaves the mask snaps to the nearest mask pixel (Euclidean,
// ties in row-major order).
OtsaResult otsa_attack(const Image& x, const std::vector<std::uint8_t>& mask, const Scorer& scorer,
                       const OtsaConfig& config);

// Nearest mask pixel to (row, col); ties resolved in row-major order.
std::pair<std::size_t, std::size_t> nearest_mask_pixel(const std::vector<std::uint8_t>& mask, std::size_t width,
                                                       double row, double col);

}  // namespace factual
