#include "factual/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "factual/rng.hpp"

namespace factual {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_same_shape(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
    throw AttackError("image shapes differ");
  }
}

Tensor to_tensor(const Image& x, bool requires_grad) {
  return Tensor::from({1, 1, x.height, x.width}, x.values, requires_grad);
}

Perturbation difference(const Image& perturbed, const Image& x) {
  Perturbation p;
  p.height = x.height;
  p.width = x.width;
  p.delta.resize(x.values.size());
  for (std::size_t i = 0; i < p.delta.size(); ++i) p.delta[i] = perturbed.values[i] - x.values[i];
  p.support.assign(p.delta.size(), 1);
  return p;
}

}  // namespace

double AttackConfig::effective_step_size() const {
  return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(std::max<std::size_t>(steps, 1));
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw AttackError("attack: epsilon must be non-negative");
  if (steps < 1) throw AttackError("attack: steps must be at least 1");
  if (epsilon > 0.0 && !(effective_step_size() > 0.0)) throw AttackError("attack: step size must be positive");
}

void OtsaConfig::validate() const {
  if (scatterers < 1) throw AttackError("otsa: need at least one scatterer");
  if (steps < 1) throw AttackError("otsa: steps must be at least 1");
  if (!(sigma > 0.0)) throw AttackError("otsa: kernel width must be positive");
  if (!(max_amplitude >= 0.0)) throw AttackError("otsa: amplitude bound must be non-negative");
  if (!(position_step >= 0.0)) throw AttackError("otsa: position step must be non-negative");
}

LossGradient input_gradient(const Image& x, const Scorer& scorer) {
  Tensor input = to_tensor(x, true);
  Tensor loss = scorer(input);
  LossGradient out;
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) throw AttackError("non-finite loss");
  backward(loss);
  if (auto g = input.grad()) {
    out.grad.assign(g->begin(), g->end());
  } else {
    out.grad.assign(x.values.size(), 0.0);
  }
  for (double v : out.grad) {
    if (!std::isfinite(v)) throw AttackError("non-finite gradient");
  }
  return out;
}

Image apply_perturbation(const Image& x, const Perturbation& p) {
  if (p.delta.size() != x.values.size()) throw AttackError("perturbation shape differs from image");
  Image out = x;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::clamp(x.values[i] + p.delta[i], 0.0, 1.0);
  return out;
}

Image project_linf(const Image& candidate, const Image& origin, double epsilon) {
  check_same_shape(candidate, origin);
  Image out = origin;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double d = std::clamp(candidate.values[i] - origin.values[i], -epsilon, epsilon);
    out.values[i] = std::clamp(origin.values[i] + d, 0.0, 1.0);
  }
  return out;
}

Perturbation fgsm(const Image& x, const Scorer& scorer, double epsilon) {
  if (!(epsilon >= 0.0)) throw AttackError("fgsm: epsilon must be non-negative");
  const auto lg = input_gradient(x, scorer);
  Image stepped = x;
  for (std::size_t i = 0; i < stepped.values.size(); ++i) stepped.values[i] += epsilon * sign_of(lg.grad[i]);
  return difference(project_linf(stepped, x, epsilon), x);
}

Perturbation pgd(const Image& x, const Scorer& scorer, const AttackConfig& config) {
  config.validate();
  const double eps = config.epsilon;
  const double alpha = config.effective_step_size();
  Image current = x;
  if (config.random_start && eps > 0.0) {
    Rng rng(sub_seed(config.seed, {0x96d}));
    std::uniform_real_distribution<double> noise(-eps, eps);
    for (auto& v : current.values) v += noise(rng);
    current = project_linf(current, x, eps);
  }
  for (std::size_t t = 0; t < config.steps; ++t) {
    LossGradient lg;
    try {
      lg = input_gradient(current, scorer);
    } catch (const AttackError& e) {
      throw AttackError("pgd iteration " + std::to_string(t) + ": " + e.what());
    }
    for (std::size_t i = 0; i < current.values.size(); ++i) current.values[i] += alpha * sign_of(lg.grad[i]);
    current = project_linf(current, x, eps);
  }
  return difference(current, x);
}

std::size_t ScattererSet::radius() const { return static_cast<std::size_t>(std::ceil(3.0 * sigma)); }

namespace {

// Visits footprint pixels of one scatterer: f(index, row, col, kernel value).
template <typename F>
void for_each_footprint(const Scatterer& s, double sigma, std::size_t radius, std::size_t height,
                        std::size_t width, F&& f) {
  const long cr = std::lround(s.row), cc = std::lround(s.col);
  const long r = static_cast<long>(radius);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (long dy = -r; dy <= r; ++dy) {
    const long y = cr + dy;
    if (y < 0 || y >= static_cast<long>(height)) continue;
    for (long dx = -r; dx <= r; ++dx) {
      const long x = cc + dx;
      if (x < 0 || x >= static_cast<long>(width) || dy * dy + dx * dx > r * r) continue;
      const double ry = static_cast<double>(y) - s.row, rx = static_cast<double>(x) - s.col;
      f(static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x), ry, rx,
        std::exp(-(ry * ry + rx * rx) * inv2s2));
    }
  }
}

}  // namespace

Perturbation render_scatterers(const ScattererSet& set, std::size_t height, std::size_t width) {
  Perturbation p;
  p.height = height;
  p.width = width;
  p.delta.assign(height * width, 0.0);
  p.support.assign(height * width, 0);
  const auto radius = set.radius();
  for (const auto& s : set.scatterers) {
    for_each_footprint(s, set.sigma, radius, height, width, [&](std::size_t i, double, double, double g) {
      p.delta[i] += s.amplitude * g;
      p.support[i] = 1;
    });
  }
  return p;
}

std::pair<std::size_t, std::size_t> nearest_mask_pixel(const std::vector<std::uint8_t>& mask, std::size_t width,
                                                       double row, double col) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_index = mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double dy = static_cast<double>(i / width) - row, dx = static_cast<double>(i % width) - col;
    const double d = dy * dy + dx * dx;
    if (d < best) {
      best = d;
      best_index = i;
    }
  }
  if (best_index == mask.size()) throw AttackError("otsa: empty target mask");
  return {best_index / width, best_index % width};
}

OtsaResult otsa_attack(const Image& x, const std::vector<std::uint8_t>& mask, const Scorer& scorer,
                       const OtsaConfig& config) {
  config.validate();
  const std::size_t h = x.height, w = x.width;
  if (mask.size() != h * w) throw AttackError("otsa: mask shape differs from image");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) candidates.push_back(i);
  }
  if (candidates.empty()) throw AttackError("otsa: empty target mask");

  Rng rng(sub_seed(config.seed, {0x075a}));
  ScattererSet set;
  set.sigma = config.sigma;
  for (std::size_t k = 0; k < config.scatterers; ++k) {
    std::size_t pick;
    if (k < candidates.size()) {
      // Partial Fisher-Yates keeps the first positions distinct.
      std::uniform_int_distribution<std::size_t> dist(k, candidates.size() - 1);
      std::swap(candidates[k], candidates[dist(rng)]);
      pick = candidates[k];
    } else {
      std::uniform_int_distribution<std::size_t> dist(0, candidates.size() - 1);
      pick = candidates[dist(rng)];
    }
    set.scatterers.push_back({static_cast<double>(pick / w), static_cast<double>(pick % w),
                              config.max_amplitude / 2.0});
  }

  const double amp_step = config.amplitude_step > 0.0 ? config.amplitude_step : config.max_amplitude / 4.0;
  const double inv_s2 = 1.0 / (config.sigma * config.sigma);
  const auto radius = set.radius();
  OtsaResult result;
  for (std::size_t t = 0; t < config.steps; ++t) {
    const auto p = render_scatterers(set, h, w);
    Image perturbed = x;
    std::vector<double> pass(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = x.values[i] + p.delta[i];
      perturbed.values[i] = std::clamp(v, 0.0, 1.0);
      pass[i] = (v > 0.0 && v < 1.0) ? 1.0 : 0.0;
    }
    LossGradient lg;
    try {
      lg = input_gradient(perturbed, scorer);
    } catch (const AttackError& e) {
      throw AttackError("otsa iteration " + std::to_string(t) + ": " + e.what());
    }
    if (t == 0) result.initial_loss = lg.loss;

    for (auto& s : set.scatterers) {
      double ga = 0.0, gr = 0.0, gc = 0.0;
      for_each_footprint(s, set.sigma, radius, h, w, [&](std::size_t i, double ry, double rx, double g) {
        const double gp = lg.grad[i] * pass[i];
        ga += gp * g;
        gr += gp * s.amplitude * g * ry * inv_s2;
        gc += gp * s.amplitude * g * rx * inv_s2;
      });
      s.amplitude = std::clamp(s.amplitude + amp_step * sign_of(ga), 0.0, config.max_amplitude);
      s.row = std::clamp(s.row + config.position_step * sign_of(gr), 0.0, static_cast<double>(h - 1));
      s.col = std::clamp(s.col + config.position_step * sign_of(gc), 0.0, static_cast<double>(w - 1));
      const auto ri = static_cast<std::size_t>(std::lround(s.row));
      const auto ci = static_cast<std::size_t>(std::lround(s.col));
      if (!mask[ri * w + ci]) {
        const auto [nr, nc] = nearest_mask_pixel(mask, w, s.row, s.col);
        s.row = static_cast<double>(nr);
        s.col = static_cast<double>(nc);
      }
    }
  }
  result.perturbation = render_scatterers(set, h, w);
  result.scatterers = set;
  if (config.track_loss) {
    const double v = scorer(to_tensor(apply_perturbation(x, result.perturbation), false)).item();
    if (!std::isfinite(v)) throw AttackError("otsa: non-finite final loss");
    result.final_loss = v;
  }
  return result;
}

}  // namespace factual
