#include "factual/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "factual/attacks.hpp"
#include "factual/data.hpp"
#include "factual/grad_check.hpp"
#include "factual/losses.hpp"
#include "factual/model.hpp"
#include "factual/pipeline.hpp"
#include "factual/rng.hpp"

namespace factual {

namespace {

constexpr double kGradBound = 1e-4;
constexpr double kFdStep = 1e-5;

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::vector<double> draw(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = numel(shape);
  return Tensor::from(std::move(shape), draw(rng, n, lo, hi));
}

// Values bounded away from 0 so relu never sits on its kink.
Tensor away_from_zero(Rng& rng, Shape shape) {
  const auto n = numel(shape);
  std::vector<double> v = draw(rng, n, -1.0, 1.0);
  for (auto& x : v) x = (x < 0 ? -0.05 : 0.05) + x;
  return Tensor::from(std::move(shape), std::move(v));
}

// Distinct values spaced 0.01 apart in random order, so pooling windows have clear winners.
Tensor spaced(Rng& rng, Shape shape) {
  const auto n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -0.5 + 0.01 * static_cast<double>(i) + uniform(rng, -1e-3, 1e-3);
  std::shuffle(v.begin(), v.end(), rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Fixed random weighting so every output coordinate reaches the scalar.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, Tensor::from(y.shape(), draw(rng, y.size(), -1.0, 1.0))));
}

std::vector<std::size_t> labels_with_positive(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = dim(rng, 0, classes - 1);
  if (n >= 2) labels[1] = labels[0];
  return labels;
}

struct GradCase {
  const char* name;
  // Draws the point and builds the function for one seed.
  std::function<std::pair<Tensor, ScalarFunction>(Rng&, std::uint64_t)> make;
};

ArchitectureConfig tiny_arch(bool standardize) {
  ArchitectureConfig a;
  a.input_size = 16;
  a.channels = {2, 3, 4};
  a.rep_dim = 6;
  a.proj_hidden = 5;
  a.proj_out = 4;
  a.classes = 3;
  a.standardize_input = standardize;
  return a;
}

std::vector<GradCase> grad_cases() {
  using P = std::pair<Tensor, ScalarFunction>;
  std::vector<GradCase> cases;
  auto binary = [&](const char* name, Tensor (*op)(const Tensor&, const Tensor&), bool lhs) {
    cases.push_back({name, [op, lhs](Rng& rng, std::uint64_t ps) -> P {
                       const Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
                       Tensor x = rand_tensor(rng, s), c = rand_tensor(rng, s);
                       return {x, [=](const Tensor& v) { return probe(lhs ? op(v, c) : op(c, v), ps); }};
                     }});
  };
  binary("add/lhs", &add, true);
  binary("add/rhs", &add, false);
  binary("sub/lhs", &sub, true);
  binary("sub/rhs", &sub, false);
  binary("mul/lhs", &mul, true);
  binary("mul/rhs", &mul, false);
  cases.push_back({"scale", [](Rng& rng, std::uint64_t ps) -> P {
                     const double f = uniform(rng, -3.0, 3.0);
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [=](const Tensor& v) { return probe(scale(v, f), ps); }};
                   }});
  for (int which = 0; which < 3; ++which) {
    static const char* names[] = {"matmul/lhs", "matmul/rhs", "matmul/rhs_transposed"};
    cases.push_back({names[which], [which](Rng& rng, std::uint64_t ps) -> P {
                       const auto m = dim(rng, 1, 8), k = dim(rng, 1, 8), n = dim(rng, 1, 8);
                       Tensor a = rand_tensor(rng, {m, k});
                       if (which == 0) {
                         Tensor b = rand_tensor(rng, {k, n});
                         return {a, [=](const Tensor& v) { return probe(matmul(v, b), ps); }};
                       }
                       const bool t = which == 2;
                       Tensor b = rand_tensor(rng, t ? Shape{n, k} : Shape{k, n});
                       return {b, [=](const Tensor& v) { return probe(matmul(a, v, t), ps); }};
                     }});
  }
  for (int which = 0; which < 3; ++which) {
    static const char* names[] = {"conv2d/input", "conv2d/weight", "conv2d/bias"};
    cases.push_back({names[which], [which](Rng& rng, std::uint64_t ps) -> P {
                       const auto n = dim(rng, 1, 2), cin = dim(rng, 1, 3), cout = dim(rng, 1, 3);
                       const auto k = dim(rng, 1, 3), stride = dim(rng, 1, 2), pad = dim(rng, 0, 1);
                       const auto h = dim(rng, 4, 8), w = dim(rng, 4, 8);
                       Tensor x = rand_tensor(rng, {n, cin, h, w});
                       Tensor wt = rand_tensor(rng, {cout, cin, k, k});
                       Tensor b = rand_tensor(rng, {cout});
                       if (which == 0) return {x, [=](const Tensor& v) { return probe(conv2d(v, wt, b, stride, pad), ps); }};
                       if (which == 1) return {wt, [=](const Tensor& v) { return probe(conv2d(x, v, b, stride, pad), ps); }};
                       return {b, [=](const Tensor& v) { return probe(conv2d(x, wt, v, stride, pad), ps); }};
                     }});
  }
  cases.push_back({"relu", [](Rng& rng, std::uint64_t ps) -> P {
                     return {away_from_zero(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [=](const Tensor& v) { return probe(relu(v), ps); }};
                   }});
  cases.push_back({"max_pool2x2", [](Rng& rng, std::uint64_t ps) -> P {
                     return {spaced(rng, {dim(rng, 1, 2), dim(rng, 1, 3), 2 * dim(rng, 1, 4), 2 * dim(rng, 1, 4)}),
                             [=](const Tensor& v) { return probe(max_pool2x2(v), ps); }};
                   }});
  cases.push_back({"global_avg_pool", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [=](const Tensor& v) { return probe(global_avg_pool(v), ps); }};
                   }});
  cases.push_back({"flatten", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)}),
                             [=](const Tensor& v) { return probe(flatten(v), ps); }};
                   }});
  cases.push_back({"reshape", [](Rng& rng, std::uint64_t ps) -> P {
                     const auto a = dim(rng, 1, 4), b = dim(rng, 1, 4), c = dim(rng, 1, 4);
                     return {rand_tensor(rng, {a * b, c}), [=](const Tensor& v) { return probe(reshape(v, {a, b * c}), ps); }};
                   }});
  for (int which = 0; which < 3; ++which) {
    static const char* names[] = {"dense/input", "dense/weight", "dense/bias"};
    cases.push_back({names[which], [which](Rng& rng, std::uint64_t ps) -> P {
                       const auto b = dim(rng, 1, 8), in = dim(rng, 1, 8), out = dim(rng, 1, 8);
                       Tensor x = rand_tensor(rng, {b, in}), w = rand_tensor(rng, {out, in}), bias = rand_tensor(rng, {out});
                       if (which == 0) return {x, [=](const Tensor& v) { return probe(dense(v, w, bias), ps); }};
                       if (which == 1) return {w, [=](const Tensor& v) { return probe(dense(x, v, bias), ps); }};
                       return {bias, [=](const Tensor& v) { return probe(dense(x, w, v), ps); }};
                     }});
  }
  cases.push_back({"l2_normalize", [](Rng& rng, std::uint64_t ps) -> P {
                     return {away_from_zero(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [=](const Tensor& v) { return probe(l2_normalize(v), ps); }};
                   }});
  cases.push_back({"exp", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}, -2.0, 2.0),
                             [=](const Tensor& v) { return probe(exp(v), ps); }};
                   }});
  cases.push_back({"log", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}, 0.5, 3.0),
                             [=](const Tensor& v) { return probe(log(v), ps); }};
                   }});
  cases.push_back({"sum", [](Rng& rng, std::uint64_t) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [](const Tensor& v) { return scale(sum(mul(v, v)), 0.5); }};
                   }});
  cases.push_back({"sum_rows", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [=](const Tensor& v) { return probe(sum_rows(v), ps); }};
                   }});
  cases.push_back({"mean", [](Rng& rng, std::uint64_t) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}),
                             [](const Tensor& v) { return mean(mul(v, v)); }};
                   }});
  cases.push_back({"softmax", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}, -3.0, 3.0),
                             [=](const Tensor& v) { return probe(softmax(v), ps); }};
                   }});
  cases.push_back({"log_softmax", [](Rng& rng, std::uint64_t ps) -> P {
                     return {rand_tensor(rng, {dim(rng, 1, 8), dim(rng, 1, 8)}, -3.0, 3.0),
                             [=](const Tensor& v) { return probe(log_softmax(v), ps); }};
                   }});
  cases.push_back({"gather_rows", [](Rng& rng, std::uint64_t ps) -> P {
                     const auto rows = dim(rng, 1, 8);
                     std::vector<std::size_t> idx(dim(rng, 1, 8));
                     for (auto& i : idx) i = dim(rng, 0, rows - 1);
                     return {rand_tensor(rng, {rows, dim(rng, 1, 8)}), [=](const Tensor& v) { return probe(gather_rows(v, idx), ps); }};
                   }});
  cases.push_back({"clamp", [](Rng& rng, std::uint64_t ps) -> P {
                     const auto n = dim(rng, 1, 8), m = dim(rng, 1, 8);
                     std::vector<double> v = draw(rng, n * m, -1.0, 1.0);
                     for (auto& x : v) {
                       if (std::abs(std::abs(x) - 0.5) < 1e-3) x += 0.01;
                     }
                     return {Tensor::from({n, m}, v), [=](const Tensor& t) { return probe(clamp(t, -0.5, 0.5), ps); }};
                   }});
  cases.push_back({"supervised_contrastive_loss", [](Rng& rng, std::uint64_t) -> P {
                     const auto b = dim(rng, 2, 8), d = dim(rng, 2, 8);
                     auto labels = labels_with_positive(rng, b, dim(rng, 1, 4));
                     const double tau = uniform(rng, 0.1, 1.0);
                     return {rand_tensor(rng, {b, d}),
                             [=](const Tensor& v) { return supervised_contrastive_loss(l2_normalize(v), labels, tau); }};
                   }});
  cases.push_back({"contrastive_anchor_loss", [](Rng& rng, std::uint64_t) -> P {
                     const auto b = dim(rng, 1, 8), d = dim(rng, 2, 8);
                     auto labels = labels_with_positive(rng, b, dim(rng, 1, 4));
                     Tensor refs = l2_normalize(rand_tensor(rng, {b, d}));
                     const auto y = labels[0];
                     return {rand_tensor(rng, {1, d}), [=](const Tensor& v) {
                               return contrastive_anchor_loss(l2_normalize(v), y, refs, labels, 0.1);
                             }};
                   }});
  cases.push_back({"cross_entropy_loss", [](Rng& rng, std::uint64_t) -> P {
                     const auto b = dim(rng, 1, 8), c = dim(rng, 2, 8);
                     std::vector<std::size_t> labels(b);
                     for (auto& l : labels) l = dim(rng, 0, c - 1);
                     return {rand_tensor(rng, {b, c}, -3.0, 3.0),
                             [=](const Tensor& v) { return cross_entropy_loss(v, labels); }};
                   }});
  for (int standardize = 0; standardize < 2; ++standardize) {
    static const char* names[] = {"encoder+classifier/input", "encoder+classifier/input_standardized"};
    cases.push_back({names[standardize], [standardize](Rng& rng, std::uint64_t) -> P {
                       const auto params = init_params(tiny_arch(standardize != 0), rng());
                       std::vector<std::size_t> labels{dim(rng, 0, 2), dim(rng, 0, 2)};
                       return {rand_tensor(rng, {2, 1, 16, 16}, 0.0, 1.0), [=](const Tensor& v) {
                                 return cross_entropy_loss(classify(params, encode(params, v)), labels);
                               }};
                     }});
  }
  cases.push_back({"encoder+classifier/first_conv", [](Rng& rng, std::uint64_t) -> P {
                     const auto params = init_params(tiny_arch(false), rng());
                     Tensor x = rand_tensor(rng, {2, 1, 16, 16}, 0.0, 1.0);
                     std::vector<std::size_t> labels{dim(rng, 0, 2), dim(rng, 0, 2)};
                     return {params.conv_w[0].detach(), [=](const Tensor& v) {
                               ModelParams p = params;
                               p.conv_w[0] = v;
                               return cross_entropy_loss(classify(p, encode(p, x)), labels);
                             }};
                   }});
  cases.push_back({"projector/input", [](Rng& rng, std::uint64_t ps) -> P {
                     const auto params = init_params(tiny_arch(false), rng());
                     return {rand_tensor(rng, {dim(rng, 1, 4), 6}), [=](const Tensor& v) { return probe(project(params, v), ps); }};
                   }});
  cases.push_back({"projector/hidden_weight", [](Rng& rng, std::uint64_t ps) -> P {
                     const auto params = init_params(tiny_arch(false), rng());
                     Tensor r = rand_tensor(rng, {3, 6});
                     return {params.proj1_w.detach(), [=](const Tensor& v) {
                               ModelParams p = params;
                               p.proj1_w = v;
                               return probe(project(p, r), ps);
                             }};
                   }});
  return cases;
}

ModelParams attack_model(std::uint64_t seed) {
  ArchitectureConfig a;
  a.input_size = 16;
  a.channels = {2, 2, 2};
  a.rep_dim = 4;
  a.proj_hidden = 4;
  a.proj_out = 4;
  a.classes = 4;
  return init_params(a, seed);
}

LabeledImage attack_scene(std::size_t i, std::uint64_t seed) {
  SceneConfig sc;
  sc.size = 16;
  return generate_scene(i % 4, sub_seed(seed, {i}), sc);
}

CheckResult finish(CheckResult r) {
  r.passed = r.violations == 0 && r.trials > 0;
  return r;
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::size_t seeds, std::uint64_t base_seed) {
  std::vector<CheckResult> out;
  const auto cases = grad_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    CheckResult r;
    r.name = std::string("gradient ") + cases[c].name;
    r.bound = kGradBound;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(sub_seed(base_seed, {c, s}));
      auto [x, f] = cases[c].make(rng, sub_seed(base_seed, {c, s, 1}));
      const double err = finite_difference_check(f, x, kFdStep);
      ++r.trials;
      if (!(err < kGradBound)) ++r.violations;
      r.worst = std::max(r.worst, err);
    }
    out.push_back(finish(r));
  }
  return out;
}

CheckResult sign_forward_only_check() {
  CheckResult r;
  r.name = "sign is forward-only";
  r.trials = 1;
  Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0}, true);
  const Tensor y = sign(x);
  const auto v = y.data();
  if (!(v[0] == -1.0 && v[1] == 0.0 && v[2] == 1.0)) ++r.violations;
  try {
    backward(sum(mul(y, x)));
    ++r.violations;
    r.detail = "backward through sign did not throw";
  } catch (const TensorError&) {
  }
  return finish(r);
}

double brute_force_scl(const std::vector<std::vector<double>>& reps, const std::vector<std::size_t>& labels,
                       double tau) {
  const std::size_t n = reps.size();
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (a == i) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < reps[i].size(); ++k) dot += reps[i][k] * reps[a][k];
      denom += std::exp(dot / tau);
    }
    double term = 0.0;
    std::size_t positives = 0;
    for (std::size_t p = 0; p < n; ++p) {
      if (p == i || labels[p] != labels[i]) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < reps[i].size(); ++k) dot += reps[i][k] * reps[p][k];
      term += std::log(std::exp(dot / tau) / denom);
      ++positives;
    }
    if (positives == 0) continue;
    total += -term / static_cast<double>(positives);
    ++anchors;
  }
  return total / static_cast<double>(anchors);
}

CheckResult scl_oracle_check(std::size_t batches, std::uint64_t seed) {
  CheckResult r;
  r.name = "contrastive loss vs brute-force oracle";
  r.bound = 1e-8;
  for (std::size_t t = 0; t < batches; ++t) {
    Rng rng(sub_seed(seed, {t}));
    const auto b = dim(rng, 2, 16), d = dim(rng, 1, 8), c = dim(rng, 1, 4);
    const auto labels = labels_with_positive(rng, b, c);
    const double tau = uniform(rng, 0.05, 1.0);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> rows(b, std::vector<double>(d));
    std::vector<double> flat;
    for (auto& row : rows) {
      double norm = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-6) {
        row.assign(d, 0.0);
        row[0] = norm = 1.0;
      }
      for (auto& v : row) flat.push_back(v /= norm);
    }
    const double got = supervised_contrastive_loss(Tensor::from({b, d}, flat), labels, tau).item();
    const double want = brute_force_scl(rows, labels, tau);
    const double err = std::abs(got - want);
    ++r.trials;
    if (!(err <= r.bound)) ++r.violations;
    r.worst = std::max(r.worst, err);
  }
  return finish(r);
}

CheckResult scl_identical_pair_check() {
  CheckResult r;
  r.name = "contrastive loss on identical same-class pair";
  r.trials = 1;
  const std::vector<std::size_t> labels{2, 2};
  const double v = supervised_contrastive_loss(Tensor::from({2, 2}, {0.6, 0.8, 0.6, 0.8}), labels, 0.1).item();
  r.worst = std::abs(v);
  if (v != 0.0) ++r.violations;
  return finish(r);
}

CheckResult image_attack_budget_check(std::size_t count, std::uint64_t seed) {
  CheckResult r;
  r.name = "FGSM/PGD budget and pixel range";
  r.bound = 1e-12;
  const auto params = attack_model(seed);
  for (std::size_t t = 0; t < count; ++t) {
    Rng rng(sub_seed(seed, {0xb0d, t}));
    const auto scene = attack_scene(t, seed);
    const Image x = to_image(scene);
    const Scorer scorer = classifier_scorer(params, scene.label);
    const double eps = t % 10 == 0 ? 0.0 : uniform(rng, 0.0, 16.0 / 255.0);
    Perturbation p;
    if (t % 2 == 0) {
      p = fgsm(x, scorer, eps);
    } else {
      AttackConfig cfg;
      cfg.epsilon = eps;
      cfg.steps = dim(rng, 1, 7);
      cfg.random_start = rng() % 2 == 0;
      cfg.step_size = rng() % 2 == 0 ? 0.0 : uniform(rng, 0.1, 1.0) * eps;
      cfg.seed = rng();
      p = pgd(x, scorer, cfg);
    }
    ++r.trials;
    bool bad = false;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      const double raw = x.values[i] + p.delta[i];
      const double over_budget = std::abs(p.delta[i]) - eps;
      const double outside = std::max(-raw, raw - 1.0);
      r.worst = std::max({r.worst, over_budget, outside});
      if (over_budget > 1e-12 || outside > 0.0) bad = true;
    }
    if (bad) ++r.violations;
  }
  return finish(r);
}

CheckResult scatterer_support_check(std::size_t count, std::uint64_t seed) {
  CheckResult r;
  r.name = "scatterer perturbation confined to dilated mask";
  const auto params = attack_model(seed ^ 0x5ca7);
  for (std::size_t t = 0; t < count; ++t) {
    Rng rng(sub_seed(seed, {0x07a, t}));
    const auto scene = attack_scene(t, seed ^ 0x5ca7);
    const Image x = to_image(scene);
    OtsaConfig cfg;
    cfg.scatterers = dim(rng, 1, 4);
    cfg.steps = dim(rng, 1, 10);
    cfg.sigma = uniform(rng, 0.5, 2.0);
    cfg.max_amplitude = t % 10 == 0 ? 0.0 : uniform(rng, 0.0, 0.5);
    cfg.seed = rng();
    const auto res = otsa_attack(x, scene.mask, classifier_scorer(params, scene.label), cfg);
    const long radius = static_cast<long>(res.scatterers.radius());
    const long h = static_cast<long>(x.height), w = static_cast<long>(x.width);
    ++r.trials;
    bool bad = false;
    for (long y = 0; y < h && !bad; ++y) {
      for (long c = 0; c < w && !bad; ++c) {
        bool near_mask = false;
        for (long my = std::max(0L, y - radius); my <= std::min(h - 1, y + radius) && !near_mask; ++my) {
          for (long mc = std::max(0L, c - radius); mc <= std::min(w - 1, c + radius); ++mc) {
            if (scene.mask[my * w + mc] && (my - y) * (my - y) + (mc - c) * (mc - c) <= radius * radius) {
              near_mask = true;
              break;
            }
          }
        }
        const auto i = static_cast<std::size_t>(y * w + c);
        if ((!near_mask || !res.perturbation.support[i]) && res.perturbation.delta[i] != 0.0) bad = true;
        if (!near_mask && res.perturbation.support[i]) bad = true;
      }
    }
    for (const auto& s : res.scatterers.scatterers) {
      const long sr = std::lround(s.row), sc = std::lround(s.col);
      if (sr < 0 || sr >= h || sc < 0 || sc >= w || !scene.mask[sr * w + sc]) bad = true;
      if (!(s.amplitude >= 0.0 && s.amplitude <= cfg.max_amplitude)) bad = true;
    }
    if (bad) ++r.violations;
  }
  return finish(r);
}

CheckResult pgd_fgsm_equivalence_check(std::size_t trials, std::uint64_t seed) {
  CheckResult r;
  r.name = "one-step PGD equals FGSM bitwise";
  const auto params = attack_model(seed ^ 0xf65);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(sub_seed(seed, {0xf65, t}));
    const auto scene = attack_scene(t, seed ^ 0xf65);
    const Image x = to_image(scene);
    const Scorer scorer = classifier_scorer(params, scene.label);
    AttackConfig cfg;
    cfg.epsilon = uniform(rng, 1.0 / 255.0, 16.0 / 255.0);
    cfg.steps = 1;
    cfg.step_size = cfg.epsilon;
    cfg.random_start = false;
    ++r.trials;
    if (pgd(x, scorer, cfg).delta != fgsm(x, scorer, cfg.epsilon).delta) ++r.violations;
  }
  return finish(r);
}

CheckResult linear_pgd_closed_form_check(std::size_t trials, std::uint64_t seed) {
  CheckResult r;
  r.name = "PGD on linear softmax scorer";
  // Random pixels: (x + eps) - x carries at most half an ulp of rounding. Dyadic pixels with a
  // dyadic budget: exact.
  r.bound = 0x1p-53;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(sub_seed(seed, {0x11e, t}));
    const bool dyadic = t % 2 == 1;
    const std::size_t side = dim(rng, 4, 8), n = side * side;
    const double eps = dyadic ? 0x1p-5 : 8.0 / 255.0;
    std::vector<double> w = draw(rng, 2 * n, -1.0, 1.0);
    for (auto& v : w) v += v < 0 ? -1e-3 : 1e-3;
    const Tensor wt = Tensor::from({2, n}, w);
    const Tensor bt = Tensor::from({2}, draw(rng, 2, -0.5, 0.5));
    const std::vector<std::size_t> label{dim(rng, 0, 1)};
    const Scorer scorer = [=](const Tensor& img) { return cross_entropy_loss(dense(flatten(img), wt, bt), label); };
    Image x{side, side, {}};
    for (std::size_t i = 0; i < n; ++i) {
      x.values.push_back(dyadic ? static_cast<double>(dim(rng, 64, 960)) / 1024.0 : uniform(rng, eps, 1.0 - eps));
    }
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.steps = dim(rng, 1, 7);
    cfg.step_size = cfg.steps == 1 ? eps : 0.0;
    cfg.random_start = cfg.steps >= 3 && rng() % 2 == 0;
    cfg.seed = rng();
    const auto p = pgd(x, scorer, cfg);
    const std::size_t y = label[0], o = 1 - y;
    ++r.trials;
    bool bad = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = w[o * n + i] - w[y * n + i];
      const double want = diff > 0 ? eps : -eps;
      const double err = std::abs(p.delta[i] - want);
      r.worst = std::max(r.worst, err);
      if ((p.delta[i] > 0) != (diff > 0) || err > (dyadic ? 0.0 : r.bound)) bad = true;
    }
    if (bad) ++r.violations;
  }
  return finish(r);
}

}  // namespace factual
