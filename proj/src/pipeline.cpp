#include "factual/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "factual/losses.hpp"
#include "factual/parallel.hpp"
#include "factual/rng.hpp"

namespace factual {

namespace {

// Views per gradient chunk. Fixed so results do not depend on the worker count.
constexpr std::size_t kChunk = 8;

enum Stage : std::uint64_t { kPretrain = 1, kFinetune = 2, kStandard = 3, kEval = 4, kTriples = 5 };

using GradSet = std::vector<std::vector<double>>;

void accumulate(GradSet& total, const GradSet& part) {
  if (total.empty()) {
    total = part;
    return;
  }
  for (std::size_t s = 0; s < total.size(); ++s) {
    for (std::size_t i = 0; i < total[s].size(); ++i) total[s][i] += part[s][i];
  }
}

GradSet concat(GradSet a, GradSet b) {
  for (auto& g : b) a.push_back(std::move(g));
  return a;
}

std::vector<Tensor*> concat(std::vector<Tensor*> a, const std::vector<Tensor*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t chunk_count(std::size_t n) { return (n + kChunk - 1) / kChunk; }

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                   Stage stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(seed, {stage, epoch, 0xba7c}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(std::min(n, i + batch)));
  }
  return out;
}

void check_dataset(const Dataset& ds) {
  if (ds.images.empty()) throw PipelineError("empty dataset");
  if (ds.class_count < 2) throw PipelineError("dataset needs at least 2 classes");
}

// Per-original views reused across batches under per-epoch / once regeneration.
struct SampleViews {
  Image clean, object, image;
};

float nudge_within(float value, float origin, double epsilon) {
  while (std::abs(static_cast<double>(value) - static_cast<double>(origin)) > epsilon) {
    value = std::nextafter(value, origin);
  }
  return value;
}

LabeledImage with_pixels(const LabeledImage& base, const Image& img) {
  LabeledImage out = base;
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    out.pixels[i] = static_cast<float>(std::clamp(img.values[i], 0.0, 1.0));
  }
  return out;
}

class Trainer {
 public:
  Trainer(const Dataset& ds, const TrainConfig& cfg) : ds_(ds), cfg_(cfg) {}

  // Clean, object-perturbed and image-perturbed views for a batch, attacked against `params`.
  std::vector<SampleViews> make_views(const std::vector<std::size_t>& batch, const ModelParams& params, Stage stage,
                                      std::size_t epoch, LossMode mode, double budget) const {
    const std::size_t b = batch.size();
    std::vector<SampleViews> views(b);
    std::vector<LabeledImage> view1(b), view2(b);
    parallel_for(b, cfg_.threads, [&](std::size_t k) {
      const auto idx = batch[k];
      const auto& src = ds_.images[idx];
      views[k].clean = to_image(src);
      view1[k] = cfg_.augment ? random_augment(src, sub_seed(cfg_.seed, {stage, epoch, idx, 1})) : src;
      view2[k] = cfg_.augment ? random_augment(src, sub_seed(cfg_.seed, {stage, epoch, idx, 2})) : src;
    });

    if (budget <= 0.0) {
      for (std::size_t k = 0; k < b; ++k) {
        views[k].image = to_image(view1[k]);
        views[k].object = to_image(view2[k]);
      }
      return views;
    }

    Tensor refs;
    std::vector<std::size_t> ref_labels;
    if (mode == LossMode::contrastive) {
      std::vector<Image> clean(b);
      for (std::size_t k = 0; k < b; ++k) {
        clean[k] = views[k].clean;
        ref_labels.push_back(ds_.images[batch[k]].label);
      }
      refs = project_all(params, clean);
    }

    parallel_for(b, cfg_.threads, [&](std::size_t k) {
      const auto idx = batch[k];
      const auto label = ds_.images[idx].label;
      const Scorer scorer = mode == LossMode::contrastive
                                ? contrastive_scorer(params, label, refs, ref_labels, cfg_.tau)
                                : classifier_scorer(params, label);
      try {
        const Image x1 = to_image(view1[k]);
        AttackConfig pgd_cfg = cfg_.pgd;
        pgd_cfg.seed = sub_seed(cfg_.seed, {stage, epoch, idx, 3});
        if (budget < 1.0) {
          pgd_cfg.step_size = pgd_cfg.effective_step_size() * budget;
          pgd_cfg.epsilon *= budget;
        }
        views[k].image = apply_perturbation(x1, pgd(x1, scorer, pgd_cfg));

        const Image x2 = to_image(view2[k]);
        OtsaConfig otsa_cfg = cfg_.otsa;
        otsa_cfg.seed = sub_seed(cfg_.seed, {stage, epoch, idx, 4});
        otsa_cfg.track_loss = false;
        if (budget < 1.0) {
          otsa_cfg.amplitude_step = (otsa_cfg.amplitude_step > 0.0 ? otsa_cfg.amplitude_step : otsa_cfg.max_amplitude / 4.0) * budget;
          otsa_cfg.max_amplitude *= budget;
        }
        views[k].object = apply_perturbation(x2, otsa_attack(x2, view2[k].mask, scorer, otsa_cfg).perturbation);
      } catch (const std::exception& e) {
        throw PipelineError("sample " + std::to_string(idx) + ": " + e.what());
      }
    });
    return views;
  }

  Tensor project_all(const ModelParams& params, const std::vector<Image>& images) const {
    const std::size_t n = images.size();
    std::vector<Tensor> parts(chunk_count(n));
    parallel_for(parts.size(), cfg_.threads, [&](std::size_t c) {
      const auto begin = c * kChunk, end = std::min(n, begin + kChunk);
      parts[c] = project(params, encode(params, stack_images(images, begin, end)));
    });
    std::vector<double> values;
    for (const auto& p : parts) values.insert(values.end(), p.data().begin(), p.data().end());
    return Tensor::from({n, params.arch().proj_out}, std::move(values));
  }

  // One supervised contrastive step on encoder + projector; returns the batch loss.
  double contrastive_step(ModelParams& params, const ViewBatch& vb, SgdMomentum& opt) const {
    const std::size_t n = vb.images.size();
    const std::size_t chunks = chunk_count(n);
    std::vector<ModelParams> bound(chunks);
    std::vector<Tensor> z(chunks);
    parallel_for(chunks, cfg_.threads, [&](std::size_t c) {
      bound[c] = params.bind(true, true, false);
      const auto begin = c * kChunk, end = std::min(n, begin + kChunk);
      z[c] = project(bound[c], encode(bound[c], stack_images(vb.images, begin, end)));
    });
    std::vector<double> all;
    for (const auto& t : z) all.insert(all.end(), t.data().begin(), t.data().end());
    const std::size_t dim = params.arch().proj_out;
    Tensor zall = Tensor::from({n, dim}, std::move(all), true);
    Tensor loss = supervised_contrastive_loss(zall, vb.labels, cfg_.tau);
    backward(loss);
    const auto dz = *zall.grad();

    std::vector<GradSet> grads(chunks);
    parallel_for(chunks, cfg_.threads, [&](std::size_t c) {
      const auto begin = c * kChunk, end = std::min(n, begin + kChunk);
      Tensor upstream = Tensor::from(z[c].shape(), std::vector<double>(dz.begin() + static_cast<long>(begin * dim),
                                                                       dz.begin() + static_cast<long>(end * dim)));
      backward(sum(mul(z[c], upstream)));
      grads[c] = concat(bound[c].grads(ParamGroup::encoder), bound[c].grads(ParamGroup::projector));
    });
    GradSet total;
    for (const auto& g : grads) accumulate(total, g);
    const auto slots = concat(params.group(ParamGroup::encoder), params.group(ParamGroup::projector));
    opt.step(slots, total);
    return loss.item();
  }

  // One mean cross-entropy step; the encoder is updated only when train_encoder is set.
  double cross_entropy_step(ModelParams& params, const ViewBatch& vb, SgdMomentum& opt, bool train_encoder) const {
    const std::size_t n = vb.images.size();
    const std::size_t chunks = chunk_count(n);
    std::vector<GradSet> grads(chunks);
    std::vector<double> losses(chunks);
    parallel_for(chunks, cfg_.threads, [&](std::size_t c) {
      ModelParams bound = params.bind(train_encoder, false, true);
      const auto begin = c * kChunk, end = std::min(n, begin + kChunk);
      std::vector<std::size_t> labels(vb.labels.begin() + static_cast<long>(begin),
                                      vb.labels.begin() + static_cast<long>(end));
      Tensor logits = classify(bound, encode(bound, stack_images(vb.images, begin, end)));
      Tensor loss = scale(cross_entropy_loss(logits, labels),
                          static_cast<double>(end - begin) / static_cast<double>(n));
      backward(loss);
      losses[c] = loss.item();
      grads[c] = train_encoder ? concat(bound.grads(ParamGroup::encoder), bound.grads(ParamGroup::classifier))
                               : bound.grads(ParamGroup::classifier);
    });
    GradSet total;
    for (const auto& g : grads) accumulate(total, g);
    const auto slots = train_encoder
                           ? concat(params.group(ParamGroup::encoder), params.group(ParamGroup::classifier))
                           : params.group(ParamGroup::classifier);
    opt.step(slots, total);
    double l = 0.0;
    for (double v : losses) l += v;
    return l;
  }

  ViewBatch assemble(const std::vector<std::size_t>& batch, const std::vector<SampleViews>& views,
                     bool clean_only) const {
    ViewBatch vb;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto label = ds_.images[batch[k]].label;
      auto push = [&](const Image& img, ViewTag tag) {
        vb.images.push_back(img);
        vb.labels.push_back(label);
        vb.tags.push_back(tag);
        vb.origins.push_back(batch[k]);
      };
      push(views[k].clean, ViewTag::clean);
      if (clean_only) continue;
      push(views[k].object, ViewTag::object);
      push(views[k].image, ViewTag::image);
    }
    return vb;
  }

  // Shared epoch loop for the three-view stages.
  double budget(std::size_t epoch, std::size_t batch_index, std::size_t batches, double delay, double warmup) const {
    const double progress =
        static_cast<double>(epoch) + static_cast<double>(batch_index) / static_cast<double>(batches) - delay;
    if (progress < 0.0) return 0.0;
    if (warmup <= 0.0) return 1.0;
    return std::min(1.0, progress / warmup);
  }

  TrainResult run_views(ModelParams params, Stage stage, std::size_t epochs, LossMode mode, bool clean_only,
                        double delay, double warmup,
                        const std::function<double(ModelParams&, const ViewBatch&)>& step,
                        const BatchObserver& observer) const {
    TrainResult result;
    std::vector<std::optional<SampleViews>> cache(ds_.images.size());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      const auto batches = make_batches(ds_.images.size(), cfg_.batch, cfg_.seed, stage, epoch);
      const bool refresh = cfg_.regen == RegenPolicy::per_epoch || (cfg_.regen == RegenPolicy::once && epoch == 0);
      if (!clean_only && refresh) {
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
          const auto& batch = batches[bi];
          auto views = make_views(batch, params, stage, epoch, mode, budget(epoch, bi, batches.size(), delay, warmup));
          for (std::size_t k = 0; k < batch.size(); ++k) cache[batch[k]] = std::move(views[k]);
        }
      }
      double total = 0.0;
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& batch = batches[bi];
        std::vector<SampleViews> views(batch.size());
        if (clean_only) {
          for (std::size_t k = 0; k < batch.size(); ++k) views[k].clean = to_image(ds_.images[batch[k]]);
        } else if (cfg_.regen == RegenPolicy::per_batch) {
          views = make_views(batch, params, stage, epoch, mode, budget(epoch, bi, batches.size(), delay, warmup));
        } else {
          for (std::size_t k = 0; k < batch.size(); ++k) views[k] = *cache[batch[k]];
        }
        const ViewBatch vb = assemble(batch, views, clean_only);
        if (observer) observer(vb);
        double loss;
        try {
          loss = step(params, vb);
        } catch (const std::exception& e) {
          throw PipelineError("batch " + std::to_string(bi) + ": " + e.what());
        }
        total += loss;
        ++result.optimizer_steps;
      }
      result.loss_history.push_back(total / static_cast<double>(batches.size()));
      spdlog::debug("stage {} epoch {}/{} loss {:.6f}", static_cast<int>(stage), epoch + 1, epochs,
                    result.loss_history.back());
    }
    result.params = std::move(params);
    return result;
  }

 private:
  const Dataset& ds_;
  const TrainConfig& cfg_;
};

}  // namespace

void TrainConfig::validate() const {
  if (pretrain_epochs < 1 || finetune_epochs < 1 || st_epochs < 1) throw PipelineError("epochs must be at least 1");
  if (batch < 2) throw PipelineError("batch must hold at least 2 original images");
  if (!(tau > 0.0)) throw PipelineError("temperature must be positive");
  if (!(attack_warmup_epochs >= 0.0) || !(attack_delay_epochs >= 0.0)) {
    throw PipelineError("attack delay and warm-up must be non-negative");
  }
  pgd.validate();
  otsa.validate();
}

Image to_image(const LabeledImage& image) {
  Image out;
  out.height = image.height;
  out.width = image.width;
  out.values.assign(image.pixels.begin(), image.pixels.end());
  return out;
}

Tensor stack_images(const std::vector<Image>& images, std::size_t begin, std::size_t end) {
  if (begin >= end || end > images.size()) throw PipelineError("empty image range");
  const auto h = images[begin].height, w = images[begin].width;
  std::vector<double> values;
  values.reserve((end - begin) * h * w);
  for (std::size_t i = begin; i < end; ++i) {
    if (images[i].height != h || images[i].width != w) throw PipelineError("images differ in shape");
    values.insert(values.end(), images[i].values.begin(), images[i].values.end());
  }
  return Tensor::from({end - begin, 1, h, w}, std::move(values));
}

Scorer classifier_scorer(const ModelParams& params, std::size_t label) {
  return [&params, label](const Tensor& image) {
    const std::size_t labels[] = {label};
    return cross_entropy_loss(classify(params, encode(params, image)), labels);
  };
}

Scorer contrastive_scorer(const ModelParams& params, std::size_t label, const Tensor& refs,
                          std::vector<std::size_t> ref_labels, double tau) {
  return [&params, label, refs, ref_labels = std::move(ref_labels), tau](const Tensor& image) {
    return contrastive_anchor_loss(project(params, encode(params, image)), label, refs, ref_labels, tau);
  };
}

TrainResult pretrain(const Dataset& dataset, const ModelParams& init, const TrainConfig& config,
                     const BatchObserver& observer) {
  config.validate();
  check_dataset(dataset);
  Trainer trainer(dataset, config);
  SgdMomentum opt(config.sgd);
  return trainer.run_views(
      init, kPretrain, config.pretrain_epochs, config.pretrain_attack_loss, false, config.attack_delay_epochs,
      config.attack_warmup_epochs,
      [&](ModelParams& p, const ViewBatch& vb) { return trainer.contrastive_step(p, vb, opt); }, observer);
}

TrainResult finetune(const Dataset& dataset, const ModelParams& pretrained, const TrainConfig& config,
                     const BatchObserver& observer) {
  config.validate();
  check_dataset(dataset);
  Trainer trainer(dataset, config);
  SgdMomentum opt(config.sgd);
  const bool train_encoder = !config.freeze_encoder;
  return trainer.run_views(
      pretrained, kFinetune, config.finetune_epochs, LossMode::classifier, config.clean_only_finetune, 0.0, 0.0,
      [&](ModelParams& p, const ViewBatch& vb) { return trainer.cross_entropy_step(p, vb, opt, train_encoder); },
      observer);
}

TrainResult run_standard_training(const Dataset& dataset, const ModelParams& init, const TrainConfig& config) {
  config.validate();
  check_dataset(dataset);
  Trainer trainer(dataset, config);
  SgdMomentum opt(config.sgd);
  return trainer.run_views(
      init, kStandard, config.st_epochs, LossMode::classifier, true, 0.0, 0.0,
      [&](ModelParams& p, const ViewBatch& vb) { return trainer.cross_entropy_step(p, vb, opt, true); }, {});
}

std::vector<AugmentedTriple> build_triples(const Dataset& dataset, const ModelParams& params,
                                           const AttackConfig& img_attack, const OtsaConfig& obj_attack,
                                           std::uint64_t seed, bool augment, std::size_t threads) {
  check_dataset(dataset);
  img_attack.validate();
  obj_attack.validate();
  std::vector<AugmentedTriple> out(dataset.images.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const auto& src = dataset.images[i];
    auto& t = out[i];
    t.clean = src;
    t.view1 = augment ? random_augment(src, sub_seed(seed, {kTriples, i, 1})) : src;
    t.view2 = augment ? random_augment(src, sub_seed(seed, {kTriples, i, 2})) : src;
    t.img_attack = img_attack;
    t.img_attack.seed = sub_seed(seed, {kTriples, i, 3});
    t.obj_attack = obj_attack;
    t.obj_attack.seed = sub_seed(seed, {kTriples, i, 4});
    const Scorer scorer = classifier_scorer(params, src.label);
    try {
      const Image x1 = to_image(t.view1);
      const Image z1 = apply_perturbation(x1, pgd(x1, scorer, t.img_attack));
      t.z_img = t.view1;
      for (std::size_t p = 0; p < z1.values.size(); ++p) {
        t.z_img.pixels[p] = nudge_within(static_cast<float>(z1.values[p]), t.view1.pixels[p], t.img_attack.epsilon);
      }
      const Image x2 = to_image(t.view2);
      t.delta_obj = otsa_attack(x2, t.view2.mask, scorer, t.obj_attack).perturbation;
      t.z_obj = with_pixels(t.view2, apply_perturbation(x2, t.delta_obj));
    } catch (const std::exception& e) {
      throw PipelineError("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

TripleViews to_views(const std::vector<AugmentedTriple>& triples, std::size_t class_count) {
  TripleViews v;
  v.class_count = class_count;
  for (const auto& t : triples) {
    v.clean.push_back(t.clean);
    v.object.push_back(t.z_obj);
    v.image.push_back(t.z_img);
  }
  return v;
}

double weighted_accuracy(const std::vector<AccuracyBucket>& buckets) {
  double num = 0.0, den = 0.0;
  for (const auto& b : buckets) {
    num += b.accuracy * b.count;
    den += b.count;
  }
  if (den <= 0.0) throw PipelineError("weighted accuracy over empty buckets");
  return num / den;
}

void MetricsReport::check_consistency() const {
  for (double v : {ta, ra, aa, ra_pgd, ra_otsa}) {
    if (!(v >= 0.0 && v <= 100.0)) throw PipelineError("metric outside [0, 100]");
  }
  const double n = static_cast<double>(n_clean);
  const double expected_aa = weighted_accuracy({{ta, n}, {ra_pgd, static_cast<double>(n_pgd)},
                                                {ra_otsa, static_cast<double>(n_otsa)}});
  if (std::abs(expected_aa - aa) > 1e-9) throw PipelineError("AA is not the count-weighted bucket mean");
  const double expected_ra = weighted_accuracy({{ra_pgd, static_cast<double>(n_pgd)},
                                                {ra_otsa, static_cast<double>(n_otsa)}});
  if (std::abs(expected_ra - ra) > 1e-9) throw PipelineError("RA is not the count-weighted perturbed mean");
  if (std::abs(gap - (ta - ra)) > 1e-9) throw PipelineError("gap differs from TA - RA");
  if (n_perturbed != n_pgd + n_otsa) throw PipelineError("perturbed count mismatch");
}

std::vector<std::size_t> predict(const ModelParams& params, const std::vector<Image>& images, std::size_t threads) {
  const std::size_t n = images.size();
  std::vector<std::size_t> out(n);
  parallel_for(chunk_count(n), threads, [&](std::size_t c) {
    const auto begin = c * kChunk, end = std::min(n, begin + kChunk);
    const Tensor logits = classify(params, encode(params, stack_images(images, begin, end)));
    const auto cls = logits.shape()[1];
    const auto v = logits.data();
    for (std::size_t r = 0; r < end - begin; ++r) {
      const auto row = v.subspan(r * cls, cls);
      out[begin + r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  });
  return out;
}

MetricsReport evaluate(const ModelParams& params, const Dataset& test, const EvalConfig& config) {
  if (test.images.empty()) throw PipelineError("empty test set");
  const std::size_t n = test.images.size();
  std::vector<Image> clean(n);
  for (std::size_t i = 0; i < n; ++i) clean[i] = to_image(test.images[i]);
  const auto clean_pred = predict(params, clean, config.threads);

  std::vector<Image> pgd_imgs(n), otsa_imgs(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    const Scorer scorer = classifier_scorer(params, test.images[i].label);
    AttackConfig pgd_cfg = config.pgd;
    pgd_cfg.random_start = false;
    pgd_cfg.seed = sub_seed(config.seed, {kEval, i, 1});
    OtsaConfig otsa_cfg = config.otsa;
    otsa_cfg.seed = sub_seed(config.seed, {kEval, i, 2});
    otsa_cfg.track_loss = false;
    try {
      pgd_imgs[i] = apply_perturbation(clean[i], pgd(clean[i], scorer, pgd_cfg));
      otsa_imgs[i] = apply_perturbation(clean[i], otsa_attack(clean[i], test.images[i].mask, scorer, otsa_cfg).perturbation);
    } catch (const std::exception& e) {
      throw PipelineError("test sample " + std::to_string(i) + ": " + e.what());
    }
  });
  const auto pgd_pred = predict(params, pgd_imgs, config.threads);
  const auto otsa_pred = predict(params, otsa_imgs, config.threads);

  MetricsReport r;
  r.n_clean = r.n_pgd = r.n_otsa = n;
  r.n_perturbed = 2 * n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = test.images[i].label;
    r.correct_clean += clean_pred[i] == y;
    r.correct_pgd += pgd_pred[i] == y;
    r.correct_otsa += otsa_pred[i] == y;
  }
  const double dn = static_cast<double>(n);
  r.ta = 100.0 * static_cast<double>(r.correct_clean) / dn;
  r.ra_pgd = 100.0 * static_cast<double>(r.correct_pgd) / dn;
  r.ra_otsa = 100.0 * static_cast<double>(r.correct_otsa) / dn;
  r.ra = 100.0 * static_cast<double>(r.correct_pgd + r.correct_otsa) / (2.0 * dn);
  r.aa = 100.0 * static_cast<double>(r.correct_clean + r.correct_pgd + r.correct_otsa) / (3.0 * dn);
  r.gap = r.ta - r.ra;
  r.seed = config.seed;
  r.check_consistency();
  return r;
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string report_text(const MetricsReport& r) {
  std::string s;
  auto kv = [&s](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  kv("ta", fmt_double(r.ta));
  kv("ra", fmt_double(r.ra));
  kv("aa", fmt_double(r.aa));
  kv("gap", fmt_double(r.gap));
  kv("ra_pgd", fmt_double(r.ra_pgd));
  kv("ra_otsa", fmt_double(r.ra_otsa));
  kv("n_clean", std::to_string(r.n_clean));
  kv("n_perturbed", std::to_string(r.n_perturbed));
  kv("seed", std::to_string(r.seed));
  kv("config_hash", r.config_hash);
  return s;
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["ta"] = r.ta;
  j["ra"] = r.ra;
  j["aa"] = r.aa;
  j["gap"] = r.gap;
  j["ra_pgd"] = r.ra_pgd;
  j["ra_otsa"] = r.ra_otsa;
  j["n_clean"] = r.n_clean;
  j["n_perturbed"] = r.n_perturbed;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  return j.dump(2) + "\n";
}

void write_report(const MetricsReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& json_path) {
  report.check_consistency();
  for (const auto& [path, body] : {std::pair{text_path, report_text(report)}, std::pair{json_path, report_json(report)}}) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw PipelineError("cannot write " + path.string());
    os << body;
  }
}

}  // namespace factual
