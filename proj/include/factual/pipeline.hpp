#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "factual/attacks.hpp"
#include "factual/data.hpp"
#include "factual/model.hpp"
#include "factual/optim.hpp"

namespace factual {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RegenPolicy { per_batch, per_epoch, once };

struct TrainConfig {
  std::size_t pretrain_epochs = 10;
  std::size_t finetune_epochs = 5;
  std::size_t st_epochs = 20;
  // Originals per batch; FACTUAL batches hold three views of each.
  std::size_t batch = 16;
  SgdConfig sgd;
  double tau = 0.1;
  AttackConfig pgd;
  OtsaConfig otsa;
  RegenPolicy regen = RegenPolicy::per_batch;
  // Pre-training attack budgets (epsilon, step size, scatterer amplitude) stay at 0 for
  // attack_delay_epochs, then ramp linearly to their configured values over attack_warmup_epochs.
  double attack_delay_epochs = 0.0;
  double attack_warmup_epochs = 0.0;
  LossMode pretrain_attack_loss = LossMode::contrastive;
  bool augment = true;
  bool freeze_encoder = false;
  bool clean_only_finetune = false;
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  void validate() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_history;
  std::size_t optimizer_steps = 0;
};

// One training batch: the views of each selected original, in order (clean, object, image).
struct ViewBatch {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<ViewTag> tags;
  std::vector<std::size_t> origins;
};

// Invoked with every batch right before its optimizer step.
using BatchObserver = std::function<void(const ViewBatch&)>;

Image to_image(const LabeledImage& image);
Tensor stack_images(const std::vector<Image>& images, std::size_t begin, std::size_t end);

Scorer classifier_scorer(const ModelParams& params, std::size_t label);
Scorer contrastive_scorer(const ModelParams& params, std::size_t label, const Tensor& refs,
                          std::vector<std::size_t> ref_labels, double tau);

// Supervised contrastive pre-training of encoder + projector on (x, z_obj, z_img) batches.
TrainResult pretrain(const Dataset& dataset, const ModelParams& init, const TrainConfig& config,
                     const BatchObserver& observer = {});

// Cross-entropy training of encoder + classifier (classifier only with freeze_encoder) on
// three-view batches, or clean views only with clean_only_finetune. The projector is never read.
TrainResult finetune(const Dataset& dataset, const ModelParams& pretrained, const TrainConfig& config,
                     const BatchObserver& observer = {});

// Standard training baseline: cross-entropy on clean images only.
TrainResult run_standard_training(const Dataset& dataset, const ModelParams& init, const TrainConfig& config);

struct AugmentedTriple {
  LabeledImage clean;
  LabeledImage view1;
  LabeledImage view2;
  LabeledImage z_img;
  LabeledImage z_obj;
  Perturbation delta_obj;
  AttackConfig img_attack;
  OtsaConfig obj_attack;
};

// Draws two augmented views of every image, perturbs view1 with PGD and view2 with the scatterer
// attack against the classifier, and pairs them with the untouched original.
std::vector<AugmentedTriple> build_triples(const Dataset& dataset, const ModelParams& params,
                                           const AttackConfig& img_attack, const OtsaConfig& obj_attack,
                                           std::uint64_t seed, bool augment = true, std::size_t threads = 0);
TripleViews to_views(const std::vector<AugmentedTriple>& triples, std::size_t class_count);

struct MetricsReport {
  double ta = 0.0;
  double ra = 0.0;
  double aa = 0.0;
  double gap = 0.0;
  double ra_pgd = 0.0;
  double ra_otsa = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_pgd = 0;
  std::size_t n_otsa = 0;
  std::size_t n_perturbed = 0;
  std::size_t correct_clean = 0;
  std::size_t correct_pgd = 0;
  std::size_t correct_otsa = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  // Throws PipelineError when AA is not the count-weighted bucket mean or gap != TA - RA (1e-9).
  void check_consistency() const;
};

struct AccuracyBucket {
  double accuracy = 0.0;  // percent
  double count = 0.0;
};
double weighted_accuracy(const std::vector<AccuracyBucket>& buckets);

struct EvalConfig {
  AttackConfig pgd;
  OtsaConfig otsa;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

// TA on clean images; RA over one PGD and one scatterer-attack sample per test image, both
// generated against `params` without random starts; AA over all of them.
MetricsReport evaluate(const ModelParams& params, const Dataset& test, const EvalConfig& config);

std::vector<std::size_t> predict(const ModelParams& params, const std::vector<Image>& images, std::size_t threads);

std::string report_text(const MetricsReport& report);
std::string report_json(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& json_path);

}  // namespace factual
