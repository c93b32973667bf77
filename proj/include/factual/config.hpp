#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "factual/data.hpp"
#include "factual/model.hpp"
#include "factual/pipeline.hpp"

namespace factual {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a run needs besides file paths. Text form: one `key = value` per line, `#` comments.
//
//   seed threads classes train_per_class test_per_class
//   image_size clutter looks target_low target_high
//   stem_stride channels (comma list) rep_dim proj_hidden proj_out input_mean input_std
//   standardize_input (true|false)
//   pretrain_epochs finetune_epochs st_epochs batch lr momentum weight_decay tau
//   epsilon pgd_steps pgd_step_size pgd_random_start
//   otsa_scatterers otsa_steps otsa_sigma otsa_max_amplitude otsa_amplitude_step otsa_position_step
//   regen (per_batch|per_epoch|once) pretrain_attack_loss (contrastive|classifier) attack_delay_epochs
//   attack_warmup_epochs
//   augment freeze_encoder clean_only_finetune (true|false)
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::size_t classes = 4;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  SceneConfig scene;
  ArchitectureConfig arch;
  TrainConfig train;

  // Sets one key from its text value; throws ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  EvalConfig eval_config() const;
  TrainConfig train_config() const;
};

// Parses config text; errors carry `source:line: field: reason`.
RunConfig parse_config(std::string_view text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

// Canonical `key = value` listing of every field, in a fixed order.
std::string resolved_text(const RunConfig& config);
// FNV-1a 64 over resolved_text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace factual
