#include "factual/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace factual {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  // "a/b" is accepted so budgets like 8/255 can be written directly.
  const auto slash = v.find('/');
  if (slash != std::string_view::npos) {
    const double num = parse_real(key, trim(v.substr(0, slash)));
    const double den = parse_real(key, trim(v.substr(slash + 1)));
    if (den == 0.0) throw ConfigError(std::string(key) + ": division by zero");
    return num / den;
  }
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_size(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": empty list");
  return out;
}

std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* boolean(bool v) { return v ? "true" : "false"; }

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto v = trim(value);
  if (key == "seed") seed = parse_u64(key, v);
  else if (key == "threads") threads = parse_size(key, v);
  else if (key == "classes") classes = arch.classes = parse_size(key, v);
  else if (key == "train_per_class") train_per_class = parse_size(key, v);
  else if (key == "test_per_class") test_per_class = parse_size(key, v);
  else if (key == "image_size") scene.size = arch.input_size = parse_size(key, v);
  else if (key == "clutter") scene.clutter = parse_real(key, v);
  else if (key == "looks") scene.looks = parse_real(key, v);
  else if (key == "target_low") scene.target_low = parse_real(key, v);
  else if (key == "target_high") scene.target_high = parse_real(key, v);
  else if (key == "stem_stride") arch.stem_stride = parse_size(key, v);
  else if (key == "channels") arch.channels = parse_list(key, v);
  else if (key == "rep_dim") arch.rep_dim = parse_size(key, v);
  else if (key == "proj_hidden") arch.proj_hidden = parse_size(key, v);
  else if (key == "proj_out") arch.proj_out = parse_size(key, v);
  else if (key == "input_mean") arch.input_mean = parse_real(key, v);
  else if (key == "input_std") arch.input_std = parse_real(key, v);
  else if (key == "standardize_input") arch.standardize_input = parse_bool(key, v);
  else if (key == "pretrain_epochs") train.pretrain_epochs = parse_size(key, v);
  else if (key == "finetune_epochs") train.finetune_epochs = parse_size(key, v);
  else if (key == "st_epochs") train.st_epochs = parse_size(key, v);
  else if (key == "batch") train.batch = parse_size(key, v);
  else if (key == "lr") train.sgd.lr = parse_real(key, v);
  else if (key == "momentum") train.sgd.momentum = parse_real(key, v);
  else if (key == "weight_decay") train.sgd.weight_decay = parse_real(key, v);
  else if (key == "tau") train.tau = parse_real(key, v);
  else if (key == "epsilon") train.pgd.epsilon = parse_real(key, v);
  else if (key == "pgd_steps") train.pgd.steps = parse_size(key, v);
  else if (key == "pgd_step_size") train.pgd.step_size = parse_real(key, v);
  else if (key == "pgd_random_start") train.pgd.random_start = parse_bool(key, v);
  else if (key == "otsa_scatterers") train.otsa.scatterers = parse_size(key, v);
  else if (key == "otsa_steps") train.otsa.steps = parse_size(key, v);
  else if (key == "otsa_sigma") train.otsa.sigma = parse_real(key, v);
  else if (key == "otsa_max_amplitude") train.otsa.max_amplitude = parse_real(key, v);
  else if (key == "otsa_amplitude_step") train.otsa.amplitude_step = parse_real(key, v);
  else if (key == "otsa_position_step") train.otsa.position_step = parse_real(key, v);
  else if (key == "regen") {
    if (v == "per_batch") train.regen = RegenPolicy::per_batch;
    else if (v == "per_epoch") train.regen = RegenPolicy::per_epoch;
    else if (v == "once") train.regen = RegenPolicy::once;
    else throw ConfigError("regen: expected per_batch, per_epoch or once, got '" + std::string(v) + "'");
  } else if (key == "pretrain_attack_loss") {
    if (v == "contrastive") train.pretrain_attack_loss = LossMode::contrastive;
    else if (v == "classifier") train.pretrain_attack_loss = LossMode::classifier;
    else throw ConfigError("pretrain_attack_loss: expected contrastive or classifier, got '" + std::string(v) + "'");
  } else if (key == "attack_delay_epochs") train.attack_delay_epochs = parse_real(key, v);
  else if (key == "attack_warmup_epochs") train.attack_warmup_epochs = parse_real(key, v);
  else if (key == "augment") train.augment = parse_bool(key, v);
  else if (key == "freeze_encoder") train.freeze_encoder = parse_bool(key, v);
  else if (key == "clean_only_finetune") train.clean_only_finetune = parse_bool(key, v);
  else throw ConfigError(std::string(key) + ": unknown key");
}

void RunConfig::validate() const {
  try {
    if (classes < 2) throw ConfigError("classes: need at least 2");
    if (arch.classes != classes) throw ConfigError("classes: architecture disagrees");
    if (train_per_class < 1 || test_per_class < 1) throw ConfigError("per-class counts must be at least 1");
    if (scene.size != arch.input_size) throw ConfigError("image_size: scene and architecture disagree");
    arch.validate();
    train_config().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threads = threads;
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.pgd = train.pgd;
  e.otsa = train.otsa;
  e.seed = seed;
  e.threads = threads;
  return e;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string resolved_text(const RunConfig& c) {
  std::string s;
  auto kv = [&s](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  std::string channels;
  for (std::size_t i = 0; i < c.arch.channels.size(); ++i) {
    channels += (i ? "," : "") + std::to_string(c.arch.channels[i]);
  }
  const auto& t = c.train;
  kv("seed", std::to_string(c.seed));
  kv("threads", std::to_string(c.threads));
  kv("classes", std::to_string(c.classes));
  kv("train_per_class", std::to_string(c.train_per_class));
  kv("test_per_class", std::to_string(c.test_per_class));
  kv("image_size", std::to_string(c.scene.size));
  kv("clutter", real(c.scene.clutter));
  kv("looks", real(c.scene.looks));
  kv("target_low", real(c.scene.target_low));
  kv("target_high", real(c.scene.target_high));
  kv("stem_stride", std::to_string(c.arch.stem_stride));
  kv("channels", channels);
  kv("rep_dim", std::to_string(c.arch.rep_dim));
  kv("proj_hidden", std::to_string(c.arch.proj_hidden));
  kv("proj_out", std::to_string(c.arch.proj_out));
  kv("input_mean", real(c.arch.input_mean));
  kv("input_std", real(c.arch.input_std));
  kv("standardize_input", boolean(c.arch.standardize_input));
  kv("pretrain_epochs", std::to_string(t.pretrain_epochs));
  kv("finetune_epochs", std::to_string(t.finetune_epochs));
  kv("st_epochs", std::to_string(t.st_epochs));
  kv("batch", std::to_string(t.batch));
  kv("lr", real(t.sgd.lr));
  kv("momentum", real(t.sgd.momentum));
  kv("weight_decay", real(t.sgd.weight_decay));
  kv("tau", real(t.tau));
  kv("epsilon", real(t.pgd.epsilon));
  kv("pgd_steps", std::to_string(t.pgd.steps));
  kv("pgd_step_size", real(t.pgd.step_size));
  kv("pgd_random_start", boolean(t.pgd.random_start));
  kv("otsa_scatterers", std::to_string(t.otsa.scatterers));
  kv("otsa_steps", std::to_string(t.otsa.steps));
  kv("otsa_sigma", real(t.otsa.sigma));
  kv("otsa_max_amplitude", real(t.otsa.max_amplitude));
  kv("otsa_amplitude_step", real(t.otsa.amplitude_step));
  kv("otsa_position_step", real(t.otsa.position_step));
  kv("regen", t.regen == RegenPolicy::per_batch ? "per_batch" : t.regen == RegenPolicy::per_epoch ? "per_epoch" : "once");
  kv("pretrain_attack_loss", t.pretrain_attack_loss == LossMode::contrastive ? "contrastive" : "classifier");
  kv("attack_delay_epochs", real(t.attack_delay_epochs));
  kv("attack_warmup_epochs", real(t.attack_warmup_epochs));
  kv("augment", boolean(t.augment));
  kv("freeze_encoder", boolean(t.freeze_encoder));
  kv("clean_only_finetune", boolean(t.clean_only_finetune));
  return s;
}

std::string config_hash(const RunConfig& config) {
  // Worker count never changes results, so it stays out of the hash.
  RunConfig c = config;
  c.threads = 0;
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : resolved_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace factual
