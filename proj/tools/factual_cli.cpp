// factual: data generation, training, attack and evaluation front end.
//
//   factual gen-data  [--out DIR | --out FILE.fctd --split train|test] [--classes N] [--per-class N]
//   factual init      --out DIR
//   factual pretrain  --data TRAIN.fctd [--init CKPT] --out DIR
//   factual finetune  --data TRAIN.fctd --checkpoint CKPT [--freeze-encoder] --out DIR
//   factual train-st  --data TRAIN.fctd --out DIR
//   factual attack    --data SET.fctd --checkpoint CKPT --out DIR
//   factual evaluate  --data TEST.fctd --checkpoint CKPT --out DIR
//   factual selftest
//
// Every command also takes --config and the override flags below. Exit status: 0 success,
// 1 usage/config/input error, 2 internal invariant violation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "factual/config.hpp"
#include "factual/data.hpp"
#include "factual/model.hpp"
#include "factual/pipeline.hpp"
#include "factual/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace factual;

namespace {

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::optional<std::string> epochs;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string init;
  std::string split = "train";
};

// Registers the shared flags on one subcommand; each maps onto a config key.
void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  auto key = [&o, cmd](const char* flag, const char* name, const char* help) {
    cmd->add_option_function<std::string>(flag, [&o, name](const std::string& v) { o.overrides.emplace_back(name, v); },
                                          help);
  };
  key("--seed", "seed", "global seed");
  key("--threads", "threads", "worker cap (0 = all cores)");
  key("--epsilon", "epsilon", "PGD budget, e.g. 8/255");
  key("--pgd-steps", "pgd_steps", "PGD iterations");
  key("--otsa-scatterers", "otsa_scatterers", "scatterers per image");
  key("--otsa-steps", "otsa_steps", "scatterer attack iterations");
  key("--tau", "tau", "contrastive temperature");
  key("--batch", "batch", "originals per batch");
  key("--classes", "classes", "class count");
  key("--per-class", "train_per_class", "training images per class");
  key("--test-per-class", "test_per_class", "test images per class");
  cmd->add_option_function<std::string>("--epochs", [&o](const std::string& v) { o.epochs = v; },
                                        "epochs of this command's stage");
  cmd->add_flag_callback("--freeze-encoder", [&o] { o.overrides.emplace_back("freeze_encoder", "true"); },
                         "fine-tune the classifier only");
  cmd->add_option("--out", o.out, "output directory (gen-data also accepts a .fctd file)");
}

RunConfig resolve(const Options& o, const char* epochs_key) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& [k, v] : o.overrides) {
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("command line: ") + e.what());
    }
  }
  if (o.epochs) {
    if (!epochs_key) throw UserError("--epochs does not apply to this command");
    cfg.set(epochs_key, *o.epochs);
  }
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UserError(std::string(flag) + " is required");
}

fs::path existing_input(const std::string& path, const char* flag) {
  require(path, flag);
  if (!fs::is_regular_file(path)) throw UserError(std::string(flag) + ": no such file " + path);
  return path;
}

// Output directory staging: a fresh directory is built under a sibling name and renamed into place
// once every file is written; an existing directory receives files one atomic rename at a time.
class OutputDir {
 public:
  OutputDir(const fs::path& dir, std::vector<fs::path> inputs) : final_(dir), inputs_(std::move(inputs)) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw UserError("--out: " + dir.string() + " is not a directory");
    if (fs::exists(dir)) {
      stage_ = dir;
    } else {
      stage_ = dir;
      stage_ += ".partial";
      fs::remove_all(stage_);
      fs::create_directories(stage_);
      fresh_ = true;
    }
  }

  // Path to write `name` to; the file appears under its real name on commit().
  fs::path file(const std::string& name) {
    const fs::path target = final_ / name;
    for (const auto& in : inputs_) {
      if (fs::exists(target) && fs::equivalent(in, target)) {
        throw UserError("refusing to overwrite input file " + in.string());
      }
    }
    pending_.push_back(name);
    return stage_ / (name + ".tmp");
  }

  void commit() {
    for (const auto& name : pending_) fs::rename(stage_ / (name + ".tmp"), stage_ / name);
    if (fresh_) fs::rename(stage_, final_);
    pending_.clear();
  }

  const fs::path& path() const { return final_; }

 private:
  fs::path final_, stage_;
  std::vector<fs::path> inputs_;
  std::vector<std::string> pending_;
  bool fresh_ = false;
};

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << body)) throw std::runtime_error("cannot write " + path.string());
}

void echo_config(OutputDir& out, const RunConfig& cfg) {
  write_text(out.file("resolved_config.txt"), "# config_hash = " + config_hash(cfg) + "\n" + resolved_text(cfg));
}

void write_history(OutputDir& out, const std::string& name, const TrainResult& r) {
  std::string body;
  for (double v : r.loss_history) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    body += buf;
  }
  write_text(out.file(name), body);
}

Dataset read_dataset(const std::string& path) { return load_dataset(existing_input(path, "--data")); }

int gen_data(const Options& o) {
  const RunConfig cfg = resolve(o, nullptr);
  require(o.out, "--out");
  const fs::path out = o.out;
  auto make = [&](Split split) {
    const auto per_class = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
    return generate_dataset(cfg.classes, per_class * cfg.classes, cfg.seed, split, cfg.scene);
  };
  if (out.extension() == ".fctd") {
    if (o.split != "train" && o.split != "test") throw UserError("--split: expected train or test");
    const Split split = o.split == "train" ? Split::train : Split::test;
    const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
    fs::create_directories(parent);
    OutputDir dir(parent, {});
    write_text(dir.file(out.stem().string() + ".config.txt"), "# config_hash = " + config_hash(cfg) + "\n" + resolved_text(cfg));
    save_dataset(make(split), dir.file(out.filename().string()));
    dir.commit();
  } else {
    OutputDir dir(out, {});
    echo_config(dir, cfg);
    save_dataset(make(Split::train), dir.file("train.fctd"));
    save_dataset(make(Split::test), dir.file("test.fctd"));
    dir.commit();
  }
  spdlog::info("wrote {}", out.string());
  return 0;
}

int init_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, nullptr);
  require(o.out, "--out");
  OutputDir out(o.out, {});
  echo_config(out, cfg);
  save_checkpoint(init_params(cfg.arch, cfg.seed), out.file("init.fctc"));
  out.commit();
  return 0;
}

int pretrain_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, "pretrain_epochs");
  require(o.out, "--out");
  const Dataset train = read_dataset(o.data);
  std::vector<fs::path> inputs{o.data};
  ModelParams init;
  if (!o.init.empty()) {
    inputs.push_back(existing_input(o.init, "--init"));
    init = load_checkpoint(o.init);
  } else {
    init = init_params(cfg.arch, cfg.seed);
  }
  OutputDir out(o.out, inputs);
  echo_config(out, cfg);
  const auto result = pretrain(train, init, cfg.train_config());
  save_checkpoint(result.params, out.file("pretrained.fctc"));
  write_history(out, "pretrain_loss.txt", result);
  out.commit();
  spdlog::info("pre-training done: {} steps, final loss {:.6f}", result.optimizer_steps, result.loss_history.back());
  return 0;
}

int finetune_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, "finetune_epochs");
  require(o.out, "--out");
  const Dataset train = read_dataset(o.data);
  const ModelParams init = load_checkpoint(existing_input(o.checkpoint, "--checkpoint"));
  OutputDir out(o.out, {o.data, o.checkpoint});
  echo_config(out, cfg);
  const auto result = finetune(train, init, cfg.train_config());
  save_checkpoint(result.params, out.file("finetuned.fctc"));
  write_history(out, "finetune_loss.txt", result);
  out.commit();
  spdlog::info("fine-tuning done: {} steps, final loss {:.6f}", result.optimizer_steps, result.loss_history.back());
  return 0;
}

int train_st_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, "st_epochs");
  require(o.out, "--out");
  const Dataset train = read_dataset(o.data);
  OutputDir out(o.out, {o.data});
  echo_config(out, cfg);
  const auto result = run_standard_training(train, init_params(cfg.arch, cfg.seed), cfg.train_config());
  save_checkpoint(result.params, out.file("standard.fctc"));
  write_history(out, "standard_loss.txt", result);
  out.commit();
  spdlog::info("standard training done: final loss {:.6f}", result.loss_history.back());
  return 0;
}

int attack_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, nullptr);
  require(o.out, "--out");
  const Dataset data = read_dataset(o.data);
  const ModelParams params = load_checkpoint(existing_input(o.checkpoint, "--checkpoint"));
  OutputDir out(o.out, {o.data, o.checkpoint});
  echo_config(out, cfg);
  const auto triples = build_triples(data, params, cfg.train.pgd, cfg.train.otsa, cfg.seed, cfg.train.augment, cfg.threads);
  save_triples(to_views(triples, data.class_count), out.file("triples.fctd"));
  out.commit();
  spdlog::info("wrote {} triples", triples.size());
  return 0;
}

int evaluate_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, nullptr);
  require(o.out, "--out");
  const Dataset test = read_dataset(o.data);
  if (test.images.empty()) throw UserError("--data: test set is empty");
  const ModelParams params = load_checkpoint(existing_input(o.checkpoint, "--checkpoint"));
  OutputDir out(o.out, {o.data, o.checkpoint});
  echo_config(out, cfg);
  auto report = evaluate(params, test, cfg.eval_config());
  report.config_hash = config_hash(cfg);
  write_report(report, out.file("report.txt"), out.file("report.json"));
  out.commit();
  std::printf("%s", report_text(report).c_str());
  return 0;
}

int selftest_cmd(const Options& o) {
  const RunConfig cfg = resolve(o, nullptr);
  std::vector<CheckResult> results = gradient_checks(10, cfg.seed);
  results.push_back(sign_forward_only_check());
  results.push_back(scl_oracle_check(100, cfg.seed));
  results.push_back(scl_identical_pair_check());
  results.push_back(image_attack_budget_check(1000, cfg.seed));
  results.push_back(scatterer_support_check(1000, cfg.seed));
  results.push_back(pgd_fgsm_equivalence_check(100, cfg.seed));
  results.push_back(linear_pgd_closed_form_check(100, cfg.seed));
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-52s worst %.3g (bound %.3g, %zu/%zu violations)\n", r.passed ? "ok  " : "FAIL", r.name.c_str(),
                r.worst, r.bound, r.violations, r.trials);
    failed += !r.passed;
  }
  std::printf("%zu of %zu checks failed\n", failed, results.size());
  return failed == 0 ? 0 : 2;
}

void set_log_level() {
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("FACTUAL_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
    else spdlog::warn("FACTUAL_LOG: unknown level '{}'", env);
  }
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"FACTUAL adversarial contrastive training on synthetic SAR-like scenes"};
  app.require_subcommand(1);
  Options o;
  using Handler = int (*)(const Options&);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands{
      {"gen-data", "synthesize train/test splits", gen_data},
      {"init", "write a freshly initialized checkpoint", init_cmd},
      {"pretrain", "supervised adversarial contrastive pre-training", pretrain_cmd},
      {"finetune", "adversarial fine-tuning of encoder and classifier", finetune_cmd},
      {"train-st", "standard training baseline on clean images", train_st_cmd},
      {"attack", "emit the (clean, object, image) perturbed dataset", attack_cmd},
      {"evaluate", "TA / RA / AA report", evaluate_cmd},
      {"selftest", "gradient, oracle and attack-constraint checks", selftest_cmd},
  };
  std::vector<std::pair<CLI::App*, Handler>> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    const std::string n = name;
    if (n != "gen-data" && n != "selftest") cmd->add_option("--data", o.data, "input dataset file");
    if (n == "finetune" || n == "attack" || n == "evaluate") cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    if (n == "pretrain") cmd->add_option("--init", o.init, "start from this checkpoint instead of a fresh init");
    if (n == "gen-data") cmd->add_option("--split", o.split, "split written when --out names a .fctd file");
    subs.emplace_back(cmd, fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), app.help().c_str());
    return 1;
  }

  try {
    for (const auto& [cmd, fn] : subs) {
      if (cmd->parsed()) return fn(o);
    }
    return 1;
  } catch (const UserError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 1;
  } catch (const DataError& e) {
    spdlog::error("dataset: {}", e.what());
    return 1;
  } catch (const CheckpointError& e) {
    spdlog::error("checkpoint: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 2;
  }
}
