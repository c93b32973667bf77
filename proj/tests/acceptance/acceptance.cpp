// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "factual/config.hpp"
#include "factual/data.hpp"
#include "factual/model.hpp"
#include "factual/pipeline.hpp"
#include "factual/selfcheck.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace factual;

namespace {

// Pinned tolerances.
constexpr std::size_t kGradSeeds = 10;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kSclBatches = 100;
constexpr std::size_t kPerturbations = 1000;
constexpr double kStMinTa = 90.0;
constexpr double kStMinDrop = 20.0;
constexpr double kFactualMinTa = 90.0;
constexpr double kMinRaGain = 20.0;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kSeedsRequired = 4;
constexpr double kDirectionalSeconds = 15.0 * 60.0;
constexpr double kIdentityTol = 1e-9;
constexpr double kReferenceAaTol = 0.15;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void verdict(int id, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  failures += !ok;
}

void detail(const CheckResult& r) {
  std::printf("    %-4s %-52s worst %.3g  bound %.3g  violations %zu/%zu\n", r.passed ? "ok" : "bad", r.name.c_str(),
              r.worst, r.bound, r.violations, r.trials);
}

bool all_passed(const std::vector<CheckResult>& rs) {
  bool ok = true;
  for (const auto& r : rs) {
    detail(r);
    ok = ok && r.passed;
  }
  return ok;
}

std::string bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<MetricsReport> emitted;

void criterion_gradients() {
  const auto t0 = Clock::now();
  auto rs = gradient_checks(kGradSeeds, 20240601);
  rs.push_back(sign_forward_only_check());
  const double secs = since(t0);
  const bool ok = all_passed(rs) && secs < kGradSeconds;
  char buf[160];
  std::snprintf(buf, sizeof buf, "finite-difference checks on %zu ops/losses x %zu seeds, max rel err < 1e-4, %.1fs",
                rs.size() - 1, kGradSeeds, secs);
  verdict(1, ok, buf);
}

void criterion_scl_oracle() {
  const std::vector<CheckResult> rs{scl_oracle_check(kSclBatches, 977), scl_identical_pair_check()};
  verdict(2, all_passed(rs), "contrastive loss matches brute-force oracle within 1e-8; identical pair gives 0");
}

void criterion_attack_constraints() {
  const std::vector<CheckResult> rs{image_attack_budget_check(kPerturbations, 31),
                                    scatterer_support_check(kPerturbations, 32),
                                    pgd_fgsm_equivalence_check(200, 33)};
  verdict(3, all_passed(rs), "budget, pixel range and mask support hold on every perturbation; PGD(1) == FGSM");
}

void criterion_closed_form() {
  const std::vector<CheckResult> rs{linear_pgd_closed_form_check(200, 41)};
  verdict(4, all_passed(rs), "PGD on a linear softmax scorer is eps * sign(w difference) per coordinate");
}

RunConfig desk_config() {
  RunConfig cfg = load_config(fs::path(FACTUAL_SOURCE_DIR) / "configs" / "desk.cfg");
  cfg.threads = 0;
  return cfg;
}

void criterion_directional() {
  const auto t0 = Clock::now();
  std::size_t good = 0;
  bool setup_ok = true;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    RunConfig cfg = desk_config();
    cfg.seed = seed;
    const bool protocol = cfg.classes == 4 && cfg.scene.size == 64 && cfg.train_per_class == 200 &&
                          cfg.test_per_class == 50 && std::abs(cfg.train.pgd.epsilon - 8.0 / 255.0) < 1e-15 &&
                          cfg.train.pgd.steps == 7 && cfg.train.otsa.scatterers == 3 && cfg.train.otsa.steps == 10;
    setup_ok = setup_ok && protocol;
    const Dataset train = generate_dataset(cfg.classes, cfg.classes * cfg.train_per_class, seed, Split::train, cfg.scene);
    const Dataset test = generate_dataset(cfg.classes, cfg.classes * cfg.test_per_class, seed, Split::test, cfg.scene);
    const TrainConfig tc = cfg.train_config();
    const ModelParams init = init_params(cfg.arch, seed);

    const auto st = run_standard_training(train, init, tc);
    auto st_report = evaluate(st.params, test, cfg.eval_config());
    st_report.config_hash = config_hash(cfg);
    const auto pre = pretrain(train, init, tc);
    const auto ft = finetune(train, pre.params, tc);
    auto fa_report = evaluate(ft.params, test, cfg.eval_config());
    fa_report.config_hash = config_hash(cfg);
    emitted.push_back(st_report);
    emitted.push_back(fa_report);

    const bool a = st_report.ta >= kStMinTa && st_report.ra <= st_report.ta - kStMinDrop;
    const bool b = fa_report.ta >= kFactualMinTa && fa_report.ra >= st_report.ra + kMinRaGain && fa_report.gap < st_report.gap;
    good += a && b;
    std::printf("    seed %llu  ST  TA %5.1f RA %5.1f (pgd %5.1f otsa %5.1f) gap %5.1f  | FACTUAL TA %5.1f RA %5.1f "
                "(pgd %5.1f otsa %5.1f) gap %5.1f  | %s  [%.0fs]\n",
                static_cast<unsigned long long>(seed), st_report.ta, st_report.ra, st_report.ra_pgd, st_report.ra_otsa,
                st_report.gap, fa_report.ta, fa_report.ra, fa_report.ra_pgd, fa_report.ra_otsa, fa_report.gap,
                a && b ? "holds" : (a ? "(b) fails" : "(a) fails"), since(t0));
    std::fflush(stdout);
  }
  const double secs = since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf, "ST/FACTUAL direction holds on %zu of %zu seeds (need %zu), %.0fs of %.0fs budget",
                good, kSeeds, kSeedsRequired, secs, kDirectionalSeconds);
  verdict(5, setup_ok && good >= kSeedsRequired && secs <= kDirectionalSeconds, buf);
}

void criterion_metrics(const fs::path& dir) {
  bool ok = true;
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    const auto& r = emitted[i];
    const fs::path txt = dir / ("report" + std::to_string(i) + ".txt");
    const fs::path js = dir / ("report" + std::to_string(i) + ".json");
    try {
      write_report(r, txt, js);
    } catch (const std::exception& e) {
      std::printf("    report %zu rejected: %s\n", i, e.what());
      ok = false;
      continue;
    }
    std::ifstream is(js);
    const auto j = nlohmann::json::parse(is);
    const double ta = j["ta"], ra = j["ra"], aa = j["aa"], gap = j["gap"], rp = j["ra_pgd"], ro = j["ra_otsa"];
    const double nc = j["n_clean"], np = j["n_perturbed"];
    const double aa_want = (ta * nc + rp * (np / 2) + ro * (np / 2)) / (nc + np);
    const double ra_want = (rp + ro) / 2.0;
    if (std::abs(aa - aa_want) > kIdentityTol || std::abs(gap - (ta - ra)) > kIdentityTol ||
        std::abs(ra - ra_want) > kIdentityTol || j["config_hash"].get<std::string>().size() != 16) {
      std::printf("    report %zu breaks an identity\n", i);
      ok = false;
    }
  }
  const double reference_aa = weighted_accuracy({{99.7, 1.0}, {94.4, 2.0}});
  const double example_aa = weighted_accuracy({{99.0, 100.0}, {90.0, 200.0}});
  std::printf("    %zu reports checked; reference row (TA 99.7, RA 94.4; 1:2) -> AA %.4f vs reported 96.1; "
              "(100 @ 99, 200 @ 90) -> %.12g\n",
              emitted.size(), reference_aa, example_aa);
  ok = ok && !emitted.empty() && std::abs(reference_aa - 96.1) <= kReferenceAaTol && std::abs(example_aa - 93.0) < 1e-12;
  verdict(6, ok, "AA weighted-mean and gap identities hold on every emitted report; reference AA 96.1 reproduced");
}

void criterion_determinism(const fs::path& dir) {
  bool ok = true;
  auto expect = [&ok](bool cond, const char* what) {
    if (!cond) std::printf("    mismatch: %s\n", what);
    ok = ok && cond;
  };

  SceneConfig scene;
  const Dataset d1 = generate_dataset(4, 40, 11, Split::train, scene);
  const Dataset d2 = generate_dataset(4, 40, 11, Split::train, scene);
  save_dataset(d1, dir / "d1.fctd");
  save_dataset(d2, dir / "d2.fctd");
  expect(bytes(dir / "d1.fctd") == bytes(dir / "d2.fctd"), "dataset files from identical seeds");
  const Dataset back = load_dataset(dir / "d1.fctd");
  expect(back.images == d1.images && back.class_count == d1.class_count && back.split == d1.split,
         "dataset round trip");
  save_dataset(back, dir / "d3.fctd");
  expect(bytes(dir / "d3.fctd") == bytes(dir / "d1.fctd"), "dataset re-save bytes");

  RunConfig cfg = desk_config();
  cfg.seed = 11;
  cfg.train.pretrain_epochs = 2;
  cfg.train.finetune_epochs = 1;
  cfg.train.st_epochs = 1;
  cfg.train.batch = 8;
  cfg.train.attack_delay_epochs = 0.5;
  cfg.train.attack_warmup_epochs = 1.0;
  const Dataset small_test = generate_dataset(4, 12, 11, Split::test, scene);
  auto run = [&](std::size_t threads, const std::string& tag) {
    RunConfig c = cfg;
    c.threads = threads;
    const auto tc = c.train_config();
    const auto init = init_params(c.arch, c.seed);
    const auto ft = finetune(d1, pretrain(d1, init, tc).params, tc);
    const auto st = run_standard_training(d1, init, tc);
    save_checkpoint(ft.params, dir / (tag + ".fctc"));
    save_checkpoint(st.params, dir / (tag + "_st.fctc"));
    auto rep = evaluate(ft.params, small_test, c.eval_config());
    rep.config_hash = config_hash(c);
    emitted.push_back(rep);
    write_report(rep, dir / (tag + ".txt"), dir / (tag + ".json"));
    const auto triples = build_triples(small_test, ft.params, c.train.pgd, c.train.otsa, c.seed, true, threads);
    save_triples(to_views(triples, small_test.class_count), dir / (tag + "_triples.fctd"));
    return ft.params;
  };
  const ModelParams p1 = run(1, "r1");
  run(1, "r2");
  run(3, "r3");
  for (const char* ext : {".fctc", "_st.fctc", ".txt", ".json", "_triples.fctd"}) {
    const std::string a = bytes(dir / (std::string("r1") + ext));
    expect(!a.empty() && a == bytes(dir / (std::string("r2") + ext)), "repeat run output");
    expect(a == bytes(dir / (std::string("r3") + ext)), "output under a different worker count");
  }
  const ModelParams loaded = load_checkpoint(dir / "r1.fctc");
  expect(params_equal(loaded, p1) && loaded.arch() == p1.arch(), "checkpoint round trip");
  save_checkpoint(loaded, dir / "r4.fctc");
  expect(bytes(dir / "r4.fctc") == bytes(dir / "r1.fctc"), "checkpoint re-save bytes");
  save_triples(load_triples(dir / "r1_triples.fctd"), dir / "r5_triples.fctd");
  expect(bytes(dir / "r5_triples.fctd") == bytes(dir / "r1_triples.fctd"), "triple file round trip");
  verdict(7, ok, "identical config and seed give bit-identical datasets, checkpoints and reports; files round-trip");
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / ("factual_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const std::vector<std::pair<int, std::function<void()>>> steps{
      {1, criterion_gradients},
      {2, criterion_scl_oracle},
      {3, criterion_attack_constraints},
      {4, criterion_closed_form},
      {5, criterion_directional},
      {7, [&] { criterion_determinism(dir); }},
      {6, [&] { criterion_metrics(dir); }},
  };
  for (const auto& [id, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      verdict(id, false, std::string("threw: ") + e.what());
    }
  }
  fs::remove_all(dir);
  std::printf("%d criteria failed, %.0fs total\n", failures, since(t0));
  return failures == 0 ? 0 : 1;
}
