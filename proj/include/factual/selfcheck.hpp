#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace factual {

struct CheckResult {
  std::string name;
  bool passed = false;
  // Worst observed value of the checked quantity and the bound it was held to.
  double worst = 0.0;
  double bound = 0.0;
  std::size_t trials = 0;
  std::size_t violations = 0;
  std::string detail;
};

// Central-difference gradient checks (step 1e-5) for every differentiable op, both losses and the
// model heads, each over `seeds` random draws with extents <= 8. One result per case.
std::vector<CheckResult> gradient_checks(std::size_t seeds, std::uint64_t base_seed);

// sign must refuse to pass gradients.
CheckResult sign_forward_only_check();

// Plain double loop over anchors and pairs; no autodiff, no log-sum-exp shift.
double brute_force_scl(const std::vector<std::vector<double>>& reps, const std::vector<std::size_t>& labels,
                       double tau);

// supervised_contrastive_loss vs brute_force_scl on random batches (B <= 16, D <= 8, C <= 4).
CheckResult scl_oracle_check(std::size_t batches, std::uint64_t seed);
// Two identical same-class rows must give exactly 0.
CheckResult scl_identical_pair_check();

// Budget and pixel-range checks on FGSM/PGD outputs and support checks on scatterer outputs
// against a small random network. `count` perturbations of each family.
CheckResult image_attack_budget_check(std::size_t count, std::uint64_t seed);
CheckResult scatterer_support_check(std::size_t count, std::uint64_t seed);
// PGD with one step, no random start and step = epsilon against FGSM, bitwise.
CheckResult pgd_fgsm_equivalence_check(std::size_t trials, std::uint64_t seed);
// Two-class linear softmax scorer: PGD delta vs epsilon * sign(w_other - w_label) per coordinate.
CheckResult linear_pgd_closed_form_check(std::size_t trials, std::uint64_t seed);

}  // namespace factual
