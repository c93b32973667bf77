#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "factual/grad_check.hpp"
#include "factual/losses.hpp"
#include "factual/selfcheck.hpp"

using namespace factual;

namespace {

struct Batch {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  Tensor tensor() const {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({rows.size(), rows[0].size()}, flat);
  }
};

Batch random_batch(std::uint64_t seed, std::size_t b, std::size_t d, std::size_t c) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Batch out;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> r(d);
    double s = 0;
    for (auto& v : r) {
      v = n(rng);
      s += v * v;
    }
    for (auto& v : r) v /= std::sqrt(s);
    out.rows.push_back(r);
    out.labels.push_back(rng() % c);
  }
  out.labels[1] = out.labels[0];
  return out;
}

}  // namespace

TEST(ContrastiveLoss, IdenticalPositivePairIsZero) {
  const std::vector<std::size_t> labels{0, 0};
  EXPECT_EQ(supervised_contrastive_loss(Tensor::from({2, 3}, {0, 1, 0, 0, 1, 0}), labels).item(), 0.0);
}

TEST(ContrastiveLoss, ThreeSampleClosedForm) {
  // Anchor and positive identical, negative orthogonal, tau 0.5: each anchor with a positive
  // contributes -log(e^2 / (e^2 + e^0)).
  const std::vector<std::size_t> labels{0, 0, 1};
  const double v = supervised_contrastive_loss(Tensor::from({3, 2}, {1, 0, 1, 0, 0, 1}), labels, 0.5).item();
  EXPECT_NEAR(v, std::log(1.0 + std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(v, 0.126928, 1e-6);
}

TEST(ContrastiveLoss, OracleMatchesClosedForm) {
  EXPECT_NEAR(brute_force_scl({{1, 0}, {1, 0}, {0, 1}}, {0, 0, 1}, 0.5), 0.126928, 1e-6);
}

TEST(ContrastiveLoss, MatchesBruteForceOnRandomBatches) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto b = random_batch(s, 2 + s % 15, 1 + s % 8, 1 + s % 4);
    for (double tau : {0.1, 0.5}) {
      EXPECT_NEAR(supervised_contrastive_loss(b.tensor(), b.labels, tau).item(), brute_force_scl(b.rows, b.labels, tau),
                  1e-8);
    }
  }
}

TEST(ContrastiveLoss, GradientMatchesFiniteDifferences) {
  const auto b = random_batch(4, 6, 5, 3);
  const double err = finite_difference_check(
      [&](const Tensor& x) { return supervised_contrastive_loss(l2_normalize(x), b.labels, 0.1); }, b.tensor());
  EXPECT_LT(err, 1e-4);
}

TEST(ContrastiveLoss, NoPositivesIsAnError) {
  const std::vector<std::size_t> labels{0, 1, 2};
  try {
    supervised_contrastive_loss(Tensor::from({3, 1}, {1, 1, -1}), labels);
    FAIL();
  } catch (const LossError& e) {
    EXPECT_STREQ(e.what(), "no positive pairs");
  }
}

TEST(ContrastiveLoss, RejectsBadTemperatureAndNonUnitRows) {
  const std::vector<std::size_t> labels{0, 0};
  const Tensor unit = Tensor::from({2, 1}, {1, 1});
  EXPECT_THROW(supervised_contrastive_loss(unit, labels, 0.0), LossError);
  EXPECT_THROW(supervised_contrastive_loss(unit, labels, -1.0), LossError);
  EXPECT_THROW(supervised_contrastive_loss(Tensor::from({2, 1}, {2, 1}), labels), LossError);
}

TEST(ContrastiveLoss, AnchorsWithoutPositivesAreDropped) {
  const auto b = random_batch(8, 5, 4, 2);
  auto labels = b.labels;
  labels = {0, 0, 1, 2, 3};
  EXPECT_NEAR(supervised_contrastive_loss(b.tensor(), labels, 0.2).item(), brute_force_scl(b.rows, labels, 0.2), 1e-10);
}

TEST(ContrastiveLoss, PermutationInvariant) {
  const auto b = random_batch(11, 12, 6, 3);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
  Batch p;
  for (auto i : perm) {
    p.rows.push_back(b.rows[i]);
    p.labels.push_back(b.labels[i]);
  }
  EXPECT_NEAR(supervised_contrastive_loss(b.tensor(), b.labels).item(),
              supervised_contrastive_loss(p.tensor(), p.labels).item(), 1e-12);
}

TEST(ContrastiveLoss, NonNegativeWhenNegativesExist) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    auto b = random_batch(100 + s, 8, 4, 2);
    b.labels = {0, 0, 0, 0, 1, 1, 1, 1};
    EXPECT_GE(supervised_contrastive_loss(b.tensor(), b.labels).item(), 0.0);
  }
}

TEST(ContrastiveLoss, DuplicateSampleFollowsOracle) {
  auto b = random_batch(21, 6, 4, 3);
  b.rows.push_back(b.rows[2]);
  b.labels.push_back(b.labels[2]);
  EXPECT_NEAR(supervised_contrastive_loss(b.tensor(), b.labels).item(), brute_force_scl(b.rows, b.labels, 0.1), 1e-9);
}

TEST(ContrastiveLoss, AnchorLossMatchesBatchTerm) {
  // For an anchor outside the reference set every reference is in the denominator.
  const auto b = random_batch(5, 6, 4, 2);
  const Tensor refs = gather_rows(b.tensor(), {1, 2, 3, 4, 5});
  const std::vector<std::size_t> ref_labels(b.labels.begin() + 1, b.labels.end());
  const double got = contrastive_anchor_loss(gather_rows(b.tensor(), {0}), b.labels[0], refs, ref_labels, 0.3).item();
  double denom = 0, term = 0;
  std::size_t pos = 0;
  for (std::size_t j = 1; j < 6; ++j) {
    double dot = 0;
    for (std::size_t k = 0; k < 4; ++k) dot += b.rows[0][k] * b.rows[j][k];
    denom += std::exp(dot / 0.3);
    if (b.labels[j] == b.labels[0]) {
      term += dot / 0.3;
      ++pos;
    }
  }
  EXPECT_NEAR(got, -(term / pos - std::log(denom)), 1e-12);
}

TEST(CrossEntropy, UniformLogits) {
  const std::vector<std::size_t> labels{2, 0};
  EXPECT_NEAR(cross_entropy_loss(Tensor::zeros({2, 4}), labels).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.386294, 1e-6);
}

TEST(CrossEntropy, SaturatedLogits) {
  const std::vector<std::size_t> labels{1};
  EXPECT_NEAR(cross_entropy_loss(Tensor::from({1, 3}, {0, 1000, 0}), labels).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + trial % 4, c = 2 + trial % 5;
    std::vector<double> v(b * c);
    for (auto& x : v) x = n(rng);
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = rng() % c;
    Tensor logits = Tensor::from({b, c}, v, true);
    backward(cross_entropy_loss(logits, labels));
    const auto g = *logits.grad();
    for (std::size_t i = 0; i < b; ++i) {
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, v[i * c + j]);
      for (std::size_t j = 0; j < c; ++j) z += std::exp(v[i * c + j] - mx);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(v[i * c + j] - mx) / z;
        EXPECT_NEAR(g[i * c + j], (p - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(b), 1e-10);
      }
    }
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<std::size_t> labels{3};
  EXPECT_THROW(cross_entropy_loss(Tensor::zeros({1, 3}), labels), LossError);
}
