#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "factual/grad_check.hpp"
#include "factual/losses.hpp"
#include "factual/model.hpp"

using namespace factual;
namespace fs = std::filesystem;

namespace {

ArchitectureConfig small_arch() {
  ArchitectureConfig a;
  a.input_size = 16;
  a.channels = {3, 4, 5};
  a.rep_dim = 8;
  a.proj_hidden = 6;
  a.proj_out = 4;
  a.classes = 3;
  return a;
}

Tensor images(std::size_t b, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(b * side * side);
  for (auto& x : v) x = u(rng);
  return Tensor::from({b, 1, side, side}, v);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto c = t.shape()[1];
  return {t.data().begin() + r * c, t.data().begin() + (r + 1) * c};
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("factual_model_" + name); }

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << s;
}

}  // namespace

TEST(Model, InitIsDeterministic) {
  EXPECT_TRUE(params_equal(init_params(small_arch(), 7), init_params(small_arch(), 7)));
  EXPECT_FALSE(params_equal(init_params(small_arch(), 7), init_params(small_arch(), 8)));
}

TEST(Model, InitWithinKaimingBound) {
  ModelParams p = init_params(ArchitectureConfig{}, 3);
  for (const auto& np : p.named()) {
    const auto& s = np.tensor->shape();
    const auto v = np.tensor->data();
    if (s.size() == 1) {
      for (double x : v) EXPECT_EQ(x, 0.0) << np.name;
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double widest = 0;
    for (double x : v) widest = std::max(widest, std::abs(x));
    EXPECT_LE(widest, bound) << np.name;
    EXPECT_GT(widest, 0.5 * bound) << np.name;
  }
}

TEST(Model, DefaultShapes) {
  const ArchitectureConfig a;
  EXPECT_EQ(a.channels, (std::vector<std::size_t>{16, 32, 64}));
  EXPECT_EQ(a.rep_dim, 128u);
  EXPECT_EQ(a.proj_hidden, 64u);
  EXPECT_EQ(a.proj_out, 32u);
  const auto p = init_params(a, 1);
  const Tensor reps = encode(p, images(5, 64, 1));
  EXPECT_EQ(reps.shape(), (Shape{5, 128}));
  EXPECT_EQ(project(p, reps).shape(), (Shape{5, 32}));
  EXPECT_EQ(classify(p, reps).shape(), (Shape{5, 4}));
}

TEST(Model, IdenticalImagesGiveIdenticalRows) {
  const auto p = init_params(small_arch(), 2);
  const Tensor x = images(1, 16, 4);
  std::vector<double> two(x.data().begin(), x.data().end());
  two.insert(two.end(), x.data().begin(), x.data().end());
  const Tensor reps = encode(p, Tensor::from({2, 1, 16, 16}, two));
  EXPECT_EQ(row(reps, 0), row(reps, 1));
}

TEST(Model, EncodeRejectsWrongShape) {
  const auto p = init_params(small_arch(), 2);
  EXPECT_THROW(encode(p, images(1, 17, 0)), TensorError);
}

TEST(Model, InputGradientMatchesFiniteDifferences) {
  for (bool standardize : {false, true}) {
    auto a = small_arch();
    a.standardize_input = standardize;
    const auto p = init_params(a, 5);
    const double err = finite_difference_check(
        [&](const Tensor& x) { return mean(mul(encode(p, x), encode(p, x))); }, images(2, 16, 6));
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Model, FixedStandardizationIsAffine) {
  auto a = small_arch();
  const auto base = init_params(a, 9);
  a.input_mean = 0.25;
  a.input_std = 0.5;
  const auto shifted = init_params(a, 9);
  const Tensor x = images(1, 16, 3);
  std::vector<double> mapped(x.data().begin(), x.data().end());
  for (auto& v : mapped) v = (v - 0.25) / 0.5;
  const auto r0 = row(encode(shifted, x), 0), r1 = row(encode(base, Tensor::from(x.shape(), mapped)), 0);
  for (std::size_t i = 0; i < r0.size(); ++i) EXPECT_NEAR(r0[i], r1[i], 1e-12);
}

TEST(Model, PerImageStandardizationIgnoresGainAndOffset) {
  auto a = small_arch();
  a.standardize_input = true;
  const auto p = init_params(a, 9);
  const Tensor x = images(1, 16, 3);
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (auto& v : shifted) v = 0.5 * v + 0.1;
  const auto r0 = row(encode(p, x), 0), r1 = row(encode(p, Tensor::from(x.shape(), shifted)), 0);
  for (std::size_t i = 0; i < r0.size(); ++i) EXPECT_NEAR(r0[i], r1[i], 1e-9);
}

TEST(Model, ProjectionRowsAreUnitNorm) {
  const auto p = init_params(small_arch(), 2);
  const Tensor z = project(p, encode(p, images(6, 16, 2)));
  EXPECT_EQ(z.shape(), (Shape{6, 4}));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (double v : row(z, r)) s += v * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
  }
}

TEST(Model, ProjectorGradientMatchesFiniteDifferences) {
  const auto p = init_params(small_arch(), 4);
  const Tensor reps = encode(p, images(3, 16, 8));
  EXPECT_LT(finite_difference_check([&](const Tensor& r) { return sum(mul(project(p, r), project(p, r).detach())); },
                                    reps),
            1e-4);
}

TEST(Model, ClassifierIsAffine) {
  auto p = init_params(small_arch(), 3);
  p.cls_b = Tensor::zeros(p.cls_b.shape());
  const auto zero = classify(p, Tensor::zeros({1, 8}));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  auto q = init_params(small_arch(), 3);
  q.cls_b = Tensor::from(q.cls_b.shape(), {0.5, -1.0, 2.0});
  const Tensor r = encode(q, images(1, 16, 1));
  const double a = -2.5;
  const auto c0 = row(classify(q, Tensor::zeros({1, 8})), 0);
  const auto cr = row(classify(q, r), 0);
  const auto car = row(classify(q, scale(r, a)), 0);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(car[j] - c0[j], a * (cr[j] - c0[j]), 1e-12);
  EXPECT_EQ(classify(q, encode(q, images(4, 16, 2))).shape(), (Shape{4, 3}));
}

TEST(Model, ProjectorReadsAreCounted) {
  const auto p = init_params(small_arch(), 3);
  const auto before = p.projector_reads();
  const Tensor r = encode(p, images(2, 16, 1));
  classify(p, r);
  EXPECT_EQ(p.projector_reads(), before);
  project(p, r);
  EXPECT_EQ(p.projector_reads(), before + 1);
}

TEST(Model, ArchitectureValidation) {
  auto a = small_arch();
  a.rep_dim = 2;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = small_arch();
  a.channels = {3, 0, 5};
  EXPECT_THROW(a.validate(), std::invalid_argument);
  a = small_arch();
  a.input_std = 0.0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto a = small_arch();
  a.standardize_input = true;
  a.stem_stride = 2;
  const auto p = init_params(a, 12);
  const auto f1 = temp_file("a.fctc"), f2 = temp_file("b.fctc");
  save_checkpoint(p, f1);
  EXPECT_EQ(read_bytes(f1).substr(0, 4), "FCTC");
  const auto q = load_checkpoint(f1);
  EXPECT_TRUE(params_equal(p, q));
  EXPECT_EQ(q.arch(), a);
  save_checkpoint(q, f2);
  EXPECT_EQ(read_bytes(f1), read_bytes(f2));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto f = temp_file("c.fctc");
  save_checkpoint(init_params(small_arch(), 1), f);
  const std::string good = read_bytes(f);
  std::string bad = good;
  bad[0] = 'X';
  write_bytes(f, bad);
  try {
    load_checkpoint(f);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_STREQ(e.what(), "bad magic");
  }
  write_bytes(f, good.substr(0, good.size() - 3));
  EXPECT_THROW(load_checkpoint(f), CheckpointError);
  write_bytes(f, good + "x");
  EXPECT_THROW(load_checkpoint(f), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_file("missing.fctc")), CheckpointError);
}
