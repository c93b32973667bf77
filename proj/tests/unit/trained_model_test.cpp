// Behaviour of a standard-trained classifier at desk scale. The model is trained once per suite.
#include <gtest/gtest.h>

#include <cstdio>
#include <optional>

#include "factual/config.hpp"
#include "factual/pipeline.hpp"

using namespace factual;

namespace {

RunConfig desk() {
  auto c = load_config(FACTUAL_SOURCE_DIR "/configs/desk.cfg");
  c.threads = 0;
  return c;
}

std::size_t correct(const ModelParams& p, const std::vector<Image>& images, const std::vector<LabeledImage>& src) {
  const auto pred = predict(p, images, 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == src[i].label;
  return n;
}

}  // namespace

class TrainedClassifier : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto c = desk();
    const auto train = generate_dataset(c.classes, c.classes * c.train_per_class, c.seed, Split::train, c.scene);
    model_ = run_standard_training(train, init_params(c.arch, c.seed), c.train_config()).params;
  }
  static void TearDownTestSuite() { model_.reset(); }
  static std::optional<ModelParams> model_;
};

std::optional<ModelParams> TrainedClassifier::model_;

TEST_F(TrainedClassifier, AccurateButFragile) {
  const auto c = desk();
  const auto test = generate_dataset(c.classes, c.classes * c.test_per_class, c.seed, Split::test, c.scene);
  const auto r = evaluate(*model_, test, c.eval_config());
  EXPECT_GE(r.ta, 90.0);
  EXPECT_GE(r.ta - r.ra, 20.0);
}

TEST_F(TrainedClassifier, FgsmLowersAccuracy) {
  const auto c = desk();
  std::size_t lowered = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto batch = generate_dataset(c.classes, 40, 100 + s, Split::test, c.scene);
    std::vector<Image> clean, adv;
    for (const auto& img : batch.images) {
      const Image x = to_image(img);
      clean.push_back(x);
      adv.push_back(apply_perturbation(x, fgsm(x, classifier_scorer(*model_, img.label), c.train.pgd.epsilon)));
    }
    lowered += correct(*model_, adv, batch.images) < correct(*model_, clean, batch.images);
  }
  EXPECT_GE(lowered, 9u);
}

TEST_F(TrainedClassifier, ScattererAttackDoesNotLowerLoss) {
  const auto c = desk();
  const auto batch = generate_dataset(c.classes, 100, 7, Split::test, c.scene);
  std::size_t ascended = 0;
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    const auto& img = batch.images[i];
    auto cfg = c.train.otsa;
    cfg.seed = i;
    cfg.track_loss = true;
    const auto r = otsa_attack(to_image(img), img.mask, classifier_scorer(*model_, img.label), cfg);
    ascended += r.final_loss >= r.initial_loss;
  }
  EXPECT_GE(ascended, 90u);
}

// Pre-training in the desk regime; slow (about a minute per seed on one core).
TEST(PretrainLoss, FallsFromFirstToLastEpoch) {
  std::size_t fell = 0;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    auto c = desk();
    c.seed = s;
    const auto train = generate_dataset(c.classes, c.classes * c.train_per_class, s, Split::train, c.scene);
    const auto r = pretrain(train, init_params(c.arch, s), c.train_config());
    ASSERT_EQ(r.loss_history.size(), 10u);
    std::printf("    seed %2llu  epoch 1 %.4f  epoch 10 %.4f\n", static_cast<unsigned long long>(s),
                r.loss_history.front(), r.loss_history.back());
    fell += r.loss_history.back() < r.loss_history.front();
  }
  EXPECT_GE(fell, 9u);
}
