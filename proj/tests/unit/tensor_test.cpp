#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <random>

#include "factual/grad_check.hpp"
#include "factual/losses.hpp"
#include "factual/optim.hpp"
#include "factual/tensor.hpp"

using namespace factual;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grad_of(const Tensor& t) { return {t.grad()->begin(), t.grad()->end()}; }

}  // namespace

TEST(Tensor, ReluOnSmallVector) {
  EXPECT_EQ(values(relu(Tensor::from({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Tensor, L2NormalizeThreeFourFive) {
  const auto v = values(l2_normalize(Tensor::from({1, 2}, {3, 4})));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
}

TEST(Tensor, L2NormalizeZeroVectorStaysFinite) {
  const auto v = values(l2_normalize(Tensor::from({1, 2}, {0, 0})));
  EXPECT_EQ(v, (std::vector<double>{0, 0}));
}

TEST(Tensor, ConvOfOnesIsNine) {
  const Tensor x = Tensor::filled({1, 1, 4, 4}, 1.0);
  const Tensor w = Tensor::filled({1, 1, 3, 3}, 1.0);
  const Tensor y = conv2d(x, w, Tensor{}, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(values(y), (std::vector<double>(4, 9.0)));
}

TEST(Tensor, ConvMatchesDirectSummation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t n = 2, ci = 2, co = 3, h = 7, w = 6, k = 3, stride = 2, pad = 1;
  std::vector<double> xv(n * ci * h * w), wv(co * ci * k * k), bv(co);
  for (auto* v : {&xv, &wv, &bv}) {
    for (auto& e : *v) e = u(rng);
  }
  const Tensor y = conv2d(Tensor::from({n, ci, h, w}, xv), Tensor::from({co, ci, k, k}, wv), Tensor::from({co}, bv),
                          stride, pad);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{n, co, oh, ow}));
  const auto out = y.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double s = bv[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dx = 0; dx < k; ++dx) {
                const long yy = static_cast<long>(r * stride + dy) - static_cast<long>(pad);
                const long xx = static_cast<long>(c * stride + dx) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                s += xv[((b * ci + i) * h + yy) * w + xx] * wv[((o * ci + i) * k + dy) * k + dx];
              }
          EXPECT_NEAR(out[((b * co + o) * oh + r) * ow + c], s, 1e-12);
        }
}

TEST(Tensor, PoolingAndReductions) {
  const Tensor x = Tensor::from({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 7, 6});
  EXPECT_EQ(values(max_pool2x2(x)), (std::vector<double>{5, 7}));
  EXPECT_EQ(values(global_avg_pool(x)), (std::vector<double>{3.5}));
  EXPECT_EQ(flatten(x).shape(), (Shape{1, 8}));
  EXPECT_EQ(sum(x).item(), 28.0);
  EXPECT_EQ(mean(x).item(), 3.5);
  EXPECT_EQ(values(sum_rows(Tensor::from({2, 2}, {1, 2, 3, 4}))), (std::vector<double>{3, 7}));
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  const auto v = values(softmax(Tensor::from({2, 3}, {1, 2, 3, -5, 0, 1000})));
  EXPECT_NEAR(v[0] + v[1] + v[2], 1.0, 1e-15);
  EXPECT_NEAR(v[5], 1.0, 1e-15);
  const auto ls = values(log_softmax(Tensor::from({1, 2}, {0, 0})));
  EXPECT_NEAR(ls[0], -std::log(2.0), 1e-15);
}

TEST(Tensor, GatherClampSignDense) {
  const Tensor a = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(gather_rows(a, {2, 0, 2})), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  EXPECT_EQ(values(clamp(Tensor::from({3}, {-2, 0.5, 2}), 0, 1)), (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(values(sign(Tensor::from({3}, {-0.1, 0, 3}))), (std::vector<double>{-1, 0, 1}));
  const Tensor y = dense(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {10, 20}));
  EXPECT_EQ(values(y), (std::vector<double>{11, 22}));
}

TEST(Tensor, ReshapeKeepsOrder) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor y = reshape(x, {3, 2});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(values(y), values(x));
  EXPECT_THROW(reshape(x, {4, 2}), TensorError);
}

TEST(Tensor, ShapeMismatchNamesOpAndShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL();
  } catch (const TensorError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), TensorError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), TensorError);
}

TEST(Tensor, LeafInvariants) {
  const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  EXPECT_TRUE(x.is_leaf());
  EXPECT_EQ(x.size(), 4u);
  EXPECT_FALSE(x.grad().has_value());
  const Tensor y = mul(x, x);
  EXPECT_FALSE(y.is_leaf());
  EXPECT_EQ(y.node()->parents.size(), 2u);
  EXPECT_TRUE(x.node()->parents.empty());
}

TEST(Tensor, NoGraphWithoutRequiresGrad) {
  const Tensor y = add(Tensor::zeros({2}), Tensor::zeros({2}));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Backward, SquareSum) {
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(grad_of(x), (std::vector<double>{2, -4, 6}));
}

TEST(Backward, ReluFlatRegion) {
  Tensor x = Tensor::from({1}, {-1}, true);
  backward(sum(relu(x)));
  EXPECT_EQ(grad_of(x), (std::vector<double>{0}));
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = Tensor::from({1}, {0.7}, true);
  backward(sum(add(x, x)));
  EXPECT_EQ(grad_of(x), (std::vector<double>{2}));
}

TEST(Backward, GradShapeMatchesData) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(mean(exp(x)));
  EXPECT_EQ(x.grad()->size(), x.size());
}

TEST(Backward, NonScalarRootIsAnError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), TensorError);
}

TEST(Backward, SingleUseGraphRefusesSecondPass) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor root = sum(mul(x, x));
  backward(root, {.single_use = true});
  EXPECT_THROW(backward(root, {.single_use = true}), TensorError);
}

TEST(Backward, ReusableGraphAccumulates) {
  Tensor x = Tensor::from({1}, {3}, true);
  const Tensor root = sum(mul(x, x));
  backward(root);
  backward(root);
  EXPECT_EQ(grad_of(x), (std::vector<double>{12}));
}

TEST(Backward, SignIsForwardOnly) {
  Tensor x = Tensor::from({2}, {1, -1}, true);
  EXPECT_THROW(backward(sum(mul(sign(x), x))), TensorError);
}

TEST(Backward, CrossEntropyMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> logits(3);
  for (auto& v : logits) v = n(rng);
  const std::vector<std::size_t> label{1};
  const double err = finite_difference_check(
      [&](const Tensor& t) { return cross_entropy_loss(t, label); }, Tensor::from({1, 3}, logits), 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(ComputationGraph, ParentsPrecedeChildren) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor a = exp(x);
  const Tensor root = sum(add(a, mul(a, x)));
  const auto order = ComputationGraph::from(root).order();
  ASSERT_FALSE(order.empty());
  EXPECT_EQ(order.back(), root.node().get());
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (const auto& p : order[k]->parents) {
      const auto it = std::find(order.begin(), order.end(), p.get());
      ASSERT_NE(it, order.end());
      EXPECT_LT(static_cast<std::size_t>(it - order.begin()), k);
    }
  }
  std::set<Node*> unique(order.begin(), order.end());
  EXPECT_EQ(unique.size(), order.size());
}

TEST(Tensor, ForwardIsBitIdenticalAcrossRuns) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> xv(2 * 1 * 8 * 8), wv(3 * 1 * 3 * 3);
  for (auto& v : xv) v = u(rng);
  for (auto& v : wv) v = u(rng);
  auto run = [&] {
    const Tensor x = Tensor::from({2, 1, 8, 8}, xv), w = Tensor::from({3, 1, 3, 3}, wv);
    return values(softmax(flatten(global_avg_pool(relu(conv2d(x, w, Tensor{}, 1, 1))))));
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, SumHasExactGradient) {
  const double err = finite_difference_check([](const Tensor& t) { return sum(t); },
                                             Tensor::from({4}, {0.3, -1.2, 5.0, 2.0}), 1e-5);
  EXPECT_LT(err, 1e-10);
}

TEST(GradCheck, RejectsBadStepAndNonFinite) {
  const Tensor x = Tensor::from({1}, {1.0});
  EXPECT_THROW(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-2), TensorError);
  EXPECT_THROW(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-8), TensorError);
  EXPECT_THROW(finite_difference_check([](const Tensor& t) { return sum(log(scale(t, 0.0))); }, x, 1e-5), TensorError);
}

TEST(Sgd, PlainStep) {
  Tensor p = Tensor::from({1}, {1.0});
  SgdMomentum opt({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  Tensor* slots[] = {&p};
  const std::vector<std::vector<double>> g{{0.5}};
  opt.step(slots, g);
  EXPECT_DOUBLE_EQ(p.data()[0], 0.95);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.25});
  SgdMomentum opt({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  Tensor* slots[] = {&p};
  const std::vector<std::vector<double>> g{{0, 0, 0}};
  opt.step(slots, g);
  EXPECT_EQ(values(p), (std::vector<double>{1.0, -2.0, 0.25}));
}

TEST(Sgd, MomentumTwoSteps) {
  const double gval = 0.37;
  Tensor p = Tensor::from({1}, {0.0});
  SgdMomentum opt({.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
  Tensor* slots[] = {&p};
  const std::vector<std::vector<double>> g{{gval}};
  opt.step(slots, g);
  EXPECT_NEAR(p.data()[0], -0.1 * gval, 1e-15);
  opt.step(slots, g);
  EXPECT_NEAR(p.data()[0], -0.29 * gval, 1e-15);
}

TEST(Sgd, WeightDecayEntersVelocity) {
  Tensor p = Tensor::from({1}, {2.0});
  SgdMomentum opt({.lr = 0.5, .momentum = 0.0, .weight_decay = 0.1});
  Tensor* slots[] = {&p};
  const std::vector<std::vector<double>> g{{0.0}};
  opt.step(slots, g);
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 - 0.5 * 0.2);
}

TEST(Sgd, RejectsMismatchAndBadConfig) {
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  SgdMomentum opt({});
  Tensor* slots[] = {&p};
  const std::vector<std::vector<double>> g{{0.5}};
  EXPECT_THROW(opt.step(slots, g), TensorError);
  EXPECT_THROW(SgdMomentum({.lr = 0.0}), TensorError);
  EXPECT_THROW(SgdMomentum({.lr = 0.1, .momentum = 1.0}), TensorError);
}
