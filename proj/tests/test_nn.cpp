#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "folc/nn/gradcheck.hpp"
#include "folc/nn/network.hpp"
#include "test_support.hpp"

using namespace folc;
using folc::testing::check_layer_gradients;
using folc::testing::random_layer_params;
using folc::testing::random_tensor;

namespace {

template <typename T = double>
Tensor<T> run(const LayerSpec& spec, const Tensor<T>& x, Mode mode = Mode::Infer, std::vector<T> params = {}) {
  Rng rng(7);
  return layer_forward<T>(spec, x, std::span<T>(params), mode, rng).first;
}

}  // namespace

TEST(LayerForward, LeakyReluNegativeSlope) {
  Tensor<double> x({1, 1}, -1.0);
  auto y = run(layer::Activation{ActivationKind::LeakyReLU, 0.1}, x);
  EXPECT_DOUBLE_EQ(y[0], -0.1);
}

TEST(LayerForward, DropoutInferIsIdentity) {
  Rng rng(3);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_EQ(run(layer::Dropout{0.25}, x, Mode::Infer), x);
}

TEST(LayerForward, DropoutTrainUsesInvertedScaling) {
  Tensor<double> x({1, 4000}, 1.0);
  auto y = run(layer::Dropout{0.25}, x, Mode::Train);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_TRUE(y[i] == 0.0 || std::abs(y[i] - 1.0 / 0.75) < 1e-12);
    sum += y[i];
  }
  EXPECT_NEAR(sum / 4000.0, 1.0, 0.05);
}

TEST(LayerForward, MaxPoolTwoByTwo) {
  std::vector<double> v(16);
  std::iota(v.begin(), v.end(), 1.0);
  Tensor<double> x({1, 1, 4, 4}, v);
  auto y = run(layer::MaxPool2D{}, x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.storage(), (std::vector<double>{6, 8, 14, 16}));
}

TEST(LayerForward, ShapeMismatchNamesLayerIndex) {
  Tensor<double> x({2, 5});
  Rng rng(1);
  std::vector<double> none;
  try {
    layer_forward<double>(layer::MaxPool2D{}, x, std::span<double>(none), Mode::Infer, rng, 7);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("layer 7"), std::string::npos);
    EXPECT_NE(msg.find("got (5)"), std::string::npos) << msg;
  }
}

TEST(LayerForward, BatchNormTrainUpdatesRunningStats) {
  Tensor<double> x({4, 1}, std::vector<double>{1, 2, 3, 4});
  std::vector<double> p{1.0, 0.0, 0.0, 1.0};  // gamma beta mean var
  Rng rng(1);
  auto y = layer_forward<double>(layer::BatchNorm{0.99, 0.01}, x, std::span<double>(p), Mode::Train, rng).first;
  EXPECT_NEAR(p[2], 0.01 * 2.5, 1e-12);
  EXPECT_NEAR(p[3], 0.99 + 0.01 * 1.25, 1e-12);
  EXPECT_NEAR(y[0], (1 - 2.5) / std::sqrt(1.25 + 0.01), 1e-12);
  auto z = layer_forward<double>(layer::BatchNorm{0.99, 0.01}, x, std::span<double>(p), Mode::Infer, rng).first;
  EXPECT_NEAR(z[0], (1 - p[2]) / std::sqrt(p[3] + 0.01), 1e-12);
}

TEST(LayerBackward, LeakyReluSlopeOnNegativeBranch) {
  Tensor<double> x({1, 1}, -2.0);
  Rng rng(1);
  std::vector<double> none;
  LayerSpec spec = layer::Activation{ActivationKind::LeakyReLU, 0.1};
  auto [y, cache] = layer_forward<double>(spec, x, std::span<double>(none), Mode::Train, rng);
  auto g = layer_backward<double>(spec, cache, {}, Tensor<double>({1, 1}, 1.0));
  EXPECT_DOUBLE_EQ(g.input_grad[0], 0.1);
}

TEST(LayerBackward, DenseZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  LayerSpec spec = layer::Dense{3};
  auto x = random_tensor({2, 4}, rng);
  auto p = random_layer_params(spec, {4}, rng);
  auto [y, cache] = layer_forward<double>(spec, x, std::span<double>(p), Mode::Train, rng);
  auto g = layer_backward<double>(spec, cache, std::span<const double>(p), Tensor<double>(y.shape(), 0.0));
  for (double v : g.input_grad.storage()) EXPECT_EQ(v, 0.0);
  for (double v : g.param_grads) EXPECT_EQ(v, 0.0);
}

TEST(LayerBackward, CacheKindMismatchIsRejected) {
  Rng rng(5);
  Tensor<double> x({1, 2}, 1.0);
  std::vector<double> none;
  auto [y, cache] = layer_forward<double>(layer::Flatten{}, x, std::span<double>(none), Mode::Train, rng);
  EXPECT_THROW(layer_backward<double>(layer::GlobalAvgPool{}, cache, {}, y), std::invalid_argument);
}

TEST(LayerBackward, Conv3x3MatchesFiniteDifferences) {
  Rng rng(11);
  LayerSpec spec = layer::Conv2D{4, 3};
  auto x = random_tensor({1, 3, 8, 8}, rng);
  auto p = random_layer_params(spec, {3, 8, 8}, rng);
  auto r = check_layer_gradients(spec, x, p, 99);
  EXPECT_LT(r.max(), 1e-4) << "input " << r.input_error << " params " << r.param_error;
}

TEST(LayerBackward, DropoutBackwardReusesForwardMask) {
  Rng rng(2);
  LayerSpec spec = layer::Dropout{0.5};
  auto x = random_tensor({1, 64}, rng);
  std::vector<double> none;
  auto [y, cache] = layer_forward<double>(spec, x, std::span<double>(none), Mode::Train, rng);
  auto g = layer_backward<double>(spec, cache, {}, Tensor<double>(y.shape(), 1.0));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(g.input_grad[i] == 0.0, y[i] == 0.0);
}

// Every layer kind against central differences on random shapes.
class GradientProperty : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientProperty, RandomShapes) {
  const std::size_t kind = GetParam();
  Rng rng(1000 + kind);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = folc::testing::random_layer_case(kind, rng);
    auto x = random_tensor(c.input, rng);
    folc::testing::push_off_zero(x);
    Shape in(c.input.begin() + 1, c.input.end());
    auto p = random_layer_params(c.spec, in, rng);
    auto r = check_layer_gradients(c.spec, x, p, 500 + trial);
    EXPECT_LT(r.max(), 1e-4) << describe(c.spec) << " on " << shape_str(c.input);
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradientProperty, ::testing::Range<std::size_t>(0, folc::testing::kLayerKinds));

TEST(ShapeAlgebra, ForwardOutputMatchesFormula) {
  Rng rng(77);
  for (std::size_t kind = 0; kind < folc::testing::kLayerKinds; ++kind)
    for (int trial = 0; trial < 10; ++trial) {
      auto c = folc::testing::random_layer_case(kind, rng);
      Shape in(c.input.begin() + 1, c.input.end());
      auto x = random_tensor(c.input, rng);
      auto p = random_layer_params(c.spec, in, rng);
      auto y = run<double>(c.spec, x, Mode::Train, p);
      Shape expect{c.input[0]};
      for (auto d : output_shape(c.spec, in)) expect.push_back(d);
      EXPECT_EQ(y.shape(), expect) << describe(c.spec);
      EXPECT_TRUE(y.all_finite());
    }
}

TEST(Loss, UniformLogitsGiveLogK) {
  Tensor<double> logits({1, 4}, 0.0);
  auto r = loss_and_grad(logits, one_hot<double>({2}, 4));
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.loss, 1.386294, 1e-6);
}

TEST(Loss, SaturatedCorrectClassGoesToZero) {
  Tensor<double> logits({1, 4}, std::vector<double>{0, 1e6, 0, 0});
  auto r = loss_and_grad(logits, one_hot<double>({1}, 4));
  EXPECT_LT(r.loss, 1e-9);
  EXPECT_GE(r.loss, 0.0);
}

TEST(Loss, NonOneHotRowIsRejected) {
  Tensor<double> logits({1, 3}, 0.0);
  Tensor<double> labels({1, 3}, std::vector<double>{0.5, 0.5, 0});
  EXPECT_THROW(loss_and_grad(logits, labels), std::invalid_argument);
  Tensor<double> two({1, 3}, std::vector<double>{1, 1, 0});
  EXPECT_THROW(loss_and_grad(logits, two), std::invalid_argument);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  auto logits = random_tensor({8, 4}, rng, -3, 3);
  std::vector<std::size_t> labels(8);
  for (auto& l : labels) l = rng.index(4);
  auto y = one_hot<double>(labels, 4);
  auto r = loss_and_grad(logits, y);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += h;
    down[i] -= h;
    double fd = (loss_and_grad(up, y).loss - loss_and_grad(down, y).loss) / (2 * h);
    worst = std::max(worst, relative_error(r.logit_grad[i], fd));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Loss, PositivityAndSoftmaxRows) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = random_tensor({5, 4}, rng, -20, 20);
    std::vector<std::size_t> labels(5);
    for (auto& l : labels) l = rng.index(4);
    EXPECT_GE(loss_and_grad(logits, one_hot<double>(labels, 4)).loss, 0.0);
    auto p = softmax(logits);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += p[i * 4 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndCountsStep) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamState<double> st(2);
  adam_step<double>(p, g, st, 0.001);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.0}, g{1.0};
  AdamState<double> st(1);
  adam_step<double>(p, g, st, 0.001);
  EXPECT_NEAR(p[0], -0.001, 1e-6);
  // Bias-corrected first step: lr * 1 / (1 + eps).
  EXPECT_NEAR(p[0], -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, LengthMismatchIsRejected) {
  std::vector<double> p{0.0, 1.0}, g{1.0};
  AdamState<double> st(2);
  EXPECT_THROW(adam_step<double>(p, g, st, 0.001), std::invalid_argument);
}

namespace {

NetworkSpec toy_linear() {
  NetworkSpec s;
  s.input = {1, 2, 2};
  s.layers = {layer::Flatten{}, layer::Dense{3}, layer::SoftmaxHead{2}};
  s.classes = 2;
  return s;
}

NetworkSpec small_conv_net() {
  NetworkSpec s;
  s.input = {2, 4, 4};
  s.layers = {layer::Conv2D{3, 3}, make_activation(ActivationKind::LeakyReLU), layer::MaxPool2D{},
              layer::Dropout{0.3}, layer::BatchNorm{}, layer::GlobalAvgPool{}, layer::Dense{5},
              make_activation(ActivationKind::Tanh), layer::SoftmaxHead{3}};
  s.classes = 3;
  return s;
}

}  // namespace

TEST(Adam, TrajectoriesAreDeterministic) {
  Network<double> net(small_conv_net());
  Rng data(4);
  auto x = random_tensor({4, 2, 4, 4}, data);
  std::vector<std::size_t> labels{0, 1, 2, 1};
  auto run_once = [&] {
    auto p = net.init_params(42);
    AdamState<double> st;
    Rng rng(5);
    for (int i = 0; i < 5; ++i) net.train_step(p, x, labels, OptimizerKind::Adam, st, 0.01, rng);
    return p;
  };
  EXPECT_TRUE(run_once() == run_once());
}

TEST(GradientCheck, LinearToyNetwork) {
  Network<double> net(toy_linear());
  auto p = net.init_params(3);
  Rng rng(6);
  auto x = random_tensor({3, 1, 2, 2}, rng);
  for (const auto& r : gradient_check(net, p, x, {0, 1, 1}, 1)) EXPECT_LT(r.max_rel_error, 1e-8) << r.kind;
}

TEST(GradientCheck, DropoutWithFrozenMask) {
  Network<double> net(small_conv_net());
  auto p = net.init_params(3);
  Rng rng(6);
  auto x = random_tensor({4, 2, 4, 4}, rng);
  auto report = gradient_check(net, p, x, {0, 1, 2, 0}, 17);
  ASSERT_FALSE(report.empty());
  for (const auto& r : report) EXPECT_LT(r.max_rel_error, 1e-6) << r.kind << " layer " << r.layer;
}

TEST(Network, InferenceIsPure) {
  Network<double> net(small_conv_net());
  auto p = net.init_params(1);
  Rng rng(2);
  auto x = random_tensor({3, 2, 4, 4}, rng);
  auto before = p;
  EXPECT_EQ(net.predict_logits(p, x), net.predict_logits(p, x));
  EXPECT_TRUE(before == p);
}

TEST(Network, ZeroLearningRateFreezesEverything) {
  Network<float> net(small_conv_net());
  auto p = net.init_params(1);
  auto before = p;
  Rng rng(2);
  Tensor<float> x({4, 2, 4, 4}, 0.5f);
  AdamState<float> st;
  net.train_step(p, x, {0, 1, 2, 0}, OptimizerKind::Adam, st, 0.0, rng);
  EXPECT_TRUE(before == p);
}

TEST(Network, InitialisationFollowsRoles) {
  Network<double> net(small_conv_net());
  auto p = net.init_params(9);
  for (const auto& seg : net.layout()->segments())
    for (const auto& b : seg.blocks) {
      auto v = p.values().subspan(b.offset, b.length);
      if (b.block.role == ParamRole::Weight) {
        const double lim = std::sqrt(6.0 / b.block.fan_in);
        for (double x : v) EXPECT_LE(std::abs(x), lim);
      } else if (b.block.role == ParamRole::Gamma || b.block.role == ParamRole::RunningVar) {
        for (double x : v) EXPECT_EQ(x, 1.0);
      } else {
        for (double x : v) EXPECT_EQ(x, 0.0);
      }
    }
}
