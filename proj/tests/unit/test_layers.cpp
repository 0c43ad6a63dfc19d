#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "saalae/nn/layers.hpp"
#include "test_util.hpp"

using namespace saalae;
using namespace saalae::nn;
using saalae::testing::max_gradient_error;
using saalae::testing::random_projection;
using saalae::testing::random_tensor;

namespace {

double top_singular_value(const Tensor<double>& w) {
  const auto rows = w.dim(0), cols = w.size() / w.dim(0);
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m(i, j) = w[i * cols + j];
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

std::vector<Var<double>> with_params(const Module<double>& m, std::vector<Var<double>> extra) {
  for (const auto& p : m.parameters()) extra.push_back(p);
  return extra;
}

}  // namespace

TEST(SpectralNorm, PowerIterationMatchesSvd) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto w = random_tensor({12, 20}, seed);
    auto state = SpectralState<double>::random(12, 20, seed + 10);
    const double sigma = power_iterate(w, state, 50);
    EXPECT_NEAR(sigma, top_singular_value(w), 1e-6 * top_singular_value(w));
    EXPECT_NEAR(top_singular_value(spectral_normalize(w, state, 1)), 1.0, 1e-6);
  }
}

TEST(SpectralNorm, LayerWeightsReachUnitNormDuringTraining) {
  Rng rng(5);
  Conv2d<double> conv(6, 8, 3, true, rng);
  Linear<double> lin(30, 10, true, rng);
  auto x = constant(random_tensor({2, 6, 4, 4}, 1));
  auto y = constant(random_tensor({2, 30}, 2));
  for (int i = 0; i < 30; ++i) {
    conv.forward(x, Pass::train());
    lin.forward(y, Pass::train());
  }
  EXPECT_NEAR(top_singular_value(conv.effective_weight()), 1.0, 1e-2);
  EXPECT_NEAR(top_singular_value(lin.effective_weight()), 1.0, 1e-2);
}

TEST(SpectralNorm, StateOnlyAdvancesWhenUpdating) {
  Rng rng(1);
  Linear<double> lin(5, 4, true, rng);
  auto x = constant(random_tensor({2, 5}, 3));
  const auto before = lin.checksum(true);
  lin.forward(x, Pass::eval());
  lin.forward(x, Pass::frozen_train());
  EXPECT_EQ(lin.checksum(true), before);
  lin.forward(x, Pass::train());
  EXPECT_NE(lin.checksum(true), before);
  Rng same(1);
  EXPECT_EQ(lin.checksum(false), Linear<double>(5, 4, true, same).checksum(false));
}

TEST(SpectralNorm, DegenerateWeightsThrow) {
  auto state = SpectralState<double>::random(3, 3, 1);
  EXPECT_THROW(spectral_normalize(Tensor<double>({3, 3}), state, 1), std::domain_error);
  Tensor<double> w({3, 3}, 1.0);
  w[4] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(spectral_normalize(w, state, 1), std::domain_error);
}

TEST(SpectralNorm, GradientThroughNormalization) {
  auto w = leaf(random_tensor({4, 6}, 7));
  auto state = SpectralState<double>::random(4, 6, 3);
  power_iterate(w->value, state, 20);
  EXPECT_LT(max_gradient_error([&] { return random_projection(spectral_normalized(w, state, false), 2); }, {w}), 1e-6);
}

TEST(SelfAttention, IdentityAtZeroGate) {
  Rng rng(3);
  SelfAttention2d<float> att(16, 8, true, rng);
  ASSERT_EQ(att.gamma()->value[0], 0.0f);
  for (const Shape& s : {Shape{1, 16, 4, 4}, Shape{3, 16, 8, 8}, Shape{2, 16, 1, 5}}) {
    Tensor<float> x(s);
    std::mt19937 g(1);
    std::normal_distribution<float> n;
    for (auto& v : x.values()) v = n(g) * 100.0f;
    EXPECT_EQ(att.forward(constant(x), Pass::train())->value, x);
  }
}

TEST(SelfAttention, ConstantFeatureMapGivesUniformWeights) {
  Rng rng(4);
  SelfAttention2d<double> att(8, 8, false, rng);
  att.gamma()->value[0] = 1.0;
  Tensor<double> x({1, 8, 3, 3});
  for (int c = 0; c < 8; ++c)
    for (int p = 0; p < 9; ++p) x[c * 9 + p] = 0.3 * c - 1.0;
  const auto w = att.attention_map(x);
  for (std::int64_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 1.0 / 9.0, 1e-15);
}

TEST(SelfAttention, ShapesFollowReduction) {
  Rng rng(1);
  SelfAttention2d<float> att(32, 8, true, rng);
  EXPECT_EQ(att.key_channels(), 4);
  EXPECT_EQ(att.value_channels(), 16);
  auto y = att.forward(constant(Tensor<float>({2, 32, 4, 4})), Pass::eval());
  EXPECT_EQ(y->value.shape(), (Shape{2, 32, 4, 4}));
}

TEST(SelfAttention, FiniteDifferenceGradient) {
  Rng rng(8);
  SelfAttention2d<double> att(8, 4, true, rng);
  att.gamma()->value[0] = 0.8;
  auto x = leaf(random_tensor({2, 8, 3, 3}, 5));
  // Warm the power-iteration vectors, then hold them fixed for a deterministic function.
  for (int i = 0; i < 5; ++i) att.forward(x, Pass::train());
  const double err =
      max_gradient_error([&] { return random_projection(att.forward(x, Pass::eval()), 6); }, with_params(att, {x}));
  EXPECT_LT(err, 1e-3);
}

TEST(ResidualBlock, FiniteDifferenceGradientPlain) {
  Rng rng(9);
  ResidualBlock<double> block(3, 5, Resample::down, {}, rng);
  auto x = leaf(random_tensor({2, 3, 4, 4}, 1));
  const double err = max_gradient_error([&] { return random_projection(block.forward(x, Pass::eval()), 2); },
                                        with_params(block, {x}));
  EXPECT_LT(err, 1e-3);
}

TEST(ResidualBlock, FiniteDifferenceGradientNormalizedAndStyled) {
  Rng rng(10);
  ResidualOptions opts;
  opts.batch_norm = true;
  opts.spectral_norm = true;
  opts.style_dim = 4;
  ResidualBlock<double> block(4, 2, Resample::up, opts, rng);
  auto x = leaf(random_tensor({3, 4, 2, 2}, 3));
  auto style = leaf(random_tensor({3, 4}, 4));
  for (int i = 0; i < 3; ++i) block.forward(x, Pass::train(), style);
  const double err =
      max_gradient_error([&] { return random_projection(block.forward(x, Pass::frozen_train(), style), 5); },
                         with_params(block, {x, style}));
  EXPECT_LT(err, 1e-3);
}

TEST(ResidualBlock, ResampleModesSetOutputSize) {
  Rng rng(2);
  auto x = constant(Tensor<float>({1, 2, 8, 8}, 0.5f));
  EXPECT_EQ(ResidualBlock<float>(2, 4, Resample::down, {}, rng).forward(x, Pass::eval())->value.shape(),
            (Shape{1, 4, 4, 4}));
  EXPECT_EQ(ResidualBlock<float>(2, 4, Resample::up, {}, rng).forward(x, Pass::eval())->value.shape(),
            (Shape{1, 4, 16, 16}));
  EXPECT_EQ(ResidualBlock<float>(2, 2, Resample::same, {}, rng).forward(x, Pass::eval())->value.shape(),
            (Shape{1, 2, 8, 8}));
}

TEST(BatchNorm2d, EvalUsesRunningStatistics) {
  BatchNorm2d<double> bn(2);
  auto x = constant(random_tensor({4, 2, 3, 3}, 1, 3.0));
  // Fresh running stats (mean 0, var 1) with gamma 1, beta 0: eval output equals input up to eps.
  const auto y = bn.forward(x, Pass::eval());
  for (std::int64_t i = 0; i < y->value.size(); ++i) EXPECT_NEAR(y->value[i], x->value[i] / std::sqrt(1 + 1e-5), 1e-12);
}
