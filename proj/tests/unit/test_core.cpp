#include <gtest/gtest.h>

#include <cmath>

#include "saalae/autograd.hpp"
#include "saalae/ops.hpp"
#include "test_util.hpp"

using namespace saalae;
using saalae::testing::max_gradient_error;
using saalae::testing::random_projection;
using saalae::testing::random_tensor;

TEST(Tensor, ShapeAndSlicing) {
  Tensor<float> t({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.row_size(), 2);
  const auto mid = t.slice_rows(1, 2);
  EXPECT_EQ(mid.shape(), (Shape{1, 2}));
  EXPECT_EQ(mid[0], 3);
  std::vector<Tensor<float>> parts{t.slice_rows(0, 1), t.slice_rows(1, 3)};
  EXPECT_EQ(concat_rows<float>(parts), t);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, FiniteCheckAndChecksum) {
  Tensor<double> t({4}, 1.0);
  EXPECT_TRUE(t.all_finite());
  const auto h = fnv1a(t.data(), sizeof(double) * 4);
  t[2] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_NE(h, fnv1a(t.data(), sizeof(double) * 4));
}

TEST(Gemm, MatchesNaiveProductForAllTranspositions) {
  const auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2);
  Tensor<double> ref({3, 5});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 4; ++k) ref[i * 5 + j] += a[i * 4 + k] * b[k * 5 + j];
  Tensor<double> c({3, 5});
  ops::gemm(a.data(), false, b.data(), false, c.data(), 3, 5, 4);
  EXPECT_LT(max_abs_diff(c, ref), 1e-12);

  Tensor<double> at({4, 3}), bt({5, 4});
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) at[k * 3 + i] = a[i * 4 + k];
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 5; ++j) bt[j * 4 + k] = b[k * 5 + j];
  ops::gemm(at.data(), true, bt.data(), true, c.data(), 3, 5, 4);
  EXPECT_LT(max_abs_diff(c, ref), 1e-12);
  ops::gemm(a.data(), false, b.data(), false, c.data(), 3, 5, 4, true);
  for (std::int64_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 2 * ref[i], 1e-12);
}

TEST(Autograd, ChainAndAccumulation) {
  auto x = leaf(Tensor<double>({2}, std::vector<double>{1.5, -2.0}));
  // y = sum(x * x) + sum(3x): dy/dx = 2x + 3
  auto y = ops::add(ops::sum(ops::mul(x, x)), ops::sum(ops::scale(x, 3.0)));
  backward(y);
  EXPECT_DOUBLE_EQ(x->grad[0], 6.0);
  EXPECT_DOUBLE_EQ(x->grad[1], -1.0);
}

TEST(Autograd, NoGradGuardSkipsTape) {
  auto x = leaf(Tensor<double>({1}, 2.0));
  Var<double> y;
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    y = ops::mul(x, x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y->requires_grad);
  auto d = detach(ops::mul(x, x));
  EXPECT_FALSE(d->requires_grad);
}

TEST(Autograd, NonScalarRootNeedsSeed) {
  auto x = leaf(Tensor<double>({2}, 1.0));
  EXPECT_THROW(backward(ops::scale(x, 2.0)), std::invalid_argument);
}

// Finite-difference checks for each differentiable op (64-bit).
TEST(OpsGradient, Linear) {
  auto x = leaf(random_tensor({3, 4}, 1)), w = leaf(random_tensor({5, 4}, 2)), b = leaf(random_tensor({5}, 3));
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::linear(x, w, b), 9); }, {x, w, b}), 1e-6);
}

TEST(OpsGradient, Conv2d) {
  auto x = leaf(random_tensor({2, 2, 5, 5}, 1)), w = leaf(random_tensor({3, 2, 3, 3}, 2)),
       b = leaf(random_tensor({3}, 3));
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::conv2d(x, w, b), 9); }, {x, w, b}), 1e-6);
}

TEST(OpsGradient, PoolingUpsampleActivations) {
  auto x = leaf(random_tensor({2, 2, 4, 4}, 4));
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::avg_pool2(x), 1); }, {x}), 1e-6);
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::upsample_nearest2(x), 2); }, {x}), 1e-6);
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::leaky_relu(x, 0.2), 3); }, {x}), 1e-6);
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::sigmoid(x), 4); }, {x}), 1e-6);
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::softplus(x), 5); }, {x}), 1e-6);
}

TEST(OpsGradient, LossesAndModulation) {
  auto x = leaf(random_tensor({3, 4}, 5));
  const auto target = random_tensor({3, 4}, 6);
  EXPECT_LT(max_gradient_error([&] { return ops::mse(x, target); }, {x}), 1e-6);
  EXPECT_LT(max_gradient_error([&] { return ops::softmax_cross_entropy(x, {0, 3, 1}); }, {x}), 1e-6);
  auto f = leaf(random_tensor({2, 3, 2, 2}, 7)), style = leaf(random_tensor({2, 6}, 8));
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::modulate(f, style), 1); }, {f, style}), 1e-6);
}

TEST(OpsGradient, BatchNorm) {
  auto x = leaf(random_tensor({3, 2, 2, 2}, 1)), g = leaf(random_tensor({2}, 2)), b = leaf(random_tensor({2}, 3));
  ops::BatchNormStats<double> stats{Tensor<double>({2}), Tensor<double>({2}, 1.0)};
  EXPECT_LT(max_gradient_error(
                [&] { return random_projection(ops::batch_norm(x, g, b, stats, true, false, 1e-5, 0.1), 4); },
                {x, g, b}),
            1e-5);
}

TEST(OpsGradient, Attention) {
  auto q = leaf(random_tensor({2, 2, 5}, 1)), k = leaf(random_tensor({2, 2, 5}, 2)),
       v = leaf(random_tensor({2, 3, 5}, 3));
  EXPECT_LT(max_gradient_error([&] { return random_projection(ops::attention(q, k, v, 0.7), 4); }, {q, k, v}), 1e-6);
}

TEST(Ops, SoftmaxCrossEntropyValue) {
  // Uniform logits over K classes: loss = ln K.
  auto x = constant(Tensor<double>({2, 4}));
  EXPECT_NEAR(ops::softmax_cross_entropy(x, {1, 2})->value[0], std::log(4.0), 1e-12);
  EXPECT_THROW(ops::softmax_cross_entropy(x, {1, 4}), std::invalid_argument);
}

TEST(Ops, AttentionWeightsAreRowStochastic) {
  const auto q = random_tensor({1, 3, 6}, 1), k = random_tensor({1, 3, 6}, 2);
  const auto w = ops::attention_weights(q, k, 1.0);
  for (int i = 0; i < 6; ++i) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      EXPECT_GT(w[i * 6 + j], 0.0);
      s += w[i * 6 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, BatchNormRunningStatistics) {
  auto x = constant(random_tensor({4, 1, 2, 2}, 3, 2.0));
  auto g = constant(Tensor<double>({1}, 1.0)), b = constant(Tensor<double>({1}));
  ops::BatchNormStats<double> stats{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  const auto before = stats.running_mean;
  ops::batch_norm(x, g, b, stats, true, false, 1e-5, 0.1);
  EXPECT_EQ(stats.running_mean, before);
  auto y = ops::batch_norm(x, g, b, stats, true, true, 1e-5, 0.1);
  double mean = 0;
  for (double v : x->value.values()) mean += v;
  mean /= 16;
  EXPECT_NEAR(stats.running_mean[0], 0.1 * mean, 1e-12);
  double ym = 0;
  for (double v : y->value.values()) ym += v;
  EXPECT_NEAR(ym / 16, 0.0, 1e-12);
}
