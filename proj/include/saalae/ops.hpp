#pragma once

#include <cstdint>
#include <vector>

#include "saalae/autograd.hpp"

// Differentiable tensor operations used by the network blocks.
namespace saalae::ops {

// Row-major C = A·B (optionally transposed operands); C is overwritten unless accumulate.
template <typename T>
void gemm(const T* a, bool transpose_a, const T* b, bool transpose_b, T* c, std::int64_t m, std::int64_t n,
          std::int64_t k, bool accumulate = false);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
// gate has a single element.
template <typename T>
Var<T> mul_scalar(const Var<T>& x, const Var<T>& gate);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// x: (B, in), weight: (out, in), bias: (out) or null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Stride-1 convolution with "same" zero padding. x: (B, C, H, W), weight: (O, C, k, k), k odd.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> avg_pool2(const Var<T>& x);
template <typename T>
Var<T> upsample_nearest2(const Var<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> softplus(const Var<T>& x);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
// Mean of squared differences against a constant target.
template <typename T>
Var<T> mse(const Var<T>& x, const Tensor<T>& target);

// Mean negative log-likelihood of integer labels under row-wise softmax. logits: (B, K).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

// x·(1 + style[:, :C]) + style[:, C:], per (sample, channel). style: (B, 2C).
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& style);

// Scaled dot-product attention over N positions.
// query, key: (B, Ck, N); value: (B, Cv, N) -> (B, Cv, N).
template <typename T>
Var<T> attention(const Var<T>& query, const Var<T>& key, const Var<T>& value, T logit_scale);

// Row-stochastic attention weights (B, N, N); row i holds the weights position i assigns to every key.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& query, const Tensor<T>& key, T logit_scale);

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// Per-channel normalization over (B, H, W).
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats,
                  bool use_batch_stats, bool update_running, T eps, T momentum);

}  // namespace saalae::ops
