#pragma once

#include <cstdint>

#include "saalae/autograd.hpp"

namespace saalae::nn {

// Persistent singular-vector estimates for one weight, viewed as a (rows x cols) matrix
// where rows is the leading dimension and cols the product of the rest.
template <typename T>
struct SpectralState {
  Tensor<T> u;  // (rows), unit norm
  Tensor<T> v;  // (cols), unit norm

  static SpectralState random(std::int64_t rows, std::int64_t cols, std::uint64_t seed);
};

// Advances the estimates by `iterations` power-iteration steps and returns u^T W v.
template <typename T>
T power_iterate(const Tensor<T>& weight, SpectralState<T>& state, int iterations);

// u^T W v with the current estimates.
template <typename T>
T spectral_norm_estimate(const Tensor<T>& weight, const SpectralState<T>& state);

// W / sigma(W) using `n_power_iters` fresh power-iteration steps. The raw weight is left untouched.
// Throws std::domain_error("degenerate weight") for an all-zero weight and on non-finite entries.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralState<T>& state, int n_power_iters);

// Differentiable W / sigma(W). With update the state advances first; sigma is then treated as a function of W
// through u^T W v with u, v held fixed.
template <typename T>
Var<T> spectral_normalized(const Var<T>& weight, SpectralState<T>& state, bool update, int n_power_iters = 1);

}  // namespace saalae::nn
