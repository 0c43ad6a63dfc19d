#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "saalae/nn/module.hpp"
#include "saalae/nn/spectral.hpp"
#include "saalae/ops.hpp"

namespace saalae::nn {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

using Rng = std::mt19937_64;

// Dense layer y = x W^T + b, optionally spectrally normalized.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features, bool spectral_norm, Rng& rng, bool bias = true,
         double init_gain = 1.0);

  Var<T> forward(const Var<T>& x, Pass pass);
  // Weight as used in the forward pass (normalized when spectral norm is on), without advancing state.
  Tensor<T> effective_weight() const;

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }
  bool spectral_norm() const { return spectral_norm_; }
  SpectralState<T>& spectral_state() { return sn_; }
  std::int64_t in_features() const { return in_; }
  std::int64_t out_features() const { return out_; }

  void audit(const std::string& prefix, std::vector<LayerAudit>& out) const override;

 private:
  std::int64_t in_, out_;
  bool spectral_norm_;
  Var<T> weight_, bias_;
  SpectralState<T> sn_;
};

// Stride-1, same-padding convolution, optionally spectrally normalized.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, bool spectral_norm, Rng& rng,
         bool bias = true, double init_gain = 1.0);

  Var<T> forward(const Var<T>& x, Pass pass);
  Tensor<T> effective_weight() const;

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }
  std::int64_t in_channels() const { return in_; }
  std::int64_t out_channels() const { return out_; }

  void audit(const std::string& prefix, std::vector<LayerAudit>& out) const override;

 private:
  std::int64_t in_, out_, kernel_;
  bool spectral_norm_;
  Var<T> weight_, bias_;
  SpectralState<T> sn_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(std::int64_t channels);

  Var<T> forward(const Var<T>& x, Pass pass);

  const Var<T>& gamma() const { return gamma_; }
  const Var<T>& beta() const { return beta_; }
  const ops::BatchNormStats<T>& stats() const { return stats_; }

  void audit(const std::string& prefix, std::vector<LayerAudit>& out) const override;

 private:
  Var<T> gamma_, beta_;
  ops::BatchNormStats<T> stats_;
};

// Self-attention over all spatial positions of a feature map:
//   y = x + gamma * out_proj(attend(query(x), key(x), value(x)))
// gamma starts at 0, so a fresh block is the identity.
template <typename T>
class SelfAttention2d : public Module<T> {
 public:
  SelfAttention2d(std::int64_t channels, std::int64_t reduction_ratio, bool spectral_norm, Rng& rng);

  Var<T> forward(const Var<T>& x, Pass pass);
  // (B, N, N) row-stochastic attention weights for x.
  Tensor<T> attention_map(const Tensor<T>& x);

  const Var<T>& gamma() const { return gamma_; }
  std::int64_t channels() const { return channels_; }
  std::int64_t key_channels() const { return key_channels_; }
  std::int64_t value_channels() const { return value_channels_; }

 private:
  std::int64_t channels_, key_channels_, value_channels_;
  Conv2d<T>* query_;
  Conv2d<T>* key_;
  Conv2d<T>* value_;
  Conv2d<T>* out_;
  Var<T> gamma_;
};

enum class Resample { down, up, same };

struct ResidualOptions {
  bool batch_norm = false;
  bool spectral_norm = false;
  std::int64_t style_dim = 0;  // > 0: the block input is modulated by an affine map of a latent
  bool noise = false;          // additive per-pixel noise with a learned scalar strength
};

// skip(x) + conv_path(x). Down: pooling after the first conv; up: upsampling after the first conv.
// The skip path is an optional resample plus a 1x1 projection when channel counts differ.
template <typename T>
class ResidualBlock : public Module<T> {
 public:
  ResidualBlock(std::int64_t in_channels, std::int64_t out_channels, Resample mode, ResidualOptions options, Rng& rng);

  // style: (B, style_dim) latent when modulated; noise: (B, C_in, H, W) standard normal draws or null.
  Var<T> forward(const Var<T>& x, Pass pass, const Var<T>& style = nullptr, const Tensor<T>* noise = nullptr);

  Conv2d<T>& conv1() { return *conv1_; }
  Conv2d<T>& conv2() { return *conv2_; }
  Resample mode() const { return mode_; }
  std::int64_t in_channels() const { return in_; }
  std::int64_t out_channels() const { return out_; }

 private:
  std::int64_t in_, out_;
  Resample mode_;
  ResidualOptions options_;
  Linear<T>* style_ = nullptr;
  BatchNorm2d<T>* bn1_ = nullptr;
  BatchNorm2d<T>* bn2_ = nullptr;
  Conv2d<T>* conv1_;
  Conv2d<T>* conv2_;
  Conv2d<T>* skip_ = nullptr;
  Var<T> noise_strength_;
};

}  // namespace saalae::nn
