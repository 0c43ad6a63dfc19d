#include "saalae/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace saalae::nn {

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& x : t.storage()) x = static_cast<T>(nd(rng));
  return t;
}

// Gives a fresh layer a positive sigma estimate before its first training pass.
constexpr int kInitialPowerIterations = 3;

double kaiming_gain() { return std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope)); }

}  // namespace

// ---- Linear ----

template <typename T>
Linear<T>::Linear(std::int64_t in_features, std::int64_t out_features, bool spectral_norm, Rng& rng, bool bias,
                  double init_gain)
    : in_(in_features), out_(out_features), spectral_norm_(spectral_norm) {
  if (in_features < 1 || out_features < 1) throw std::invalid_argument("Linear: feature counts must be positive");
  weight_ = this->add_parameter("weight", normal_tensor<T>({out_, in_}, init_gain / std::sqrt(double(in_)), rng));
  if (bias) bias_ = this->add_parameter("bias", Tensor<T>({out_}));
  if (spectral_norm_) {
    sn_ = SpectralState<T>::random(out_, in_, rng());
    power_iterate(weight_->value, sn_, kInitialPowerIterations);
    this->add_buffer("sn_u", &sn_.u);
    this->add_buffer("sn_v", &sn_.v);
  }
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x, Pass pass) {
  Var<T> w = spectral_norm_ ? spectral_normalized(weight_, sn_, pass.update_state) : weight_;
  return ops::linear(x, w, bias_);
}

template <typename T>
Tensor<T> Linear<T>::effective_weight() const {
  if (!spectral_norm_) return weight_->value;
  Tensor<T> w = weight_->value;
  const T sigma = spectral_norm_estimate(w, sn_);
  for (auto& v : w.storage()) v /= sigma;
  return w;
}

template <typename T>
void Linear<T>::audit(const std::string& prefix, std::vector<LayerAudit>& out) const {
  out.push_back({prefix, "linear", spectral_norm_});
}

// ---- Conv2d ----

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, bool spectral_norm,
                  Rng& rng, bool bias, double init_gain)
    : in_(in_channels), out_(out_channels), kernel_(kernel), spectral_norm_(spectral_norm) {
  if (in_ < 1 || out_ < 1) throw std::invalid_argument("Conv2d: channel counts must be positive");
  if (kernel % 2 == 0 || kernel < 1) throw std::invalid_argument("Conv2d: kernel size must be odd");
  const double fan_in = double(in_ * kernel * kernel);
  weight_ =
      this->add_parameter("weight", normal_tensor<T>({out_, in_, kernel, kernel}, init_gain / std::sqrt(fan_in), rng));
  if (bias) bias_ = this->add_parameter("bias", Tensor<T>({out_}));
  if (spectral_norm_) {
    sn_ = SpectralState<T>::random(out_, in_ * kernel * kernel, rng());
    power_iterate(weight_->value, sn_, kInitialPowerIterations);
    this->add_buffer("sn_u", &sn_.u);
    this->add_buffer("sn_v", &sn_.v);
  }
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x, Pass pass) {
  if (x->value.rank() != 4 || x->value.dim(1) != in_) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                                shape_to_string(x->value.shape()));
  }
  Var<T> w = spectral_norm_ ? spectral_normalized(weight_, sn_, pass.update_state) : weight_;
  return ops::conv2d(x, w, bias_);
}

template <typename T>
Tensor<T> Conv2d<T>::effective_weight() const {
  if (!spectral_norm_) return weight_->value;
  Tensor<T> w = weight_->value;
  const T sigma = spectral_norm_estimate(w, sn_);
  for (auto& v : w.storage()) v /= sigma;
  return w;
}

template <typename T>
void Conv2d<T>::audit(const std::string& prefix, std::vector<LayerAudit>& out) const {
  out.push_back({prefix, "conv2d", spectral_norm_});
}

// ---- BatchNorm2d ----

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::int64_t channels) {
  gamma_ = this->add_parameter("gamma", Tensor<T>({channels}, T(1)));
  beta_ = this->add_parameter("beta", Tensor<T>({channels}));
  stats_.running_mean = Tensor<T>({channels});
  stats_.running_var = Tensor<T>({channels}, T(1));
  this->add_buffer("running_mean", &stats_.running_mean);
  this->add_buffer("running_var", &stats_.running_var);
}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Var<T>& x, Pass pass) {
  return ops::batch_norm(x, gamma_, beta_, stats_, pass.batch_stats, pass.batch_stats && pass.update_state,
                         T(kBatchNormEps), T(kBatchNormMomentum));
}

template <typename T>
void BatchNorm2d<T>::audit(const std::string& prefix, std::vector<LayerAudit>& out) const {
  out.push_back({prefix, "batch_norm", false});
}

// ---- SelfAttention2d ----

template <typename T>
SelfAttention2d<T>::SelfAttention2d(std::int64_t channels, std::int64_t reduction_ratio, bool spectral_norm, Rng& rng)
    : channels_(channels) {
  if (reduction_ratio < 1 || channels % reduction_ratio != 0) {
    throw std::invalid_argument("SelfAttention2d: reduction ratio " + std::to_string(reduction_ratio) +
                                " must divide channel count " + std::to_string(channels));
  }
  key_channels_ = channels / reduction_ratio;
  value_channels_ = std::max<std::int64_t>(1, channels / 2);
  query_ = &this->add_child("query", std::make_unique<Conv2d<T>>(channels, key_channels_, 1, spectral_norm, rng, false));
  key_ = &this->add_child("key", std::make_unique<Conv2d<T>>(channels, key_channels_, 1, spectral_norm, rng, false));
  value_ =
      &this->add_child("value", std::make_unique<Conv2d<T>>(channels, value_channels_, 1, spectral_norm, rng, false));
  out_ = &this->add_child("out", std::make_unique<Conv2d<T>>(value_channels_, channels, 1, spectral_norm, rng, false));
  gamma_ = this->add_parameter("gamma", Tensor<T>({1}, T(0)));
}

template <typename T>
Var<T> SelfAttention2d<T>::forward(const Var<T>& x, Pass pass) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != channels_) {
    throw std::invalid_argument("SelfAttention2d: expected " + std::to_string(channels_) + " channels, got " +
                                shape_to_string(s));
  }
  const std::int64_t batch = s[0], n = s[2] * s[3];
  auto q = ops::reshape(query_->forward(x, pass), {batch, key_channels_, n});
  auto k = ops::reshape(key_->forward(x, pass), {batch, key_channels_, n});
  auto v = ops::reshape(value_->forward(x, pass), {batch, value_channels_, n});
  const T logit_scale = T(1) / std::sqrt(static_cast<T>(key_channels_));
  auto attended = ops::reshape(ops::attention(q, k, v, logit_scale), {batch, value_channels_, s[2], s[3]});
  return ops::add(x, ops::mul_scalar(out_->forward(attended, pass), gamma_));
}

template <typename T>
Tensor<T> SelfAttention2d<T>::attention_map(const Tensor<T>& x) {
  NoGradGuard guard;
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != channels_) throw std::invalid_argument("SelfAttention2d: channel mismatch");
  const std::int64_t batch = s[0], n = s[2] * s[3];
  auto xv = constant(x);
  auto q = query_->forward(xv, Pass::eval())->value.reshaped({batch, key_channels_, n});
  auto k = key_->forward(xv, Pass::eval())->value.reshaped({batch, key_channels_, n});
  return ops::attention_weights(q, k, T(1) / std::sqrt(static_cast<T>(key_channels_)));
}

// ---- ResidualBlock ----

template <typename T>
ResidualBlock<T>::ResidualBlock(std::int64_t in_channels, std::int64_t out_channels, Resample mode,
                                ResidualOptions options, Rng& rng)
    : in_(in_channels), out_(out_channels), mode_(mode), options_(options) {
  const bool sn = options.spectral_norm;
  const double gain = kaiming_gain();
  if (options.style_dim > 0) {
    style_ = &this->add_child("style", std::make_unique<Linear<T>>(options.style_dim, 2 * in_, sn, rng, true, 0.2));
  }
  // Down: conv1 keeps channels at the input resolution. Up/same: conv1 changes channels.
  const std::int64_t mid = mode == Resample::down ? in_ : out_;
  if (options.batch_norm) bn1_ = &this->add_child("bn1", std::make_unique<BatchNorm2d<T>>(in_));
  conv1_ = &this->add_child("conv1", std::make_unique<Conv2d<T>>(in_, mid, 3, sn, rng, true, gain));
  if (options.batch_norm) bn2_ = &this->add_child("bn2", std::make_unique<BatchNorm2d<T>>(mid));
  conv2_ = &this->add_child("conv2", std::make_unique<Conv2d<T>>(mid, out_, 3, sn, rng, true, gain));
  if (in_ != out_) skip_ = &this->add_child("skip", std::make_unique<Conv2d<T>>(in_, out_, 1, sn, rng, true, 1.0));
  if (options.noise) noise_strength_ = this->add_parameter("noise_strength", Tensor<T>({1}, T(0)));
}

template <typename T>
Var<T> ResidualBlock<T>::forward(const Var<T>& x, Pass pass, const Var<T>& style, const Tensor<T>* noise) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != in_) {
    throw std::invalid_argument("ResidualBlock: expected " + std::to_string(in_) + " input channels, got " +
                                shape_to_string(s));
  }
  if (mode_ == Resample::down && (s[2] % 2 != 0 || s[3] % 2 != 0)) {
    throw std::invalid_argument("ResidualBlock: odd spatial size " + shape_to_string(s) + " cannot be downsampled");
  }
  const T slope = T(kLeakySlope);
  Var<T> h = x;
  if (style_) {
    if (!style) throw std::invalid_argument("ResidualBlock: modulated block requires a style latent");
    h = ops::modulate(h, style_->forward(style, pass));
  }
  if (noise && noise_strength_) {
    if (noise->shape() != h->value.shape()) throw std::invalid_argument("ResidualBlock: noise shape mismatch");
    h = ops::add(h, ops::mul_scalar(constant(*noise), noise_strength_));
  }

  Var<T> a = h;
  if (bn1_) a = bn1_->forward(a, pass);
  a = ops::leaky_relu(a, slope);
  a = conv1_->forward(a, pass);
  if (mode_ == Resample::up) a = ops::upsample_nearest2(a);
  if (bn2_) a = bn2_->forward(a, pass);
  a = ops::leaky_relu(a, slope);
  if (mode_ == Resample::down) a = ops::avg_pool2(a);
  a = conv2_->forward(a, pass);

  // Resampling commutes with the 1x1 projection; project at the lower resolution.
  Var<T> skip = h;
  if (mode_ == Resample::down) skip = ops::avg_pool2(skip);
  if (skip_) skip = skip_->forward(skip, pass);
  if (mode_ == Resample::up) skip = ops::upsample_nearest2(skip);
  return ops::add(skip, a);
}

template class Linear<float>;
template class Linear<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class SelfAttention2d<float>;
template class SelfAttention2d<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;

}  // namespace saalae::nn
