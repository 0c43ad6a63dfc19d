#include "saalae/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace saalae::model {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
void check_latents(const Tensor<T>& w, int latent_dim, const char* what) {
  if (w.rank() != 2 || w.dim(1) != latent_dim) {
    throw std::invalid_argument(std::string(what) + ": expected (n, " + std::to_string(latent_dim) +
                                ") latents, got " + shape_to_string(w.shape()));
  }
  if (!w.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite latent input");
}

}  // namespace

// ---- ArchitectureConfig ----

void ArchitectureConfig::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (resolution < 8 || resolution > 256 || !is_power_of_two(resolution)) {
    throw std::invalid_argument("resolution must be a power of two in [8, 256], got " + std::to_string(resolution));
  }
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (!channel_multipliers.empty() && static_cast<int>(channel_multipliers.size()) != levels()) {
    throw std::invalid_argument("channel_multipliers needs " + std::to_string(levels()) + " entries for resolution " +
                                std::to_string(resolution));
  }
  for (int m : channel_multipliers)
    if (m < 1) throw std::invalid_argument("channel_multipliers entries must be >= 1");
  if (mapper_layers < 1) throw std::invalid_argument("mapper_layers must be >= 1");
  if (attention_reduction < 1) throw std::invalid_argument("attention_reduction must be >= 1");
  for (int r : attention_resolutions) {
    // G produces 8..resolution after its blocks, E produces resolution/2..4; both must host the block.
    if (!is_power_of_two(r) || r < 8 || r > resolution / 2) {
      throw std::invalid_argument("attention resolution " + std::to_string(r) +
                                  " is not a stage output of both generator and encoder for resolution " +
                                  std::to_string(resolution));
    }
    if (channels_at(r) % attention_reduction != 0) {
      throw std::invalid_argument("attention_reduction " + std::to_string(attention_reduction) +
                                  " does not divide the " + std::to_string(channels_at(r)) + " channels at " +
                                  std::to_string(r) + "x" + std::to_string(r));
    }
  }
}

int ArchitectureConfig::levels() const { return log2i(resolution) - 1; }

std::vector<int> ArchitectureConfig::stage_resolutions() const {
  std::vector<int> out;
  for (int r = 4; r <= resolution; r *= 2) out.push_back(r);
  return out;
}

int ArchitectureConfig::channels_at(int feature_resolution) const {
  const int level = log2i(resolution) - log2i(feature_resolution);
  if (level < 0 || level >= levels()) {
    throw std::invalid_argument("no feature level at resolution " + std::to_string(feature_resolution));
  }
  const int mult = channel_multipliers.empty() ? std::min(1 << level, 4) : channel_multipliers[level];
  return base_channels * mult;
}

bool ArchitectureConfig::has_attention_at(int feature_resolution) const {
  return std::find(attention_resolutions.begin(), attention_resolutions.end(), feature_resolution) !=
         attention_resolutions.end();
}

nlohmann::json ArchitectureConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"resolution", resolution},
          {"base_channels", base_channels},
          {"channel_multipliers", channel_multipliers},
          {"attention_resolutions", attention_resolutions},
          {"attention_reduction", attention_reduction},
          {"mapper_layers", mapper_layers},
          {"noise_injection", noise_injection},
          {"style_injection", style_injection == StyleInjection::stem ? "stem" : "per_block"}};
}

ArchitectureConfig ArchitectureConfig::from_json(const nlohmann::json& j) {
  ArchitectureConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.resolution = j.value("resolution", c.resolution);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_multipliers = j.value("channel_multipliers", c.channel_multipliers);
  c.attention_resolutions = j.value("attention_resolutions", c.attention_resolutions);
  c.attention_reduction = j.value("attention_reduction", c.attention_reduction);
  c.mapper_layers = j.value("mapper_layers", c.mapper_layers);
  c.noise_injection = j.value("noise_injection", c.noise_injection);
  const std::string style = j.value("style_injection", std::string("per_block"));
  if (style == "stem") {
    c.style_injection = StyleInjection::stem;
  } else if (style == "per_block") {
    c.style_injection = StyleInjection::per_block;
  } else {
    throw std::invalid_argument("unknown style_injection '" + style + "'");
  }
  c.validate();
  return c;
}

std::string ArchitectureConfig::hash() const {
  const std::string canonical = to_json().dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical.data(), canonical.size())));
  return buf;
}

// ---- Mapper ----

template <typename T>
Mapper<T>::Mapper(const ArchitectureConfig& config, nn::Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + nn::kLeakySlope * nn::kLeakySlope));
  for (int i = 0; i < config.mapper_layers; ++i) {
    const bool last = i + 1 == config.mapper_layers;
    layers_.push_back(&this->add_child(
        "layers." + std::to_string(i),
        std::make_unique<nn::Linear<T>>(config.latent_dim, config.latent_dim, false, rng, true, last ? 1.0 : gain)));
  }
}

template <typename T>
Var<T> Mapper<T>::forward(const Var<T>& z, nn::Pass pass) {
  Var<T> h = z;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, pass);
    if (i + 1 < layers_.size()) h = ops::leaky_relu(h, T(nn::kLeakySlope));
  }
  return h;
}

// ---- Generator ----

template <typename T>
Generator<T>::Generator(const ArchitectureConfig& config, nn::Rng& rng) : config_(config) {
  const int c4 = config.channels_at(4);
  stem_ = &this->add_child("stem", std::make_unique<nn::Linear<T>>(config.latent_dim, c4 * 16, false, rng));
  const bool per_block = config.style_injection == StyleInjection::per_block;
  int i = 0;
  for (int r = 4; r < config.resolution; r *= 2, ++i) {
    nn::ResidualOptions opt;
    opt.batch_norm = true;
    opt.style_dim = per_block ? config.latent_dim : 0;
    opt.noise = config.noise_injection;
    blocks_.push_back(&this->add_child(
        "blocks." + std::to_string(i),
        std::make_unique<nn::ResidualBlock<T>>(config.channels_at(r), config.channels_at(2 * r), nn::Resample::up, opt,
                                               rng)));
    nn::SelfAttention2d<T>* attn = nullptr;
    if (config.has_attention_at(2 * r)) {
      attn = &this->add_child("attention." + std::to_string(i),
                              std::make_unique<nn::SelfAttention2d<T>>(config.channels_at(2 * r),
                                                                       config.attention_reduction, false, rng));
    }
    attention_.push_back(attn);
  }
  to_image_ = &this->add_child("to_image",
                               std::make_unique<nn::Conv2d<T>>(config.channels_at(config.resolution), 1, 3, false, rng));
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& w, nn::Pass pass, std::optional<std::uint64_t> noise_seed) {
  const std::int64_t batch = w->value.dim(0);
  const int c4 = config_.channels_at(4);
  Var<T> h = ops::reshape(stem_->forward(w, pass), {batch, c4, 4, 4});
  std::optional<nn::Rng> noise_rng;
  if (config_.noise_injection && noise_seed) noise_rng.emplace(*noise_seed);
  const bool per_block = config_.style_injection == StyleInjection::per_block;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    std::optional<Tensor<T>> noise;
    if (noise_rng) {
      noise.emplace(h->value.shape());
      std::normal_distribution<double> nd(0.0, 1.0);
      for (auto& v : noise->storage()) v = static_cast<T>(nd(*noise_rng));
    }
    h = blocks_[i]->forward(h, pass, per_block ? w : nullptr, noise ? &*noise : nullptr);
    if (attention_[i]) h = attention_[i]->forward(h, pass);
  }
  h = ops::leaky_relu(h, T(nn::kLeakySlope));
  return ops::sigmoid(to_image_->forward(h, pass));
}

template <typename T>
std::size_t Generator<T>::attention_count() const {
  return static_cast<std::size_t>(std::count_if(attention_.begin(), attention_.end(), [](auto* a) { return a; }));
}

template <typename T>
std::vector<int> Generator<T>::attention_feature_sizes() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < attention_.size(); ++i)
    if (attention_[i]) out.push_back(8 << i);
  return out;
}

// ---- Encoder ----

template <typename T>
Encoder<T>::Encoder(const ArchitectureConfig& config, nn::Rng& rng) : config_(config) {
  stem_ = &this->add_child("stem",
                           std::make_unique<nn::Conv2d<T>>(1, config.channels_at(config.resolution), 1, true, rng));
  int i = 0;
  for (int r = config.resolution; r > 4; r /= 2, ++i) {
    nn::ResidualOptions opt;
    opt.spectral_norm = true;
    blocks_.push_back(&this->add_child(
        "blocks." + std::to_string(i),
        std::make_unique<nn::ResidualBlock<T>>(config.channels_at(r), config.channels_at(r / 2), nn::Resample::down,
                                               opt, rng)));
    nn::SelfAttention2d<T>* attn = nullptr;
    if (config.has_attention_at(r / 2)) {
      attn = &this->add_child("attention." + std::to_string(i),
                              std::make_unique<nn::SelfAttention2d<T>>(config.channels_at(r / 2),
                                                                       config.attention_reduction, true, rng));
    }
    attention_.push_back(attn);
  }
  head_ = &this->add_child(
      "head", std::make_unique<nn::Linear<T>>(config.channels_at(4) * 16, config.latent_dim, true, rng));
}

template <typename T>
Var<T> Encoder<T>::forward(const Var<T>& x, nn::Pass pass) {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != config_.resolution || s[3] != config_.resolution) {
    throw std::invalid_argument("encoder expects (n, 1, " + std::to_string(config_.resolution) + ", " +
                                std::to_string(config_.resolution) + ") images, got " + shape_to_string(s));
  }
  Var<T> h = stem_->forward(x, pass);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i]->forward(h, pass);
    if (attention_[i]) h = attention_[i]->forward(h, pass);
  }
  h = ops::leaky_relu(h, T(nn::kLeakySlope));
  h = ops::reshape(h, {s[0], h->value.size() / s[0]});
  return head_->forward(h, pass);
}

template <typename T>
std::size_t Encoder<T>::attention_count() const {
  return static_cast<std::size_t>(std::count_if(attention_.begin(), attention_.end(), [](auto* a) { return a; }));
}

template <typename T>
std::vector<int> Encoder<T>::attention_feature_sizes() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < attention_.size(); ++i)
    if (attention_[i]) out.push_back(config_.resolution >> (i + 1));
  return out;
}

// ---- Discriminator ----

template <typename T>
Discriminator<T>::Discriminator(const ArchitectureConfig& config, nn::Rng& rng) {
  const std::int64_t d = config.latent_dim;
  layers_.push_back(&this->add_child("layers.0", std::make_unique<nn::Linear<T>>(d, d, true, rng)));
  layers_.push_back(&this->add_child("layers.1", std::make_unique<nn::Linear<T>>(d, d, true, rng)));
  layers_.push_back(&this->add_child("layers.2", std::make_unique<nn::Linear<T>>(d, 1, true, rng)));
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& w, nn::Pass pass) {
  Var<T> h = w;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, pass);
    if (i + 1 < layers_.size()) h = ops::leaky_relu(h, T(nn::kLeakySlope));
  }
  return h;
}

// ---- ModelBundle ----

template <typename T>
std::vector<std::pair<std::string, nn::Module<T>*>> ModelBundle<T>::networks() const {
  return {{"M", mapper.get()}, {"G", generator.get()}, {"E", encoder.get()}, {"D", discriminator.get()}};
}

template <typename T>
nn::Module<T>& ModelBundle<T>::network(const std::string& name) const {
  for (auto& [n, m] : networks())
    if (n == name) return *m;
  throw std::invalid_argument("unknown network '" + name + "'");
}

template <typename T>
std::vector<std::pair<std::string, Var<T>>> ModelBundle<T>::named_parameters() const {
  std::vector<std::pair<std::string, Var<T>>> out;
  for (auto& [n, m] : networks()) {
    auto p = m->named_parameters(n);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelBundle<T>::named_buffers() const {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& [n, m] : networks()) {
    auto b = m->named_buffers(n);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

template <typename T>
ModelBundle<T> build(const ArchitectureConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle<T> b;
  b.config = config;
  nn::Rng rm(splitmix(seed ^ 0x4d)), rg(splitmix(seed ^ 0x47)), re(splitmix(seed ^ 0x45)), rd(splitmix(seed ^ 0x44));
  b.mapper = std::make_unique<Mapper<T>>(config, rm);
  b.generator = std::make_unique<Generator<T>>(config, rg);
  b.encoder = std::make_unique<Encoder<T>>(config, re);
  b.discriminator = std::make_unique<Discriminator<T>>(config, rd);
  return b;
}

template <typename T>
Tensor<T> map_latent(const ModelBundle<T>& bundle, const Tensor<T>& z) {
  check_latents(z, bundle.config.latent_dim, "map_latent");
  NoGradGuard guard;
  return bundle.mapper->forward(constant(z), nn::Pass::eval())->value;
}

template <typename T>
Tensor<T> generate(const ModelBundle<T>& bundle, const Tensor<T>& w, std::optional<std::uint64_t> noise_seed) {
  check_latents(w, bundle.config.latent_dim, "generate");
  NoGradGuard guard;
  return bundle.generator->forward(constant(w), nn::Pass::eval(), noise_seed)->value;
}

template <typename T>
Tensor<T> encode(const ModelBundle<T>& bundle, const Tensor<T>& images) {
  const int r = bundle.config.resolution;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != r || images.dim(3) != r) {
    throw std::invalid_argument("encode: expected (n, 1, " + std::to_string(r) + ", " + std::to_string(r) +
                                ") images, got " + shape_to_string(images.shape()));
  }
  for (auto v : images.storage()) {
    if (!(v >= T(-1e-6) && v <= T(1 + 1e-6))) throw std::invalid_argument("encode: pixel values must lie in [0, 1]");
  }
  NoGradGuard guard;
  return bundle.encoder->forward(constant(images), nn::Pass::eval())->value;
}

template <typename T>
Tensor<T> discriminate(const ModelBundle<T>& bundle, const Tensor<T>& w) {
  check_latents(w, bundle.config.latent_dim, "discriminate");
  NoGradGuard guard;
  return bundle.discriminator->forward(constant(w), nn::Pass::eval())->value;
}

template <typename T>
std::vector<nn::LayerAudit> audit(const nn::Module<T>& network) {
  std::vector<nn::LayerAudit> out;
  network.audit("", out);
  return out;
}

template <typename T>
Tensor<T> sample_noise(std::int64_t n, int latent_dim, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  nn::Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<T> z({n, latent_dim});
  for (auto& v : z.storage()) v = static_cast<T>(nd(rng));
  return z;
}

#define SAALAE_INSTANTIATE(T)                                                                          \
  template class Mapper<T>;                                                                            \
  template class Generator<T>;                                                                         \
  template class Encoder<T>;                                                                           \
  template class Discriminator<T>;                                                                     \
  template struct ModelBundle<T>;                                                                      \
  template ModelBundle<T> build(const ArchitectureConfig&, std::uint64_t);                             \
  template Tensor<T> map_latent(const ModelBundle<T>&, const Tensor<T>&);                              \
  template Tensor<T> generate(const ModelBundle<T>&, const Tensor<T>&, std::optional<std::uint64_t>);  \
  template Tensor<T> encode(const ModelBundle<T>&, const Tensor<T>&);                                  \
  template Tensor<T> discriminate(const ModelBundle<T>&, const Tensor<T>&);                            \
  template std::vector<nn::LayerAudit> audit(const nn::Module<T>&);                                    \
  template Tensor<T> sample_noise(std::int64_t, int, std::uint64_t);

SAALAE_INSTANTIATE(float)
SAALAE_INSTANTIATE(double)
#undef SAALAE_INSTANTIATE

}  // namespace saalae::model
