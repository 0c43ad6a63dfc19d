#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "saalae/nn/layers.hpp"

namespace saalae::model {

enum class StyleInjection { stem, per_block };

struct ArchitectureConfig {
  int latent_dim = 64;
  int resolution = 64;
  int base_channels = 8;
  // One entry per feature-map level, from full resolution down to 4x4. Empty selects {1, 2, 4, 4, ...}.
  std::vector<int> channel_multipliers;
  // Feature-map sizes after which a self-attention block follows, in both G and E.
  std::vector<int> attention_resolutions{16};
  int attention_reduction = 8;
  int mapper_layers = 4;
  bool noise_injection = false;
  StyleInjection style_injection = StyleInjection::per_block;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  int levels() const;                        // number of feature-map levels: resolution, ..., 4
  std::vector<int> stage_resolutions() const;  // ascending: 4, 8, ..., resolution
  int channels_at(int feature_resolution) const;
  bool has_attention_at(int feature_resolution) const;

  nlohmann::json to_json() const;
  static ArchitectureConfig from_json(const nlohmann::json& j);
  // Stable hex digest of the canonical JSON encoding.
  std::string hash() const;
};

// z -> w: fully connected stack.
template <typename T>
class Mapper : public nn::Module<T> {
 public:
  Mapper(const ArchitectureConfig& config, nn::Rng& rng);
  Var<T> forward(const Var<T>& z, nn::Pass pass);

 private:
  std::vector<nn::Linear<T>*> layers_;
};

// w -> image in [0, 1]. Residual upsampling stages with batch normalization, optional self-attention.
template <typename T>
class Generator : public nn::Module<T> {
 public:
  Generator(const ArchitectureConfig& config, nn::Rng& rng);
  // noise_seed draws per-block additive noise when noise injection is configured.
  Var<T> forward(const Var<T>& w, nn::Pass pass, std::optional<std::uint64_t> noise_seed = std::nullopt);

  std::size_t attention_count() const;
  std::vector<int> attention_feature_sizes() const;

 private:
  ArchitectureConfig config_;
  nn::Linear<T>* stem_;
  std::vector<nn::ResidualBlock<T>*> blocks_;
  std::vector<nn::SelfAttention2d<T>*> attention_;  // parallel to blocks_, null where absent
  nn::Conv2d<T>* to_image_;
};

// image -> w. Residual downsampling stages, spectral normalization everywhere, optional self-attention.
template <typename T>
class Encoder : public nn::Module<T> {
 public:
  Encoder(const ArchitectureConfig& config, nn::Rng& rng);
  Var<T> forward(const Var<T>& x, nn::Pass pass);

  std::size_t attention_count() const;
  std::vector<int> attention_feature_sizes() const;

 private:
  ArchitectureConfig config_;
  nn::Conv2d<T>* stem_;
  std::vector<nn::ResidualBlock<T>*> blocks_;
  std::vector<nn::SelfAttention2d<T>*> attention_;
  nn::Linear<T>* head_;
};

// w -> unbounded real score.
template <typename T>
class Discriminator : public nn::Module<T> {
 public:
  Discriminator(const ArchitectureConfig& config, nn::Rng& rng);
  Var<T> forward(const Var<T>& w, nn::Pass pass);

 private:
  std::vector<nn::Linear<T>*> layers_;
};

template <typename T>
struct ModelBundle {
  ArchitectureConfig config;
  std::unique_ptr<Mapper<T>> mapper;
  std::unique_ptr<Generator<T>> generator;
  std::unique_ptr<Encoder<T>> encoder;
  std::unique_ptr<Discriminator<T>> discriminator;

  // ("M", mapper), ("G", generator), ("E", encoder), ("D", discriminator)
  std::vector<std::pair<std::string, nn::Module<T>*>> networks() const;
  nn::Module<T>& network(const std::string& name) const;
  // Prefixed by network name: "G.blocks.0.conv1.weight".
  std::vector<std::pair<std::string, Var<T>>> named_parameters() const;
  std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() const;
};

template <typename T>
ModelBundle<T> build(const ArchitectureConfig& config, std::uint64_t seed);

// Inference entry points: no tape, frozen statistics, read-only on the bundle.
template <typename T>
Tensor<T> map_latent(const ModelBundle<T>& bundle, const Tensor<T>& z);
template <typename T>
Tensor<T> generate(const ModelBundle<T>& bundle, const Tensor<T>& w,
                   std::optional<std::uint64_t> noise_seed = std::nullopt);
template <typename T>
Tensor<T> encode(const ModelBundle<T>& bundle, const Tensor<T>& images);
template <typename T>
Tensor<T> discriminate(const ModelBundle<T>& bundle, const Tensor<T>& w);

// Every linear/conv/normalization layer of one network.
template <typename T>
std::vector<nn::LayerAudit> audit(const nn::Module<T>& network);

// Standard normal latents (n, latent_dim) from a seeded stream.
template <typename T>
Tensor<T> sample_noise(std::int64_t n, int latent_dim, std::uint64_t seed);

}  // namespace saalae::model
