#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "saalae/checkpoint.hpp"
#include "saalae/model.hpp"

using namespace saalae;
using model::ArchitectureConfig;
namespace fs = std::filesystem;

namespace {

std::int64_t conv(std::int64_t in, std::int64_t out, std::int64_t k, bool bias = true) {
  return out * in * k * k + (bias ? out : 0);
}
std::int64_t linear(std::int64_t in, std::int64_t out) { return in * out + out; }

std::int64_t residual(std::int64_t in, std::int64_t out, bool down, std::int64_t style_dim, bool bn, bool noise) {
  const std::int64_t mid = down ? in : out;
  std::int64_t n = conv(in, mid, 3) + conv(mid, out, 3);
  if (in != out) n += conv(in, out, 1);
  if (style_dim > 0) n += linear(style_dim, 2 * in);
  if (bn) n += 2 * in + 2 * mid;
  if (noise) n += 1;
  return n;
}

std::int64_t attention(std::int64_t c, std::int64_t reduction) {
  const std::int64_t ck = c / reduction, cv = c / 2;
  return 2 * conv(c, ck, 1, false) + conv(c, cv, 1, false) + conv(cv, c, 1, false) + 1;
}

// Closed-form counts from the layer layout.
std::int64_t generator_count(const ArchitectureConfig& c) {
  std::int64_t n = linear(c.latent_dim, c.channels_at(4) * 16);
  for (int r = 4; r < c.resolution; r *= 2) {
    n += residual(c.channels_at(r), c.channels_at(2 * r), false,
                  c.style_injection == model::StyleInjection::per_block ? c.latent_dim : 0, true, c.noise_injection);
    if (c.has_attention_at(2 * r)) n += attention(c.channels_at(2 * r), c.attention_reduction);
  }
  return n + conv(c.channels_at(c.resolution), 1, 3);
}

std::int64_t encoder_count(const ArchitectureConfig& c) {
  std::int64_t n = conv(1, c.channels_at(c.resolution), 1);
  for (int r = c.resolution; r > 4; r /= 2) {
    n += residual(c.channels_at(r), c.channels_at(r / 2), true, 0, false, false);
    if (c.has_attention_at(r / 2)) n += attention(c.channels_at(r / 2), c.attention_reduction);
  }
  return n + linear(c.channels_at(4) * 16, c.latent_dim);
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("saalae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Architecture, ParameterCountsMatchLayout) {
  ArchitectureConfig c;
  const auto b = model::build<float>(c, 1);
  EXPECT_EQ(b.mapper->parameter_count(), c.mapper_layers * linear(c.latent_dim, c.latent_dim));
  EXPECT_EQ(b.discriminator->parameter_count(), 2 * linear(64, 64) + linear(64, 1));
  EXPECT_EQ(b.generator->parameter_count(), generator_count(c));
  EXPECT_EQ(b.encoder->parameter_count(), encoder_count(c));
  // Default desk-scale configuration, frozen.
  EXPECT_EQ(b.mapper->parameter_count(), 16640);
  EXPECT_EQ(b.generator->parameter_count(), 95938);
  EXPECT_EQ(b.encoder->parameter_count(), 80521);
  EXPECT_EQ(b.discriminator->parameter_count(), 8385);
}

TEST(Architecture, CountsFollowConfigVariants) {
  ArchitectureConfig c;
  c.resolution = 32;
  c.latent_dim = 16;
  c.base_channels = 4;
  c.attention_resolutions = {8, 16};
  c.attention_reduction = 4;
  c.noise_injection = true;
  c.style_injection = model::StyleInjection::stem;
  const auto b = model::build<double>(c, 2);
  EXPECT_EQ(b.generator->parameter_count(), generator_count(c));
  EXPECT_EQ(b.encoder->parameter_count(), encoder_count(c));
  EXPECT_EQ(b.generator->attention_feature_sizes(), (std::vector<int>{8, 16}));
  EXPECT_EQ(b.encoder->attention_feature_sizes(), (std::vector<int>{16, 8}));
}

TEST(Architecture, AttentionAtSixteenByDefault) {
  const auto b = model::build<float>(ArchitectureConfig{}, 1);
  EXPECT_EQ(b.generator->attention_feature_sizes(), std::vector<int>{16});
  EXPECT_EQ(b.encoder->attention_feature_sizes(), std::vector<int>{16});
}

TEST(Architecture, NormalizationPlacement) {
  const auto b = model::build<float>(ArchitectureConfig{}, 1);
  for (const char* net : {"E", "D"}) {
    for (const auto& layer : model::audit(b.network(net))) {
      EXPECT_NE(layer.kind, "batch_norm") << layer.name;
      EXPECT_TRUE(layer.spectral_norm) << net << " " << layer.name;
    }
  }
  int bn = 0;
  for (const auto& layer : model::audit(b.network("G"))) {
    EXPECT_FALSE(layer.spectral_norm) << layer.name;
    bn += layer.kind == "batch_norm";
  }
  EXPECT_EQ(bn, 2 * 4);  // two per upsampling block, 4 -> 64
  for (const auto& layer : model::audit(b.network("M"))) EXPECT_FALSE(layer.spectral_norm);
}

TEST(Architecture, ValidationNamesField) {
  ArchitectureConfig c;
  c.resolution = 48;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.attention_resolutions = {128};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.attention_reduction = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.channel_multipliers = {1, 2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Architecture, JsonRoundTripAndHash) {
  ArchitectureConfig c;
  c.latent_dim = 32;
  c.attention_resolutions = {8};
  const auto back = ArchitectureConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_NE(ArchitectureConfig{}.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
}

TEST(Model, ShapesAndRanges) {
  ArchitectureConfig c;
  c.resolution = 32;
  const auto b = model::build<float>(c, 3);
  const auto z = model::sample_noise<float>(3, c.latent_dim, 1);
  const auto w = model::map_latent(b, z);
  EXPECT_EQ(w.shape(), (Shape{3, 64}));
  const auto x = model::generate(b, w);
  EXPECT_EQ(x.shape(), (Shape{3, 1, 32, 32}));
  for (float v : x.values()) EXPECT_TRUE(v > 0.0f && v < 1.0f);
  EXPECT_EQ(model::encode(b, x).shape(), (Shape{3, 64}));
  EXPECT_EQ(model::discriminate(b, model::encode(b, x)).shape(), (Shape{3, 1}));
  EXPECT_THROW(model::encode(b, Tensor<float>({1, 1, 16, 16})), std::invalid_argument);
  EXPECT_THROW(model::encode(b, Tensor<float>({1, 1, 32, 32}, 2.0f)), std::invalid_argument);
  EXPECT_THROW(model::generate(b, Tensor<float>({1, 10})), std::invalid_argument);
}

TEST(Model, SeededBuildIsDeterministic) {
  const auto a = model::build<float>(ArchitectureConfig{}, 9), b = model::build<float>(ArchitectureConfig{}, 9),
             c = model::build<float>(ArchitectureConfig{}, 10);
  for (const char* n : {"M", "G", "E", "D"}) {
    EXPECT_EQ(a.network(n).checksum(true), b.network(n).checksum(true));
    EXPECT_NE(a.network(n).checksum(), c.network(n).checksum());
  }
  EXPECT_EQ(model::sample_noise<float>(4, 8, 5), model::sample_noise<float>(4, 8, 5));
  EXPECT_NE(model::sample_noise<float>(4, 8, 5), model::sample_noise<float>(4, 8, 6));
}

TEST(Model, InferenceLeavesStateUntouched) {
  ArchitectureConfig c;
  c.resolution = 16;
  c.attention_resolutions = {8};
  const auto b = model::build<float>(c, 4);
  std::vector<std::uint64_t> before;
  for (const auto& [n, net] : b.networks()) before.push_back(net->checksum(true));
  const auto w = model::map_latent(b, model::sample_noise<float>(2, c.latent_dim, 1));
  model::discriminate(b, model::encode(b, model::generate(b, w)));
  std::size_t i = 0;
  for (const auto& [n, net] : b.networks()) EXPECT_EQ(net->checksum(true), before[i++]) << n;
  for (const auto& [n, p] : b.named_parameters()) EXPECT_FALSE(p->has_grad()) << n;
}

TEST(Model, BatchCompositionDoesNotChangeEvalOutputs) {
  ArchitectureConfig c;
  c.resolution = 16;
  c.attention_resolutions = {8};
  const auto b = model::build<double>(c, 5);
  const auto w = model::map_latent(b, model::sample_noise<double>(4, c.latent_dim, 2));
  const auto all = model::generate(b, w);
  const auto one = model::generate(b, w.slice_rows(2, 3));
  EXPECT_LT(max_abs_diff(all.slice_rows(2, 3), one), 1e-12);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto dir = temp_dir("ckpt_roundtrip");
  ArchitectureConfig c;
  c.resolution = 16;
  c.attention_resolutions = {8};
  auto b = model::build<float>(c, 6);
  // Advance buffers so they differ from a fresh build.
  model::generate(b, model::map_latent(b, model::sample_noise<float>(2, c.latent_dim, 1)));
  io::save_checkpoint(dir / "a.ckpt", b, {{"step", 12}, {"best_val_fid", 3.5}});
  const auto loaded = io::load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(loaded.manifest.at("config_hash"), c.hash());
  EXPECT_EQ(loaded.manifest.at("step"), 12);
  EXPECT_EQ(loaded.manifest.at("best_val_fid"), 3.5);
  for (const auto& [n, net] : b.networks()) EXPECT_EQ(net->checksum(true), loaded.bundle.network(n).checksum(true));
  EXPECT_EQ(io::read_checkpoint_manifest(dir / "a.ckpt"), loaded.manifest);
}

TEST(Checkpoint, ArchiveKeepsDtypeShapeAndValues) {
  const auto dir = temp_dir("archive");
  io::Archive ar;
  ar.manifest = {{"kind", "test"}};
  ar.arrays.push_back({"a", io::NamedArray::DType::f64, {2, 2}, {1.0, -2.5, 1e-300, 3.0}});
  ar.arrays.push_back({"b", io::NamedArray::DType::f32, {3}, {0.5, 0.25, -8.0}});
  io::write_archive(dir / "x.bin", ar);
  const auto back = io::read_archive(dir / "x.bin");
  ASSERT_EQ(back.arrays.size(), 2u);
  EXPECT_EQ(back.manifest, ar.manifest);
  EXPECT_EQ(back.arrays[0].values, ar.arrays[0].values);
  EXPECT_EQ(back.arrays[1].shape, (Shape{3}));
  EXPECT_EQ(back.arrays[1].dtype, io::NamedArray::DType::f32);
  EXPECT_TRUE(io::read_archive(dir / "x.bin", true).arrays.empty());
  ar.arrays[0].values.pop_back();
  EXPECT_THROW(io::write_archive(dir / "y.bin", ar), std::invalid_argument);
}

TEST(Checkpoint, RejectsCorruptAndMismatchedFiles) {
  const auto dir = temp_dir("ckpt_bad");
  ArchitectureConfig c;
  c.resolution = 16;
  c.attention_resolutions = {8};
  const auto b = model::build<float>(c, 7);
  io::save_checkpoint(dir / "good.ckpt", b);

  std::ofstream(dir / "garbage.ckpt") << "not a checkpoint";
  EXPECT_THROW(io::load_checkpoint(dir / "garbage.ckpt"), std::runtime_error);
  EXPECT_THROW(io::load_checkpoint(dir / "missing.ckpt"), std::runtime_error);

  // Truncation anywhere after the header.
  const auto size = fs::file_size(dir / "good.ckpt");
  fs::copy_file(dir / "good.ckpt", dir / "short.ckpt");
  fs::resize_file(dir / "short.ckpt", size / 2);
  EXPECT_THROW(io::load_checkpoint(dir / "short.ckpt"), std::runtime_error);

  // A manifest whose hash disagrees with its config.
  auto ar = io::read_archive(dir / "good.ckpt");
  ar.manifest["config"]["latent_dim"] = 32;
  io::write_archive(dir / "hash.ckpt", ar);
  EXPECT_THROW(io::load_checkpoint(dir / "hash.ckpt"), std::runtime_error);
  EXPECT_THROW(io::read_checkpoint_manifest(dir / "hash.ckpt"), std::runtime_error);

  // Unknown format version.
  ar = io::read_archive(dir / "good.ckpt");
  ar.manifest["format_version"] = 99;
  io::write_archive(dir / "version.ckpt", ar);
  EXPECT_THROW(io::load_checkpoint(dir / "version.ckpt"), std::runtime_error);

  // Missing and misshapen arrays.
  ar = io::read_archive(dir / "good.ckpt");
  ar.arrays.pop_back();
  io::write_archive(dir / "fewer.ckpt", ar);
  EXPECT_THROW(io::load_checkpoint(dir / "fewer.ckpt"), std::runtime_error);
  ar = io::read_archive(dir / "good.ckpt");
  ar.arrays[0].shape = {static_cast<std::int64_t>(ar.arrays[0].values.size())};
  io::write_archive(dir / "shape.ckpt", ar);
  EXPECT_THROW(io::load_checkpoint(dir / "shape.ckpt"), std::runtime_error);
}

TEST(Checkpoint, CopyWeightsAcrossPrecision) {
  ArchitectureConfig c;
  c.resolution = 16;
  c.attention_resolutions = {8};
  const auto f = model::build<float>(c, 8);
  auto d = model::build<double>(c, 9);
  io::copy_weights(f, d);
  const auto fp = f.named_parameters();
  const auto dp = d.named_parameters();
  for (std::size_t i = 0; i < fp.size(); ++i) {
    for (std::int64_t k = 0; k < fp[i].second->value.size(); ++k) {
      ASSERT_EQ(double(fp[i].second->value[k]), dp[i].second->value[k]);
    }
  }
  ArchitectureConfig other = c;
  other.latent_dim = 32;
  auto mismatch = model::build<double>(other, 1);
  EXPECT_THROW(io::copy_weights(f, mismatch), std::invalid_argument);
}
