#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "saalae/data/image.hpp"

namespace saalae::data {

struct Sample {
  Image image;
  int family = -1;  // -1 when the source carries no labels
  std::string file;
};

struct DatasetSplits {
  std::vector<Sample> train, val, test;
  std::uint64_t seed = 0;
  std::string source;
  int resolution = 0;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  std::vector<Sample> all() const;
  // "train" | "val" | "test" | "all"
  std::vector<Image> images(const std::string& split) const;
};

using FamilyMix = std::array<double, 4>;
inline constexpr FamilyMix kUniformMix{0.25, 0.25, 0.25, 0.25};

struct SplitSizes {
  std::size_t train, val, test;
};

// 1000 test / 100 val once n >= 2200; below that test = n/4 and val = max(2, n/40).
SplitSizes split_sizes(std::size_t n);

// Seeded assignment of n indices to train/val/test.
std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::uint64_t seed);

// In-memory synthetic dataset, quantized to 8-bit levels so it matches its PNG form exactly.
DatasetSplits synthesize(std::size_t n, int resolution, const FamilyMix& mix, std::uint64_t seed);

// Writes images/NNNNN.png, manifest.json (file, family, seed, spec per image) and splits.json.
DatasetSplits make_dataset(std::size_t n, int resolution, const FamilyMix& mix, std::uint64_t seed,
                           const std::filesystem::path& out_dir);

struct LoadOptions {
  std::optional<int> resize;  // area-average down / bilinear up to this square size
  std::uint64_t split_seed = 0;
};

// Reads `dir/images/*.png` (or `dir/*.png`), honouring manifest.json labels and splits.json when present.
DatasetSplits load_dataset(const std::filesystem::path& dir, const LoadOptions& options = {});

// Family-0 and family-1 images from every split.
std::pair<std::vector<Image>, std::vector<Image>> baseline_pair(const DatasetSplits& dataset);

// All images of one family across splits.
std::vector<Image> family_images(const DatasetSplits& dataset, int family);

}  // namespace saalae::data
