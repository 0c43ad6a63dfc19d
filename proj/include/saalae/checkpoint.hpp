#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "saalae/model.hpp"

namespace saalae::io {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

// Named array in an archive. Values are widened to double in memory; dtype records the stored width.
struct NamedArray {
  enum class DType : std::uint8_t { f32 = 1, f64 = 2 };
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;
};

// Single-file archive: magic, format version, JSON manifest text, then named little-endian arrays.
struct Archive {
  nlohmann::json manifest;
  std::vector<NamedArray> arrays;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path, bool manifest_only = false);

// Manifest fields: format_version, config, config_hash, plus whatever `training` carries
// (step, epoch, best_val_fid, history, fid_extractor).
void save_checkpoint(const std::filesystem::path& path, const model::ModelBundle<float>& bundle,
                     const nlohmann::json& training = nlohmann::json::object());

struct LoadedCheckpoint {
  model::ModelBundle<float> bundle;
  nlohmann::json manifest;
};

// Validates format version, config hash and every array name/shape.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Header and manifest only, with the same version/hash validation.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

// Copies all parameters and buffers from one bundle into another with identical architecture.
template <typename From, typename To>
void copy_weights(const model::ModelBundle<From>& from, model::ModelBundle<To>& to);

}  // namespace saalae::io
