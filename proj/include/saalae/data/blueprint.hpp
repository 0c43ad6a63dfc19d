#pragma once

#include <array>
#include <cstdint>
#include <random>

#include <json.hpp>

#include "saalae/data/image.hpp"

namespace saalae::data {

inline constexpr int kFamilyCount = 4;

// Parameters of one synthetic cross-section drawing. Geometry is in pixels of a
// resolution x resolution canvas. The outer contour is a rotated rounded rectangle; the
// inner contour is its inward offset by wall_gap, so the wall thickness is constant.
struct BlueprintSpec {
  int family = 0;  // F0..F3; neighbouring families differ by a small parameter step
  int resolution = 64;
  double center_x = 32, center_y = 32;
  double half_width = 22, half_height = 20;
  double corner_radius = 8;
  double rotation = 0;  // radians
  double wall_gap = 6;  // pixels between outer and inner contour
  int strut_count = 3;
  double strut_phase = 0;  // radians of the first strut
  bool hatch = true;
  double hatch_x = 32, hatch_y = 32, hatch_radius = 5;  // filled disc inside the inner contour
  double stroke_width = 1.5;
  double jitter = 0.05;  // radians of per-strut angular jitter drawn from the image seed

  // Throws std::invalid_argument when the inner contour would self-intersect or leave the outer one.
  void validate() const;

  // Family-defining parameters: aspect, corner fraction, strut count, hatch offset.
  std::array<double, 4> shape_parameters() const;

  nlohmann::json to_json() const;
  static BlueprintSpec from_json(const nlohmann::json& j);
};

// Nominal (jitter-free) spec of a family at a resolution.
BlueprintSpec family_base(int family, int resolution);

// Family nominal spec plus bounded random variation.
BlueprintSpec sample_spec(int family, int resolution, std::mt19937_64& rng);

// Euclidean distance between shape_parameters().
double parameter_distance(const BlueprintSpec& a, const BlueprintSpec& b);

// Ink coverage per drawing element, each in [0, 1] (1 = fully inked).
struct BlueprintLayers {
  Image outer, inner, struts, hatch;
};

BlueprintLayers render_layers(const BlueprintSpec& spec, std::uint64_t seed);

// Dark strokes on a light background; deterministic in (spec, seed).
Image generate_blueprint(const BlueprintSpec& spec, std::uint64_t seed);

// Signed distance to the outer contour (negative inside).
double outer_contour_distance(const BlueprintSpec& spec, double x, double y);

}  // namespace saalae::data
