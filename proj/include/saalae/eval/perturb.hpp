#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "saalae/data/image.hpp"

namespace saalae::eval {

enum class Perturbation { gaussian_noise, blur, white_blocks, swirl };

inline constexpr std::array<Perturbation, 4> kAllPerturbations{Perturbation::gaussian_noise, Perturbation::blur,
                                                                Perturbation::white_blocks, Perturbation::swirl};

std::string to_string(Perturbation kind);
Perturbation parse_perturbation(const std::string& name);

// Strength parameter for levels 1..3: noise sigma, blur sigma (px), block count, swirl strength (rad).
std::array<double, 3> level_parameters(Perturbation kind);

// Applies one perturbation with an explicit strength parameter.
data::Image perturb_image(const data::Image& image, Perturbation kind, double parameter, std::mt19937_64& rng);

// Level 1..3. Image i draws from a stream derived from (seed, kind, level, i).
std::vector<data::Image> perturb(std::span<const data::Image> images, Perturbation kind, int level, std::uint64_t seed);

// Swirl radius as a fraction of the image side.
inline constexpr double kSwirlRadiusFraction = 0.4;

// Point sampled for output location (x, y) by a swirl about (cx, cy): rotation by
// strength·(1 − r/radius)² inside the radius, identity outside.
std::pair<double, double> swirl_source(double x, double y, double cx, double cy, double radius, double strength);

// Swirl with bilinear resampling and clamped borders. strength 0 is the identity.
data::Image swirl(const data::Image& image, double cx, double cy, double radius, double strength);

data::Image gaussian_blur(const data::Image& image, double sigma);

}  // namespace saalae::eval
