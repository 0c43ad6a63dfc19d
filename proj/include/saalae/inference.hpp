#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "saalae/data/image.hpp"
#include "saalae/model.hpp"

namespace saalae::infer {

using Bundle = model::ModelBundle<float>;

inline const std::vector<double> kDefaultAlphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

// Every entry point below runs each image or latent on its own (batch of one) in eval mode,
// so a given input always takes the same arithmetic path regardless of what it is batched with.

// E(x) row by row. images: (n, 1, R, R).
Tensor<float> encode(const Bundle& bundle, const Tensor<float>& images);
// G(w) row by row. latents: (n, d).
Tensor<float> decode(const Bundle& bundle, const Tensor<float>& latents);

// G(E(x)).
Tensor<float> reconstruct(const Bundle& bundle, const Tensor<float>& images);

// z ~ N(0, I) from the seeded stream, then G(M(z)).
Tensor<float> sample_random(const Bundle& bundle, std::uint64_t z_seed, std::int64_t n);

// (1 − t)·a + t·b per element, evaluated in double and rounded once. t outside [0, 1] throws.
Tensor<float> mix_latents(const Tensor<float>& a, const Tensor<float>& b, double t);

struct BlendResult {
  Tensor<float> images;  // (n, 1, R, R)
  Tensor<float> latent;  // (n, d): (1 − mu)·E(x) + mu·M(z)
};

// z has one row per image, drawn from z_seed.
BlendResult blend(const Bundle& bundle, const Tensor<float>& images, double mu, std::uint64_t z_seed);

struct InterpolationResult {
  std::vector<double> alphas;
  Tensor<float> frames;   // (len(alphas), 1, R, R)
  Tensor<float> latents;  // (len(alphas), d)
};

// source_a, source_b: (1, 1, R, R).
InterpolationResult interpolate(const Bundle& bundle, const Tensor<float>& source_a, const Tensor<float>& source_b,
                                const std::vector<double>& alphas = kDefaultAlphas);

// One row per interpolation, one column per alpha.
void write_interpolation_grid(const std::vector<InterpolationResult>& rows, const std::filesystem::path& path);

}  // namespace saalae::infer
