#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "saalae/tensor.hpp"

namespace saalae::data {

// Grayscale image, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool square() const { return width == height; }
  bool operator==(const Image&) const = default;
};

// (n, 1, R, R) batch from square images of one size.
Tensor<float> to_batch(std::span<const Image> images);
std::vector<Image> from_batch(const Tensor<float>& batch);

// 8-bit grayscale PNG. Values are rounded to the nearest level; decoding maps level v to v / 255.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// 8-bit RGB PNG (used for plot output).
void write_rgb_png(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb);

// Area-averaging downscale or bilinear upscale to size x size.
Image resize(const Image& image, int size);

// Tiles images into rows x cols with `pad` pixels of white border.
Image tile(std::span<const Image> images, int cols, int pad = 2);

}  // namespace saalae::data
