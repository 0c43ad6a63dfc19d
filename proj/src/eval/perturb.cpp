#include "saalae/eval/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace saalae::eval {

std::string to_string(Perturbation kind) {
  switch (kind) {
    case Perturbation::gaussian_noise: return "gaussian_noise";
    case Perturbation::blur: return "blur";
    case Perturbation::white_blocks: return "white_blocks";
    case Perturbation::swirl: return "swirl";
  }
  throw std::invalid_argument("unknown perturbation");
}

Perturbation parse_perturbation(const std::string& name) {
  for (auto k : kAllPerturbations) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown perturbation kind '" + name + "'");
}

std::array<double, 3> level_parameters(Perturbation kind) {
  switch (kind) {
    case Perturbation::gaussian_noise: return {0.05, 0.1, 0.2};
    case Perturbation::blur: return {0.5, 1.0, 2.0};
    case Perturbation::white_blocks: return {1, 3, 6};
    case Perturbation::swirl: return {1.0, 2.0, 4.0};
  }
  throw std::invalid_argument("unknown perturbation");
}

std::pair<double, double> swirl_source(double x, double y, double cx, double cy, double radius, double strength) {
  const double dx = x - cx, dy = y - cy;
  const double r = std::hypot(dx, dy);
  if (r >= radius) return {x, y};
  const double t = 1.0 - r / radius;
  const double theta = strength * t * t;
  const double c = std::cos(theta), s = std::sin(theta);
  return {cx + c * dx - s * dy, cy + s * dx + c * dy};
}

namespace {

float bilinear(const data::Image& im, double x, double y) {
  x = std::clamp(x, 0.0, double(im.width - 1));
  y = std::clamp(y, 0.0, double(im.height - 1));
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, im.width - 1), y1 = std::min(y0 + 1, im.height - 1);
  const double ax = x - x0, ay = y - y0;
  return static_cast<float>((1 - ay) * ((1 - ax) * im.at(x0, y0) + ax * im.at(x1, y0)) +
                            ay * ((1 - ax) * im.at(x0, y1) + ax * im.at(x1, y1)));
}

std::uint64_t stream_seed(std::uint64_t seed, Perturbation kind, int level, std::size_t index) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {std::uint64_t(kind) + 1, std::uint64_t(level), std::uint64_t(index)}) {
    z += 0x9e3779b97f4a7c15ULL * (v + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
  }
  return z;
}

}  // namespace

data::Image swirl(const data::Image& image, double cx, double cy, double radius, double strength) {
  data::Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const auto [sx, sy] = swirl_source(x, y, cx, cy, radius, strength);
      out.at(x, y) = bilinear(image, sx, sy);
    }
  return out;
}

data::Image gaussian_blur(const data::Image& image, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto pass = [&](const data::Image& src, bool horizontal) {
    data::Image dst(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = horizontal ? std::clamp(x + i, 0, src.width - 1) : x;
          const int yy = horizontal ? y : std::clamp(y + i, 0, src.height - 1);
          acc += k[std::size_t(i + radius)] * src.at(xx, yy);
        }
        dst.at(x, y) = static_cast<float>(acc);
      }
    return dst;
  };
  return pass(pass(image, true), false);
}

data::Image perturb_image(const data::Image& image, Perturbation kind, double parameter, std::mt19937_64& rng) {
  switch (kind) {
    case Perturbation::gaussian_noise: {
      data::Image out = image;
      std::normal_distribution<double> noise(0.0, parameter);
      for (auto& v : out.pixels) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
      return out;
    }
    case Perturbation::blur:
      return gaussian_blur(image, parameter);
    case Perturbation::white_blocks: {
      data::Image out = image;
      std::uniform_real_distribution<double> frac(0.10, 0.25);
      for (int b = 0; b < static_cast<int>(parameter); ++b) {
        const int w = std::max(1, static_cast<int>(std::lround(frac(rng) * image.width)));
        const int h = std::max(1, static_cast<int>(std::lround(frac(rng) * image.height)));
        const int x0 = std::uniform_int_distribution<int>(0, image.width - w)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, image.height - h)(rng);
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x) out.at(x, y) = 1.0f;
      }
      return out;
    }
    case Perturbation::swirl: {
      std::uniform_real_distribution<double> centre(0.3, 0.7);
      const double cx = centre(rng) * (image.width - 1), cy = centre(rng) * (image.height - 1);
      return swirl(image, cx, cy, kSwirlRadiusFraction * image.width, parameter);
    }
  }
  throw std::invalid_argument("unknown perturbation");
}

std::vector<data::Image> perturb(std::span<const data::Image> images, Perturbation kind, int level, std::uint64_t seed) {
  if (level < 1 || level > 3) throw std::invalid_argument("perturbation level must be 1, 2 or 3");
  const double parameter = level_parameters(kind)[std::size_t(level - 1)];
  std::vector<data::Image> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::mt19937_64 rng(stream_seed(seed, kind, level, i));
    out.push_back(perturb_image(images[i], kind, parameter, rng));
  }
  return out;
}

}  // namespace saalae::eval
