#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "saalae/data/blueprint.hpp"
#include "saalae/data/dataset.hpp"
#include "saalae/data/image.hpp"

using namespace saalae;
using namespace saalae::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("saalae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::pair<int, int>> inked(const Image& layer) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < layer.height; ++y)
    for (int x = 0; x < layer.width; ++x)
      if (layer.at(x, y) > 0.5f) out.emplace_back(x, y);
  return out;
}

// Brute-force distance transform: for every inner-stroke pixel, the distance to the nearest outer-stroke pixel.
std::vector<double> gap_profile(const BlueprintLayers& layers) {
  const auto outer = inked(layers.outer), inner = inked(layers.inner);
  std::vector<double> d;
  for (auto [x, y] : inner) {
    double best = 1e9;
    for (auto [u, v] : outer) best = std::min(best, std::hypot(double(x - u), double(y - v)));
    d.push_back(best);
  }
  return d;
}

double stddev(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / v.size());
}

double stroke_fraction(const Image& im) {
  int n = 0;
  for (float v : im.pixels) n += v < 0.5f;
  return double(n) / im.pixels.size();
}

}  // namespace

TEST(Blueprint, DeterministicPerSpecAndSeed) {
  std::mt19937_64 rng(3);
  const auto spec = sample_spec(2, 64, rng);
  EXPECT_EQ(generate_blueprint(spec, 11), generate_blueprint(spec, 11));
  EXPECT_NE(generate_blueprint(spec, 11), generate_blueprint(spec, 12));
}

TEST(Blueprint, GapIsConstantAlongContour) {
  std::mt19937_64 rng(5);
  for (int res : {64, 128}) {
    for (int family = 0; family < kFamilyCount; ++family) {
      for (int k = 0; k < 5; ++k) {
        const auto spec = sample_spec(family, res, rng);
        const auto d = gap_profile(render_layers(spec, rng()));
        ASSERT_GT(d.size(), 20u);
        EXPECT_LT(stddev(d), 1.0) << "family " << family << " res " << res;
        const double mean = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
        EXPECT_NEAR(mean, spec.wall_gap, 1.0);
      }
    }
  }
}

TEST(Blueprint, InnerContourInsideOuter) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 40; ++i) {
    const auto spec = sample_spec(i % 4, 64, rng);
    for (auto [x, y] : inked(render_layers(spec, i).inner)) {
      EXPECT_LT(outer_contour_distance(spec, x + 0.5, y + 0.5), -spec.wall_gap / 2);
    }
  }
}

TEST(Blueprint, StrokeFractionAcrossThousandSeeds) {
  std::mt19937_64 rng(7);
  double lo = 1, hi = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto im = generate_blueprint(sample_spec(i % 4, 64, rng), rng());
    const double f = stroke_fraction(im);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
    const auto [mn, mx] = std::minmax_element(im.pixels.begin(), im.pixels.end());
    ASSERT_GE(*mn, 0.0f);
    ASSERT_LE(*mx, 1.0f);
  }
  EXPECT_GE(lo, 0.02);
  EXPECT_LE(hi, 0.20);
}

TEST(Blueprint, InvalidSpecsThrow) {
  auto spec = family_base(0, 64);
  EXPECT_NO_THROW(spec.validate());
  spec.wall_gap = spec.corner_radius + spec.half_height;  // inner contour collapses
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  EXPECT_THROW(generate_blueprint(spec, 1), std::invalid_argument);
  spec = family_base(0, 64);
  spec.half_width = 40;  // leaves the canvas
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = family_base(0, 64);
  spec.family = 7;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  EXPECT_THROW(family_base(0, 16), std::invalid_argument);
}

TEST(Blueprint, FamilyDistanceGrowsWithIndexGap) {
  for (int res : {64, 256}) {
    for (int i = 0; i < kFamilyCount; ++i) {
      for (int j = i + 1; j + 1 < kFamilyCount; ++j) {
        EXPECT_LT(parameter_distance(family_base(i, res), family_base(i, res)) + 1e-12,
                  parameter_distance(family_base(i, res), family_base(j, res)));
        EXPECT_LT(parameter_distance(family_base(i, res), family_base(j, res)),
                  parameter_distance(family_base(i, res), family_base(j + 1, res)));
      }
    }
  }
}

TEST(Blueprint, SpecJsonRoundTrip) {
  std::mt19937_64 rng(1);
  const auto spec = sample_spec(3, 128, rng);
  const auto back = BlueprintSpec::from_json(spec.to_json());
  EXPECT_EQ(back.to_json(), spec.to_json());
  EXPECT_EQ(generate_blueprint(back, 4), generate_blueprint(spec, 4));
}

TEST(Image, PngRoundTripAndNormalization) {
  Image im(3, 2);
  im.pixels = {0.0f, 128 / 255.0f, 1.0f, 0.25f, 0.5f, 0.75f};
  const auto back = decode_png(encode_png(im));
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_NEAR(back.pixels[1], 0.50196, 1e-5);
  EXPECT_EQ(back.pixels[1], 128 / 255.0f);
  EXPECT_EQ(decode_png(encode_png(back)), back);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_THROW(decode_png(junk), std::runtime_error);
  auto bytes = encode_png(im);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_png(bytes), std::runtime_error);
}

TEST(Image, ResizeAndTile) {
  Image im(4, 4, 1.0f);
  im.at(0, 0) = im.at(1, 0) = im.at(0, 1) = im.at(1, 1) = 0.0f;
  const auto small = resize(im, 2);
  EXPECT_EQ(small.pixels, (std::vector<float>{0, 1, 1, 1}));
  EXPECT_EQ(resize(small, 4).width, 4);
  const std::vector<Image> cells(3, Image(4, 4, 0.0f));
  const auto grid = tile(cells, 2, 1);
  EXPECT_EQ(grid.width, 2 * 4 + 3);
  EXPECT_EQ(grid.height, 2 * 4 + 3);
  EXPECT_EQ(grid.at(0, 0), 1.0f);
}

TEST(Splits, SizesFollowRule) {
  const auto s = split_sizes(4000);
  EXPECT_EQ(s.train, 2900u);
  EXPECT_EQ(s.val, 100u);
  EXPECT_EQ(s.test, 1000u);
  const auto f = split_sizes(800);
  EXPECT_EQ(f.test, 200u);
  EXPECT_EQ(f.val, 20u);
  EXPECT_EQ(f.train + f.val + f.test, 800u);
  EXPECT_THROW(split_sizes(3), std::invalid_argument);
}

TEST(Splits, DisjointCompleteAndSeeded) {
  const auto a = split_indices(1000, 4), b = split_indices(1000, 4), c = split_indices(1000, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::set<std::size_t> all;
  for (const auto& part : a) all.insert(part.begin(), part.end());
  EXPECT_EQ(all.size(), 1000u);
  EXPECT_EQ(*all.rbegin(), 999u);
}

TEST(Dataset, FamilyMixWithinTwoPercent) {
  const FamilyMix skewed{0.4, 0.3, 0.2, 0.1};
  for (const auto& mix : {kUniformMix, skewed}) {
    const auto ds = synthesize(4000, 32, mix, 8);
    EXPECT_EQ(ds.train.size(), 2900u);
    std::array<int, 4> counts{};
    for (const auto& s : ds.all()) ++counts[s.family];
    for (int f = 0; f < 4; ++f) EXPECT_NEAR(counts[f] / 4000.0, mix[f], 0.02) << "family " << f;
  }
}

TEST(Dataset, MakeThenLoadIsIdentical) {
  const auto dir = temp_dir("dataset_rt");
  const auto made = make_dataset(240, 32, kUniformMix, 9, dir);
  ASSERT_TRUE(fs::exists(dir / "manifest.json"));
  ASSERT_TRUE(fs::exists(dir / "splits.json"));
  const auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.size(), 240u);
  EXPECT_EQ(loaded.resolution, 32);
  for (const char* split : {"train", "val", "test"}) {
    const auto a = made.images(split), b = loaded.images(split);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
  }
  for (std::size_t i = 0; i < made.train.size(); ++i) EXPECT_EQ(made.train[i].family, loaded.train[i].family);

  // Same seed, same manifest.
  const auto dir2 = temp_dir("dataset_rt2");
  make_dataset(240, 32, kUniformMix, 9, dir2);
  std::ifstream m1(dir / "manifest.json"), m2(dir2 / "manifest.json");
  EXPECT_EQ(nlohmann::json::parse(m1), nlohmann::json::parse(m2));
  EXPECT_EQ(synthesize(240, 32, kUniformMix, 9).images("all"), made.images("all"));
}

TEST(Dataset, LoadErrors) {
  const auto empty = temp_dir("dataset_empty");
  EXPECT_THROW(load_dataset(empty), std::runtime_error);
  EXPECT_THROW(load_dataset(empty / "nope"), std::runtime_error);

  const auto mixed = temp_dir("dataset_mixed");
  for (int i = 0; i < 6; ++i) write_png(mixed / ("a" + std::to_string(i) + ".png"), Image(16, 16, 0.5f));
  write_png(mixed / "big.png", Image(32, 32, 0.5f));
  EXPECT_THROW(load_dataset(mixed), std::runtime_error);
  LoadOptions opts;
  opts.resize = 16;
  const auto ok = load_dataset(mixed, opts);
  EXPECT_EQ(ok.size(), 7u);
  EXPECT_EQ(ok.resolution, 16);
  EXPECT_THROW(baseline_pair(ok), std::invalid_argument);

  write_png(mixed / "wide.png", Image(16, 8, 0.5f));
  EXPECT_EQ(load_dataset(mixed, opts).size(), 8u);
  fs::remove(mixed / "big.png");
  EXPECT_THROW(load_dataset(mixed), std::runtime_error);
  fs::remove(mixed / "wide.png");
  std::ofstream(mixed / "broken.png") << "not a png";
  EXPECT_THROW(load_dataset(mixed, opts), std::runtime_error);
}

TEST(Dataset, BaselinePairIsDisjointAndLabelPure) {
  const auto ds = synthesize(400, 32, kUniformMix, 10);
  const auto [f0, f1] = baseline_pair(ds);
  EXPECT_EQ(f0, family_images(ds, 0));
  EXPECT_EQ(f1, family_images(ds, 1));
  std::size_t n0 = 0, n1 = 0;
  for (const auto& s : ds.all()) {
    n0 += s.family == 0;
    n1 += s.family == 1;
  }
  EXPECT_EQ(f0.size(), n0);
  EXPECT_EQ(f1.size(), n1);
  for (const auto& a : f0)
    for (const auto& b : f1) ASSERT_NE(a, b);
}
