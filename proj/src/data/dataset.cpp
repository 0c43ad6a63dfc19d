#include "saalae/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "saalae/data/blueprint.hpp"

namespace saalae::data {

namespace fs = std::filesystem;

std::vector<Sample> DatasetSplits::all() const {
  std::vector<Sample> out(train);
  out.insert(out.end(), val.begin(), val.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

std::vector<Image> DatasetSplits::images(const std::string& split) const {
  std::vector<Image> out;
  auto take = [&](const std::vector<Sample>& s) {
    for (const auto& x : s) out.push_back(x.image);
  };
  if (split == "train" || split == "all") take(train);
  if (split == "val" || split == "all") take(val);
  if (split == "test" || split == "all") take(test);
  if (split != "train" && split != "val" && split != "test" && split != "all") {
    throw std::invalid_argument("unknown split '" + split + "'");
  }
  return out;
}

SplitSizes split_sizes(std::size_t n) {
  if (n < 4) throw std::invalid_argument("dataset too small to split");
  if (n >= 2200) return {n - 1100, 100, 1000};
  const std::size_t test = n / 4, val = std::max<std::size_t>(2, n / 40);
  return {n - test - val, val, test};
}

std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::uint64_t seed) {
  const auto sizes = split_sizes(n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eed5eed5eed5eedULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::array<std::vector<std::size_t>, 3> out;
  out[2].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(sizes.test));
  out[1].assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.test),
                idx.begin() + static_cast<std::ptrdiff_t>(sizes.test + sizes.val));
  out[0].assign(idx.begin() + static_cast<std::ptrdiff_t>(sizes.test + sizes.val), idx.end());
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

namespace {

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu.png", i);
  return buf;
}

void quantize(Image& im) {
  for (auto& v : im.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

struct Generated {
  std::vector<Sample> samples;
  nlohmann::json items = nlohmann::json::array();
};

Generated generate_all(std::size_t n, int resolution, const FamilyMix& mix, std::uint64_t seed) {
  if (n < 200) throw std::invalid_argument("synthetic datasets need n >= 200");
  for (double w : mix) {
    if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("family mix weights must be finite and >= 0");
  }
  if (std::accumulate(mix.begin(), mix.end(), 0.0) <= 0) throw std::invalid_argument("family mix sums to zero");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(mix.begin(), mix.end());
  Generated g;
  for (std::size_t i = 0; i < n; ++i) {
    const int family = pick(rng);
    const auto spec = sample_spec(family, resolution, rng);
    const std::uint64_t image_seed = rng();
    Sample s{generate_blueprint(spec, image_seed), family, image_name(i)};
    quantize(s.image);
    g.items.push_back({{"file", s.file}, {"family", family}, {"seed", image_seed}, {"spec", spec.to_json()}});
    g.samples.push_back(std::move(s));
  }
  return g;
}

DatasetSplits assemble(std::vector<Sample> samples, const std::array<std::vector<std::size_t>, 3>& idx,
                       std::uint64_t seed, std::string source, int resolution) {
  DatasetSplits out;
  out.seed = seed;
  out.source = std::move(source);
  out.resolution = resolution;
  for (auto i : idx[0]) out.train.push_back(samples[i]);
  for (auto i : idx[1]) out.val.push_back(samples[i]);
  for (auto i : idx[2]) out.test.push_back(samples[i]);
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(1) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed " + path.string() + ": " + e.what());
  }
}

std::string source_descriptor(std::size_t n, int resolution, std::uint64_t seed) {
  return "synthetic:n=" + std::to_string(n) + ",resolution=" + std::to_string(resolution) +
         ",seed=" + std::to_string(seed);
}

}  // namespace

DatasetSplits synthesize(std::size_t n, int resolution, const FamilyMix& mix, std::uint64_t seed) {
  auto g = generate_all(n, resolution, mix, seed);
  return assemble(std::move(g.samples), split_indices(n, seed), seed, source_descriptor(n, resolution, seed),
                  resolution);
}

DatasetSplits make_dataset(std::size_t n, int resolution, const FamilyMix& mix, std::uint64_t seed,
                           const fs::path& out_dir) {
  auto g = generate_all(n, resolution, mix, seed);
  const auto idx = split_indices(n, seed);
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  for (const auto& s : g.samples) write_png(out_dir / "images" / s.file, s.image);

  nlohmann::json manifest = {{"version", 1},
                             {"source", source_descriptor(n, resolution, seed)},
                             {"resolution", resolution},
                             {"seed", seed},
                             {"family_mix", mix},
                             {"items", g.items}};
  write_json(out_dir / "manifest.json", manifest);
  nlohmann::json splits = {{"seed", seed}};
  const char* names[3] = {"train", "val", "test"};
  for (int k = 0; k < 3; ++k) {
    auto& arr = splits[names[k]] = nlohmann::json::array();
    for (auto i : idx[k]) arr.push_back(g.samples[i].file);
  }
  write_json(out_dir / "splits.json", splits);
  return assemble(std::move(g.samples), idx, seed, out_dir.string(), resolution);
}

DatasetSplits load_dataset(const fs::path& dir, const LoadOptions& options) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  const fs::path image_dir = fs::is_directory(dir / "images") ? dir / "images" : dir;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(image_dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  if (files.empty()) throw std::runtime_error("no PNG images in " + image_dir.string());
  std::sort(files.begin(), files.end());

  std::map<std::string, int> labels;
  if (fs::exists(dir / "manifest.json")) {
    const auto m = read_json(dir / "manifest.json");
    for (const auto& item : m.value("items", nlohmann::json::array())) {
      labels[item.at("file").get<std::string>()] = item.value("family", -1);
    }
  }

  std::vector<Sample> samples;
  std::map<std::string, std::size_t> index_of;
  int resolution = 0;
  for (const auto& f : files) {
    Image im = read_png(f);
    if (options.resize) {
      im = resize(im, *options.resize);
    } else if (!im.square()) {
      throw std::runtime_error(f.string() + " is not square; pass a resize option");
    }
    if (resolution == 0) resolution = im.width;
    if (im.width != resolution) {
      throw std::runtime_error("mixed resolutions (" + std::to_string(resolution) + " vs " + std::to_string(im.width) +
                               " in " + f.filename().string() + "); pass a resize option");
    }
    const auto name = f.filename().string();
    auto it = labels.find(name);
    index_of[name] = samples.size();
    samples.push_back({std::move(im), it == labels.end() ? -1 : it->second, name});
  }

  std::array<std::vector<std::size_t>, 3> idx;
  std::uint64_t seed = options.split_seed;
  if (fs::exists(dir / "splits.json")) {
    const auto s = read_json(dir / "splits.json");
    seed = s.value("seed", seed);
    const char* names[3] = {"train", "val", "test"};
    for (int k = 0; k < 3; ++k) {
      for (const auto& name : s.at(names[k])) {
        auto it = index_of.find(name.get<std::string>());
        if (it == index_of.end()) throw std::runtime_error("splits.json names missing image " + name.dump());
        idx[k].push_back(it->second);
      }
    }
  } else {
    idx = split_indices(samples.size(), seed);
  }
  return assemble(std::move(samples), idx, seed, dir.string(), resolution);
}

std::vector<Image> family_images(const DatasetSplits& dataset, int family) {
  std::vector<Image> out;
  bool labelled = false;
  for (const auto* split : {&dataset.train, &dataset.val, &dataset.test}) {
    for (const auto& s : *split) {
      labelled = labelled || s.family >= 0;
      if (s.family == family) out.push_back(s.image);
    }
  }
  if (!labelled) throw std::invalid_argument("dataset has no family labels");
  return out;
}

std::pair<std::vector<Image>, std::vector<Image>> baseline_pair(const DatasetSplits& dataset) {
  return {family_images(dataset, 0), family_images(dataset, 1)};
}

}  // namespace saalae::data
