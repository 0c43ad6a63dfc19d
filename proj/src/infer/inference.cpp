#include "saalae/inference.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace saalae::infer {

namespace {

void check_unit(double t, const char* name) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument(std::string(name) + " must be in [0, 1]");
}

template <typename F>
Tensor<float> row_by_row(const Tensor<float>& input, F&& f) {
  if (input.rank() < 2 || input.dim(0) < 1) throw std::invalid_argument("expected a non-empty batch");
  std::vector<Tensor<float>> rows;
  for (std::int64_t i = 0; i < input.dim(0); ++i) rows.push_back(f(input.slice_rows(i, i + 1)));
  return concat_rows<float>(rows);
}

}  // namespace

Tensor<float> encode(const Bundle& bundle, const Tensor<float>& images) {
  return row_by_row(images, [&](const Tensor<float>& x) { return model::encode(bundle, x); });
}

Tensor<float> decode(const Bundle& bundle, const Tensor<float>& latents) {
  return row_by_row(latents, [&](const Tensor<float>& w) { return model::generate(bundle, w); });
}

Tensor<float> reconstruct(const Bundle& bundle, const Tensor<float>& images) {
  return decode(bundle, encode(bundle, images));
}

Tensor<float> sample_random(const Bundle& bundle, std::uint64_t z_seed, std::int64_t n) {
  if (n < 1) throw std::invalid_argument("sample_random: n must be >= 1");
  const auto z = model::sample_noise<float>(n, bundle.config.latent_dim, z_seed);
  return decode(bundle, row_by_row(z, [&](const Tensor<float>& row) { return model::map_latent(bundle, row); }));
}

Tensor<float> mix_latents(const Tensor<float>& a, const Tensor<float>& b, double t) {
  check_unit(t, "mixing weight");
  if (a.shape() != b.shape()) throw std::invalid_argument("mix_latents: shape mismatch");
  Tensor<float> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>((1.0 - t) * double(a[i]) + t * double(b[i]));
  }
  return out;
}

BlendResult blend(const Bundle& bundle, const Tensor<float>& images, double mu, std::uint64_t z_seed) {
  check_unit(mu, "mu");
  const auto e = encode(bundle, images);
  const auto z = model::sample_noise<float>(e.dim(0), bundle.config.latent_dim, z_seed);
  const auto m = row_by_row(z, [&](const Tensor<float>& row) { return model::map_latent(bundle, row); });
  BlendResult r;
  r.latent = mix_latents(e, m, mu);
  r.images = decode(bundle, r.latent);
  return r;
}

InterpolationResult interpolate(const Bundle& bundle, const Tensor<float>& source_a, const Tensor<float>& source_b,
                                const std::vector<double>& alphas) {
  if (alphas.empty()) throw std::invalid_argument("interpolate: no alphas");
  for (double a : alphas) check_unit(a, "alpha");
  if (source_a.rank() != 4 || source_a.dim(0) != 1 || source_b.shape() != source_a.shape()) {
    throw std::invalid_argument("interpolate: expected two single images of equal shape");
  }
  const auto w1 = encode(bundle, source_a), w2 = encode(bundle, source_b);
  InterpolationResult r;
  r.alphas = alphas;
  std::vector<Tensor<float>> latents;
  for (double a : alphas) latents.push_back(mix_latents(w1, w2, a));
  r.latents = concat_rows<float>(latents);
  r.frames = decode(bundle, r.latents);
  return r;
}

void write_interpolation_grid(const std::vector<InterpolationResult>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw std::invalid_argument("write_interpolation_grid: no rows");
  std::vector<data::Image> cells;
  const auto cols = rows.front().alphas.size();
  for (const auto& r : rows) {
    if (r.alphas.size() != cols) throw std::invalid_argument("write_interpolation_grid: rows differ in length");
    for (auto& im : data::from_batch(r.frames)) cells.push_back(std::move(im));
  }
  data::write_png(path, data::tile(cells, static_cast<int>(cols), 2));
}

}  // namespace saalae::infer
