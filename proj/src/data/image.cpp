#include "saalae/data/image.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace saalae::data {

Tensor<float> to_batch(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_batch: no images");
  const int r = images[0].width;
  Tensor<float> out({static_cast<std::int64_t>(images.size()), 1, r, r});
  std::size_t off = 0;
  for (const auto& im : images) {
    if (im.width != r || im.height != r) throw std::invalid_argument("to_batch: images must share one square size");
    std::copy(im.pixels.begin(), im.pixels.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += im.pixels.size();
  }
  return out;
}

std::vector<Image> from_batch(const Tensor<float>& batch) {
  if (batch.rank() != 4 || batch.dim(1) != 1) {
    throw std::invalid_argument("from_batch: expected (n, 1, H, W), got " + shape_to_string(batch.shape()));
  }
  const int h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
  std::vector<Image> out;
  for (std::int64_t n = 0; n < batch.dim(0); ++n) {
    Image im(w, h);
    std::copy_n(batch.data() + n * h * w, h * w, im.pixels.begin());
    out.push_back(std::move(im));
  }
  return out;
}

namespace {

struct PngWriteState {
  std::vector<std::uint8_t>* out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
  st->out->insert(st->out->end(), data, data + len);
}
void png_flush_cb(png_structp) {}

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->bytes.size()) png_error(png, "truncated PNG data");
  std::memcpy(data, st->bytes.data() + st->pos, len);
  st->pos += len;
}

thread_local std::string g_png_error;

void png_error_cb(png_structp png, png_const_charp msg) {
  g_png_error = msg ? msg : "unknown error";
  png_longjmp(png, 1);
}
void png_warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_raw(int width, int height, int color_type, int channels,
                                     std::span<const std::uint8_t> raw) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw std::runtime_error("PNG: cannot create writer");
  png_infop info = png_create_info_struct(png);
  PngWriteState st{&out};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG: " + g_png_error);
  }
  png_set_write_fn(png, &st, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raw.data() + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.width < 1 || image.height < 1) throw std::invalid_argument("encode_png: empty image");
  std::vector<std::uint8_t> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return encode_raw(image.width, image.height, PNG_COLOR_TYPE_GRAY, 1, raw);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("PNG: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw std::runtime_error("PNG: cannot create reader");
  png_infop info = png_create_info_struct(png);
  PngReadState st{bytes, 0};
  // Everything touched between setjmp and a longjmp lives outside the protected region.
  std::vector<std::uint8_t> row;
  Image out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("PNG: " + g_png_error);
  }
  png_set_read_fn(png, &st, png_read_cb);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  if (width == 0 || height == 0 || width > 8192 || height > 8192) png_error(png, "unsupported dimensions");
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 1) png_error(png, "could not convert to single-channel gray");
  row.resize(png_get_rowbytes(png, info));
  out = Image(static_cast<int>(width), static_cast<int>(height));
  for (png_uint_32 y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < width; ++x) out.at(static_cast<int>(x), static_cast<int>(y)) = row[x] / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) { write_file(path, encode_png(image)); }

Image read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_rgb_png(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("write_rgb_png: size");
  write_file(path, encode_raw(width, height, PNG_COLOR_TYPE_RGB, 3, rgb));
}

Image resize(const Image& image, int size) {
  if (size < 1) throw std::invalid_argument("resize: size must be positive");
  if (image.width == size && image.height == size) return image;
  Image out(size, size);
  const double sx = double(image.width) / size, sy = double(image.height) / size;
  if (sx >= 1.0 && sy >= 1.0) {
    // Area average over the source footprint of each target pixel.
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double x0 = x * sx, x1 = (x + 1) * sx, y0 = y * sy, y1 = (y + 1) * sy;
        double acc = 0, wsum = 0;
        for (int yy = int(std::floor(y0)); yy < int(std::ceil(y1)) && yy < image.height; ++yy)
          for (int xx = int(std::floor(x0)); xx < int(std::ceil(x1)) && xx < image.width; ++xx) {
            const double w = (std::min<double>(xx + 1, x1) - std::max<double>(xx, x0)) *
                             (std::min<double>(yy + 1, y1) - std::max<double>(yy, y0));
            acc += w * image.at(xx, yy);
            wsum += w;
          }
        out.at(x, y) = static_cast<float>(acc / wsum);
      }
    return out;
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
      const int x0 = int(fx), y0 = int(fy);
      const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double ax = fx - x0, ay = fy - y0;
      out.at(x, y) = static_cast<float>((1 - ay) * ((1 - ax) * image.at(x0, y0) + ax * image.at(x1, y0)) +
                                        ay * ((1 - ax) * image.at(x0, y1) + ax * image.at(x1, y1)));
    }
  return out;
}

Image tile(std::span<const Image> images, int cols, int pad) {
  if (images.empty() || cols < 1) throw std::invalid_argument("tile: nothing to tile");
  const int w = images[0].width, h = images[0].height;
  const int n = static_cast<int>(images.size());
  const int rows = (n + cols - 1) / cols;
  Image out(cols * w + (cols + 1) * pad, rows * h + (rows + 1) * pad, 1.0f);
  for (int i = 0; i < n; ++i) {
    if (images[i].width != w || images[i].height != h) throw std::invalid_argument("tile: mixed image sizes");
    const int ox = pad + (i % cols) * (w + pad), oy = pad + (i / cols) * (h + pad);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ox + x, oy + y) = images[i].at(x, y);
  }
  return out;
}

}  // namespace saalae::data
