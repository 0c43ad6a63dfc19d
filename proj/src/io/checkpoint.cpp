#include "saalae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace saalae::io {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'A', 'L', 'A', 'E', 'C', 'K'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

template <typename U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::filesystem::path& path) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw std::runtime_error("truncated archive: " + path.string());
  return to_little(v);
}

std::string read_bytes(std::istream& is, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ULL << 32)) throw std::runtime_error("corrupt archive length field: " + path.string());
  std::string s(static_cast<std::size_t>(n), '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("truncated archive: " + path.string());
  return s;
}

void validate_manifest(const nlohmann::json& m, const std::filesystem::path& path) {
  if (!m.is_object() || !m.contains("format_version") || !m.contains("config") || !m.contains("config_hash")) {
    throw std::runtime_error("checkpoint manifest missing required fields: " + path.string());
  }
  if (m.at("format_version").get<std::uint32_t>() != kArchiveFormatVersion) {
    throw std::runtime_error("unsupported checkpoint format version in " + path.string());
  }
  const auto config = model::ArchitectureConfig::from_json(m.at("config"));
  if (config.hash() != m.at("config_hash").get<std::string>()) {
    throw std::runtime_error("checkpoint config hash mismatch in " + path.string());
  }
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write archive: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kArchiveFormatVersion);
    const std::string manifest = archive.manifest.dump(2);
    put<std::uint64_t>(os, manifest.size());
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(archive.arrays.size()));
    for (const auto& a : archive.arrays) {
      if (static_cast<std::int64_t>(a.values.size()) != shape_numel(a.shape)) {
        throw std::invalid_argument("archive array '" + a.name + "' size does not match its shape");
      }
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put<std::uint8_t>(os, static_cast<std::uint8_t>(a.dtype));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
      for (double v : a.values) {
        if (a.dtype == NamedArray::DType::f32) {
          put<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
          put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
        }
      }
    }
    if (!os) throw std::runtime_error("failed writing archive: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path, bool manifest_only) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint archive: " + path.string());
  }
  if (get<std::uint32_t>(is, path) != kArchiveFormatVersion) {
    throw std::runtime_error("unsupported archive format version: " + path.string());
  }
  Archive out;
  const auto text = read_bytes(is, get<std::uint64_t>(is, path), path);
  try {
    out.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt archive manifest in " + path.string() + ": " + e.what());
  }
  if (manifest_only) return out;
  const auto count = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = read_bytes(is, get<std::uint32_t>(is, path), path);
    const auto dtype = get<std::uint8_t>(is, path);
    if (dtype != 1 && dtype != 2) throw std::runtime_error("unknown dtype in archive: " + path.string());
    a.dtype = static_cast<NamedArray::DType>(dtype);
    const auto ndim = get<std::uint32_t>(is, path);
    if (ndim > 8) throw std::runtime_error("corrupt array rank in archive: " + path.string());
    for (std::uint32_t d = 0; d < ndim; ++d) a.shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(is, path)));
    const auto n = shape_numel(a.shape);
    if (n > (1LL << 31)) throw std::runtime_error("corrupt array size in archive: " + path.string());
    a.values.resize(static_cast<std::size_t>(n));
    for (auto& v : a.values) {
      v = a.dtype == NamedArray::DType::f32 ? double(std::bit_cast<float>(get<std::uint32_t>(is, path)))
                                            : std::bit_cast<double>(get<std::uint64_t>(is, path));
    }
    out.arrays.push_back(std::move(a));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const model::ModelBundle<float>& bundle,
                     const nlohmann::json& training) {
  Archive ar;
  ar.manifest = training.is_object() ? training : nlohmann::json::object();
  ar.manifest["format_version"] = kArchiveFormatVersion;
  ar.manifest["config"] = bundle.config.to_json();
  ar.manifest["config_hash"] = bundle.config.hash();
  auto add = [&](const std::string& name, const Tensor<float>& t) {
    NamedArray a;
    a.name = name;
    a.shape = t.shape();
    a.values.assign(t.storage().begin(), t.storage().end());
    ar.arrays.push_back(std::move(a));
  };
  for (const auto& [name, v] : bundle.named_parameters()) add(name, v->value);
  for (const auto& [name, b] : bundle.named_buffers()) add(name, *b);
  write_archive(path, ar);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto ar = read_archive(path);
  validate_manifest(ar.manifest, path);
  const auto config = model::ArchitectureConfig::from_json(ar.manifest.at("config"));
  auto bundle = model::build<float>(config, 0);
  std::map<std::string, Tensor<float>*> slots;
  for (const auto& [name, v] : bundle.named_parameters()) slots[name] = &v->value;
  for (const auto& [name, b] : bundle.named_buffers()) slots[name] = b;
  std::size_t filled = 0;
  for (const auto& a : ar.arrays) {
    auto it = slots.find(a.name);
    if (it == slots.end()) throw std::runtime_error("checkpoint has unexpected array '" + a.name + "'");
    if (it->second->shape() != a.shape) {
      throw std::runtime_error("checkpoint array '" + a.name + "' has shape " + shape_to_string(a.shape) +
                               ", expected " + shape_to_string(it->second->shape()));
    }
    for (std::size_t i = 0; i < a.values.size(); ++i) (*it->second)[static_cast<std::int64_t>(i)] = float(a.values[i]);
    ++filled;
  }
  if (filled != slots.size()) throw std::runtime_error("checkpoint is missing arrays: " + path.string());
  return {std::move(bundle), std::move(ar.manifest)};
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
  auto ar = read_archive(path, true);
  validate_manifest(ar.manifest, path);
  return ar.manifest;
}

template <typename From, typename To>
void copy_weights(const model::ModelBundle<From>& from, model::ModelBundle<To>& to) {
  auto fp = from.named_parameters();
  auto tp = to.named_parameters();
  auto fb = from.named_buffers();
  auto tb = to.named_buffers();
  if (fp.size() != tp.size() || fb.size() != tb.size()) throw std::invalid_argument("copy_weights: layout mismatch");
  auto copy = [](const Tensor<From>& src, Tensor<To>& dst) {
    if (src.shape() != dst.shape()) throw std::invalid_argument("copy_weights: shape mismatch");
    for (std::int64_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  };
  for (std::size_t i = 0; i < fp.size(); ++i) copy(fp[i].second->value, tp[i].second->value);
  for (std::size_t i = 0; i < fb.size(); ++i) copy(*fb[i].second, *tb[i].second);
}

template void copy_weights(const model::ModelBundle<float>&, model::ModelBundle<float>&);
template void copy_weights(const model::ModelBundle<float>&, model::ModelBundle<double>&);
template void copy_weights(const model::ModelBundle<double>&, model::ModelBundle<float>&);
template void copy_weights(const model::ModelBundle<double>&, model::ModelBundle<double>&);

}  // namespace saalae::io
