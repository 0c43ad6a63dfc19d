#include "saalae/service.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <stdexcept>

#include <openssl/evp.h>

#include "saalae/checkpoint.hpp"
#include "saalae/inference.hpp"

namespace saalae::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  // EVP_DecodeBlock skips surrounding whitespace and ignores padding position, so check the alphabet first.
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  const auto pad = text.size() - text.find_last_not_of('=') - 1;
  if (pad > 2) throw std::invalid_argument("bad base64 padding");
  for (std::size_t i = 0; i < text.size() - pad; ++i) {
    const char c = text[i];
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '/')) {
      throw std::invalid_argument("invalid base64 character");
    }
  }
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("invalid base64");
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// ---------------------------------------------------------------------------------------------

ImageStore::ImageStore(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("image store capacity must be >= 1");
}

std::string ImageStore::put(data::Image image) {
  std::lock_guard lock(mutex_);
  std::string id = "img-" + std::to_string(next_id_++);
  entries_.emplace_front(id, std::move(image));
  index_[id] = entries_.begin();
  while (entries_.size() > capacity_) {
    index_.erase(entries_.back().first);
    entries_.pop_back();
  }
  return id;
}

std::optional<data::Image> ImageStore::get(const std::string& id) {
  std::lock_guard lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  entries_.splice(entries_.begin(), entries_, it->second);
  return it->second->second;
}

std::size_t ImageStore::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------------------------

namespace {

struct ApiError : std::runtime_error {
  int status;
  std::string code, field;
  ApiError(int s, std::string c, const std::string& message, std::string f = "")
      : std::runtime_error(message), status(s), code(std::move(c)), field(std::move(f)) {}
};

Response json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }

Response error_response(int status, const std::string& code, const std::string& message,
                        const std::string& field = "") {
  json body{{"code", code}, {"message", message}};
  if (!field.empty()) body["field"] = field;
  return json_response(status, body);
}

const json& field(const json& body, const std::string& name) {
  if (!body.contains(name)) throw ApiError(400, "missing_field", "missing field '" + name + "'", name);
  return body.at(name);
}

std::string string_field(const json& body, const std::string& name) {
  const auto& v = field(body, name);
  if (!v.is_string()) throw ApiError(400, "invalid_field", "'" + name + "' must be a string", name);
  return v.get<std::string>();
}

double unit_field(const json& v, const std::string& name) {
  if (!v.is_number()) throw ApiError(400, "invalid_field", "'" + name + "' must be a number", name);
  const double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) throw ApiError(400, "out_of_range", "'" + name + "' must be in [0, 1]", name);
  return x;
}

std::uint64_t seed_field(const json& body, const std::string& name) {
  if (!body.contains(name)) return 0;
  const auto& v = body.at(name);
  if (!v.is_number_unsigned()) throw ApiError(400, "invalid_field", "'" + name + "' must be a non-negative integer", name);
  return v.get<std::uint64_t>();
}

json latent_json(const Tensor<float>& latents, std::int64_t row) {
  const auto d = latents.dim(1);
  json out = json::array();
  for (std::int64_t j = 0; j < d; ++j) out.push_back(latents[row * d + j]);
  return out;
}

std::string png_base64(const data::Image& image) { return base64_encode(data::encode_png(image)); }

json config_summary(const json& config) {
  json s = json::object();
  for (const char* k : {"resolution", "latent_dim", "base_channels", "attention_resolutions", "style_injection"}) {
    if (config.contains(k)) s[k] = config.at(k);
  }
  return s;
}

struct CheckpointEntry {
  std::string id;
  fs::path path;
};

std::vector<CheckpointEntry> scan_checkpoints(const fs::path& dir) {
  std::vector<CheckpointEntry> out;
  if (dir.empty() || !fs::is_directory(dir)) return out;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(dir, fs::directory_options::skip_permission_denied, ec), end;
       !ec && it != end; it.increment(ec)) {
    if (it->is_regular_file() && it->path().extension() == ".ckpt") {
      out.push_back({fs::relative(it->path(), dir).generic_string(), it->path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)), images_(config_.image_store_capacity) {
  if (config_.timeout.count() <= 0) throw std::invalid_argument("service timeout must be positive");
}

Service::~Service() {
  // Requests that timed out keep running on their own threads and reference this object.
  std::unique_lock lock(inflight_mutex_);
  inflight_cv_.wait(lock, [&] { return inflight_ == 0; });
}

void Service::load_checkpoint(const fs::path& path, const std::string& id) {
  auto loaded = io::load_checkpoint(path);
  auto next = std::make_unique<Active>(Active{id.empty() ? path.filename().string() : id,
                                              std::move(loaded.bundle), std::move(loaded.manifest)});
  std::unique_lock lock(model_mutex_);
  active_ = std::move(next);
}

std::optional<std::string> Service::active_checkpoint() const {
  std::shared_lock lock(model_mutex_);
  if (!active_) return std::nullopt;
  return active_->id;
}

Response Service::handle(const Request& request) {
  ++requests_;
  {
    std::lock_guard lock(inflight_mutex_);
    ++inflight_;
  }
  auto done = std::make_shared<std::promise<Response>>();
  auto result = done->get_future();
  std::thread([this, request, done] {
    Response r;
    try {
      r = dispatch(request);
    } catch (const std::exception& e) {
      r = error_response(500, "internal", e.what());
    } catch (...) {
      r = error_response(500, "internal", "unknown error");
    }
    done->set_value(std::move(r));
    std::lock_guard lock(inflight_mutex_);
    --inflight_;
    inflight_cv_.notify_all();
  }).detach();
  if (result.wait_for(config_.timeout) != std::future_status::ready) {
    return error_response(503, "timeout", "request did not finish within the configured timeout");
  }
  return result.get();
}

Response Service::dispatch(const Request& request) {
  using Handler = std::function<Response(const json&)>;
  const std::map<std::string, std::map<std::string, Handler>> routes{
      {"/health", {{"GET", [&](const json&) { return health(); }}}},
      {"/checkpoints", {{"GET", [&](const json&) { return list_checkpoints(); }}}},
      {"/checkpoints/load", {{"POST", [&](const json& b) { return load(b); }}}},
      {"/images", {{"POST", [&](const json& b) { return upload(b); }}}},
      {"/encode", {{"POST", [&](const json& b) { return encode(b); }}}},
      {"/decode", {{"POST", [&](const json& b) { return decode(b); }}}},
      {"/sample", {{"POST", [&](const json& b) { return sample(b); }}}},
      {"/blend", {{"POST", [&](const json& b) { return blend(b); }}}},
      {"/interpolate", {{"POST", [&](const json& b) { return interpolate(b); }}}},
  };
  const auto route = routes.find(request.path);
  if (route == routes.end()) return error_response(404, "not_found", "no such endpoint: " + request.path);
  if (request.method == "OPTIONS") return {204, "", "text/plain"};
  const auto handler = route->second.find(request.method);
  if (handler == route->second.end()) {
    return error_response(405, "method_not_allowed", request.method + " not allowed on " + request.path);
  }
  if (request.body.size() > config_.max_body_bytes) {
    return error_response(413, "body_too_large", "request body exceeds the configured limit");
  }
  json body = json::object();
  if (request.method == "POST") {
    body = json::parse(request.body, nullptr, false);
    if (body.is_discarded()) return error_response(400, "invalid_json", "request body is not valid JSON");
    if (!body.is_object()) return error_response(400, "invalid_json", "request body must be a JSON object");
  }
  try {
    std::shared_lock lock(model_mutex_, std::defer_lock);
    // Checkpoint loads take the lock exclusively themselves.
    if (request.path != "/checkpoints/load") lock.lock();
    return handler->second(body);
  } catch (const ApiError& e) {
    return error_response(e.status, e.code, e.what(), e.field);
  } catch (const json::exception& e) {
    return error_response(400, "invalid_request", e.what());
  }
}

const Service::Active& Service::require_model() const {
  if (!active_) throw ApiError(409, "no_checkpoint", "no checkpoint loaded");
  return *active_;
}

data::Image Service::require_image(const json& body, const std::string& name) {
  const auto id = string_field(body, name);
  auto image = images_.get(id);
  if (!image) throw ApiError(404, "unknown_image", "unknown image id '" + id + "'", name);
  const int r = require_model().bundle.config.resolution;
  if (image->width != r || image->height != r) {
    throw ApiError(400, "bad_shape", "image does not match the model resolution " + std::to_string(r), name);
  }
  return *image;
}

Response Service::health() {
  json body{{"status", "ok"}, {"requests", requests_.load()}, {"images", images_.size()}};
  body["checkpoint"] = active_ ? json(active_->id) : json(nullptr);
  if (active_) body["config"] = active_->bundle.config.to_json();
  return json_response(200, body);
}

Response Service::list_checkpoints() {
  json out = json::array();
  for (const auto& entry : scan_checkpoints(config_.checkpoint_dir)) {
    json item{{"id", entry.id}};
    try {
      const auto m = io::read_checkpoint_manifest(entry.path);
      item["valid"] = true;
      item["config_hash"] = m.at("config_hash");
      item["config"] = config_summary(m.at("config"));
      item["val_fid"] = m.contains("best_val_fid") ? m.at("best_val_fid") : json(nullptr);
    } catch (const std::exception& e) {
      item["valid"] = false;
      item["error"] = e.what();
    }
    out.push_back(std::move(item));
  }
  return json_response(200, out);
}

Response Service::load(const json& body) {
  const auto id = string_field(body, "id");
  const auto entries = scan_checkpoints(config_.checkpoint_dir);
  const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.id == id; });
  if (it == entries.end()) throw ApiError(404, "unknown_checkpoint", "unknown checkpoint id '" + id + "'", "id");
  try {
    load_checkpoint(it->path, id);
  } catch (const std::exception& e) {
    throw ApiError(400, "invalid_checkpoint", e.what(), "id");
  }
  std::shared_lock lock(model_mutex_);
  return json_response(200, {{"id", active_->id}, {"config", active_->bundle.config.to_json()}});
}

Response Service::upload(const json& body) {
  const auto& model = require_model();
  const auto text = string_field(body, "png_base64");
  bool resize = false;
  if (body.contains("resize")) {
    if (!body.at("resize").is_boolean()) throw ApiError(400, "invalid_field", "'resize' must be a boolean", "resize");
    resize = body.at("resize").get<bool>();
  }
  data::Image image;
  try {
    image = data::decode_png(base64_decode(text));
  } catch (const std::exception& e) {
    throw ApiError(400, "bad_image", e.what(), "png_base64");
  }
  const int r = model.bundle.config.resolution;
  if (image.width != r || image.height != r) {
    if (!resize) {
      throw ApiError(400, "bad_shape",
                     "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         ", model resolution is " + std::to_string(r) + "; set resize to rescale",
                     "png_base64");
    }
    if (!image.square()) throw ApiError(400, "bad_shape", "resize needs a square image", "png_base64");
    image = data::resize(image, r);
  }
  const auto id = images_.put(image);
  return json_response(200, {{"image_id", id}, {"width", image.width}, {"height", image.height}});
}

Response Service::encode(const json& body) {
  const auto& model = require_model();
  const auto image = require_image(body, "image_id");
  const auto w = infer::encode(model.bundle, data::to_batch(std::span(&image, 1)));
  return json_response(200, {{"latent", latent_json(w, 0)}});
}

Response Service::decode(const json& body) {
  const auto& model = require_model();
  const auto& v = field(body, "latent");
  const int d = model.bundle.config.latent_dim;
  if (!v.is_array() || static_cast<int>(v.size()) != d) {
    throw ApiError(400, "bad_shape", "'latent' must be an array of " + std::to_string(d) + " numbers", "latent");
  }
  Tensor<float> w({1, d});
  for (int j = 0; j < d; ++j) {
    if (!v[j].is_number()) throw ApiError(400, "invalid_field", "'latent' must contain only numbers", "latent");
    w[j] = static_cast<float>(v[j].get<double>());
    if (!std::isfinite(w[j])) throw ApiError(400, "invalid_field", "'latent' values must be finite floats", "latent");
  }
  const auto images = data::from_batch(infer::decode(model.bundle, w));
  return json_response(200, {{"png_base64", png_base64(images.front())}});
}

Response Service::sample(const json& body) {
  const auto& model = require_model();
  const auto seed = seed_field(body, "z_seed");
  std::int64_t n = 1;
  if (body.contains("n")) {
    const auto& v = body.at("n");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1 || v.get<std::int64_t>() > 64) {
      throw ApiError(400, "out_of_range", "'n' must be an integer in [1, 64]", "n");
    }
    n = v.get<std::int64_t>();
  }
  json frames = json::array();
  for (const auto& im : data::from_batch(infer::sample_random(model.bundle, seed, n))) frames.push_back(png_base64(im));
  return json_response(200, {{"images", frames}});
}

Response Service::blend(const json& body) {
  const auto& model = require_model();
  const auto image = require_image(body, "image_id");
  const double mu = unit_field(field(body, "mu"), "mu");
  const auto seed = seed_field(body, "z_seed");
  const auto r = infer::blend(model.bundle, data::to_batch(std::span(&image, 1)), mu, seed);
  return json_response(200, {{"png_base64", png_base64(data::from_batch(r.images).front())},
                             {"latent", latent_json(r.latent, 0)}});
}

Response Service::interpolate(const json& body) {
  const auto& model = require_model();
  const auto a = require_image(body, "image_id_a");
  const auto b = require_image(body, "image_id_b");
  std::vector<double> alphas = infer::kDefaultAlphas;
  if (body.contains("alphas")) {
    const auto& v = body.at("alphas");
    if (!v.is_array() || v.empty() || v.size() > 64) {
      throw ApiError(400, "invalid_field", "'alphas' must be a non-empty array of at most 64 numbers", "alphas");
    }
    alphas.clear();
    for (const auto& x : v) alphas.push_back(unit_field(x, "alphas"));
  }
  const auto r = infer::interpolate(model.bundle, data::to_batch(std::span(&a, 1)),
                                    data::to_batch(std::span(&b, 1)), alphas);
  json frames = json::array(), latents = json::array();
  const auto images = data::from_batch(r.frames);
  for (std::size_t i = 0; i < images.size(); ++i) {
    frames.push_back(png_base64(images[i]));
    latents.push_back(latent_json(r.latents, static_cast<std::int64_t>(i)));
  }
  return json_response(200, {{"alphas", alphas}, {"frames", frames}, {"latents", latents}});
}

}  // namespace saalae::service
