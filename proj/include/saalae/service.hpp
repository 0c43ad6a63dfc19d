#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "saalae/data/image.hpp"
#include "saalae/model.hpp"

namespace saalae::service {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct ServiceConfig {
  std::filesystem::path checkpoint_dir;  // scanned by GET /checkpoints
  std::size_t image_store_capacity = 256;
  std::chrono::milliseconds timeout{30000};
  std::string cors_origin;  // empty: no CORS headers
  std::size_t max_body_bytes = 8u << 20;
};

struct Request {
  std::string method;
  std::string path;
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Bounded least-recently-used store of uploaded images.
class ImageStore {
 public:
  explicit ImageStore(std::size_t capacity);
  std::string put(data::Image image);
  std::optional<data::Image> get(const std::string& id);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::size_t capacity_;
  std::uint64_t next_id_ = 1;
  std::list<std::pair<std::string, data::Image>> entries_;  // front = most recent
  std::unordered_map<std::string, std::list<std::pair<std::string, data::Image>>::iterator> index_;
};

// JSON-over-HTTP adapter over the inference library. handle() never throws.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& request);

  // Loads a checkpoint file as the single active model; waits for in-flight requests.
  void load_checkpoint(const std::filesystem::path& path, const std::string& id = "");
  std::optional<std::string> active_checkpoint() const;

  const ServiceConfig& config() const { return config_; }
  std::uint64_t request_count() const { return requests_.load(); }

 private:
  struct Active {
    std::string id;
    model::ModelBundle<float> bundle;
    nlohmann::json manifest;
  };

  Response dispatch(const Request& request);
  Response health();
  Response list_checkpoints();
  Response load(const nlohmann::json& body);
  Response upload(const nlohmann::json& body);
  Response encode(const nlohmann::json& body);
  Response decode(const nlohmann::json& body);
  Response sample(const nlohmann::json& body);
  Response blend(const nlohmann::json& body);
  Response interpolate(const nlohmann::json& body);

  const Active& require_model() const;
  data::Image require_image(const nlohmann::json& body, const std::string& field);

  ServiceConfig config_;
  ImageStore images_;
  mutable std::shared_mutex model_mutex_;
  std::unique_ptr<Active> active_;
  std::atomic<std::uint64_t> requests_{0};
  std::mutex inflight_mutex_;
  std::condition_variable inflight_cv_;
  std::size_t inflight_ = 0;
};

// Serves a Service over HTTP/1.1 on a background thread.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  // Binds and starts listening; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace saalae::service
