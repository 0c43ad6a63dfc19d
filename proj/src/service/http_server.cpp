#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "saalae/service.hpp"

namespace saalae::service {

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : service(s) {
    const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = service.handle({req.method, req.path, req.body});
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    const auto& origin = service.config().cors_origin;
    if (!origin.empty()) {
      server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                  {"Access-Control-Allow-Headers", "Content-Type"},
                                  {"Vary", "Origin"}});
    }
    server.set_payload_max_length(service.config().max_body_bytes);
    const char* any = R"(.*)";
    server.Get(any, forward);
    server.Post(any, forward);
    server.Options(any, forward);
    server.Put(any, forward);
    server.Delete(any, forward);
    server.Patch(any, forward);
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw std::logic_error("server already started");
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
}

}  // namespace saalae::service
