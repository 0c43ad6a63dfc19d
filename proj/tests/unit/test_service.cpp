#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "saalae/checkpoint.hpp"
#include "saalae/data/image.hpp"
#include "saalae/inference.hpp"
#include "saalae/service.hpp"

using namespace saalae;
using namespace saalae::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

model::ArchitectureConfig small_arch() {
  model::ArchitectureConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.base_channels = 4;
  c.attention_resolutions = {8};
  c.attention_reduction = 2;
  return c;
}

struct Fixture {
  fs::path dir;
  model::ModelBundle<float> bundle;
};

// One checkpoint at <dir>/runs/a.ckpt, reloaded through the archive so weights match what the service sees.
const Fixture& fixture() {
  static const Fixture f = [] {
    const auto dir = fs::temp_directory_path() / "saalae_test_service";
    fs::remove_all(dir);
    fs::create_directories(dir / "runs");
    const auto b = model::build<float>(small_arch(), 3);
    io::save_checkpoint(dir / "runs" / "a.ckpt", b, {{"best_val_fid", 12.5}});
    return Fixture{dir, io::load_checkpoint(dir / "runs" / "a.ckpt").bundle};
  }();
  return f;
}

ServiceConfig config_for(const fs::path& dir) {
  ServiceConfig c;
  c.checkpoint_dir = dir;
  return c;
}

Response call(Service& s, const std::string& method, const std::string& path, const json& body = json::object()) {
  return s.handle({method, path, method == "GET" ? "" : body.dump()});
}

json ok(const Response& r) {
  EXPECT_EQ(r.status, 200) << r.body;
  return json::parse(r.body);
}

data::Image picture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  data::Image im(16, 16);
  for (auto& v : im.pixels) v = u(rng) / 255.0f;
  return im;
}

std::string png64(const data::Image& im) { return base64_encode(data::encode_png(im)); }

std::string upload(Service& s, const data::Image& im) {
  return ok(call(s, "POST", "/images", {{"png_base64", png64(im)}})).at("image_id");
}

Tensor<float> as_batch(const data::Image& im) { return data::to_batch(std::vector<data::Image>{im}); }

std::string library_png(const Tensor<float>& frames, std::int64_t row) {
  return png64(data::from_batch(frames.slice_rows(row, row + 1)).front());
}

std::unique_ptr<Service> loaded_service() {
  auto s = std::make_unique<Service>(config_for(fixture().dir));
  s->load_checkpoint(fixture().dir / "runs" / "a.ckpt", "runs/a.ckpt");
  return s;
}

}  // namespace

TEST(Base64, RoundTripAndRejection) {
  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 5u, 100u}) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<std::uint8_t>(i * 37 + 11);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
  EXPECT_EQ(base64_encode({'M'}), "TQ==");
  for (const char* bad : {"TQ=", "T===", "TW@u", "TWFu=", "=TWF"}) EXPECT_THROW(base64_decode(bad), std::invalid_argument);
}

TEST(ImageStoreLru, EvictsLeastRecentlyUsed) {
  ImageStore store(2);
  const auto a = store.put(data::Image(2, 2, 0.1f));
  const auto b = store.put(data::Image(2, 2, 0.2f));
  EXPECT_NE(a, b);
  ASSERT_TRUE(store.get(a));
  const auto c = store.put(data::Image(2, 2, 0.3f));
  EXPECT_EQ(store.size(), 2u);
  EXPECT_TRUE(store.get(a));
  EXPECT_FALSE(store.get(b));
  EXPECT_EQ(store.get(c)->pixels[0], 0.3f);
}

TEST(Checkpoints, ListingCoversEmptyValidAndCorrupt) {
  const auto empty = fs::temp_directory_path() / "saalae_test_service_empty";
  fs::remove_all(empty);
  fs::create_directories(empty);
  Service none(config_for(empty));
  EXPECT_EQ(ok(call(none, "GET", "/checkpoints")), json::array());

  Service s(config_for(fixture().dir));
  auto list = ok(call(s, "GET", "/checkpoints"));
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].at("id"), "runs/a.ckpt");
  EXPECT_EQ(list[0].at("valid"), true);
  EXPECT_EQ(list[0].at("config_hash"), small_arch().hash());
  EXPECT_EQ(list[0].at("val_fid"), 12.5);
  EXPECT_EQ(list[0].at("config").at("resolution"), 16);

  const auto broken = fs::temp_directory_path() / "saalae_test_service_broken";
  fs::remove_all(broken);
  fs::create_directories(broken);
  fs::copy_file(fixture().dir / "runs" / "a.ckpt", broken / "good.ckpt");
  std::ofstream(broken / "bad.ckpt") << "definitely not an archive";
  Service t(config_for(broken));
  list = ok(call(t, "GET", "/checkpoints"));
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].at("id"), "bad.ckpt");
  EXPECT_EQ(list[0].at("valid"), false);
  EXPECT_TRUE(list[0].contains("error"));
  EXPECT_EQ(list[1].at("valid"), true);
  EXPECT_EQ(call(t, "POST", "/checkpoints/load", {{"id", "bad.ckpt"}}).status, 400);
  EXPECT_EQ(call(t, "POST", "/checkpoints/load", {{"id", "nope.ckpt"}}).status, 404);
  EXPECT_EQ(ok(call(t, "POST", "/checkpoints/load", {{"id", "good.ckpt"}})).at("id"), "good.ckpt");
  EXPECT_EQ(t.active_checkpoint(), "good.ckpt");
  EXPECT_EQ(ok(call(t, "GET", "/health")).at("checkpoint"), "good.ckpt");
}

TEST(Errors, StatusCodesAndFieldMessages) {
  Service bare(config_for(fixture().dir));
  const auto r = call(bare, "POST", "/encode", {{"image_id", "img-1"}});
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(json::parse(r.body).at("code"), "no_checkpoint");

  auto s = loaded_service();
  EXPECT_EQ(call(*s, "POST", "/encode", {{"image_id", "img-999"}}).status, 404);
  EXPECT_EQ(call(*s, "GET", "/encode").status, 405);
  EXPECT_EQ(call(*s, "GET", "/nowhere").status, 404);
  EXPECT_EQ(s->handle({"POST", "/encode", "{not json"}).status, 400);
  EXPECT_EQ(s->handle({"POST", "/encode", "[1, 2]"}).status, 400);
  EXPECT_EQ(s->handle({"OPTIONS", "/encode", ""}).status, 204);

  const auto wrong = call(*s, "POST", "/decode", {{"latent", {1.0, 2.0}}});
  EXPECT_EQ(wrong.status, 400);
  EXPECT_EQ(json::parse(wrong.body).at("field"), "latent");
  EXPECT_EQ(json::parse(wrong.body).at("code"), "bad_shape");
  const auto missing = call(*s, "POST", "/blend", {{"mu", 0.5}});
  EXPECT_EQ(json::parse(missing.body).at("field"), "image_id");

  const auto id = upload(*s, picture(1));
  EXPECT_EQ(call(*s, "POST", "/blend", {{"image_id", id}, {"mu", 1.5}, {"z_seed", 1}}).status, 400);
  EXPECT_EQ(call(*s, "POST", "/interpolate", {{"image_id_a", id}, {"image_id_b", id}, {"alphas", {0.0, -0.1}}}).status,
            400);
  EXPECT_EQ(call(*s, "POST", "/sample", {{"z_seed", 1}, {"n", 0}}).status, 400);
  EXPECT_EQ(call(*s, "POST", "/images", {{"png_base64", "@@@@"}}).status, 400);
  EXPECT_EQ(call(*s, "POST", "/images", {{"png_base64", png64(data::Image(8, 8, 0.5f))}}).status, 400);
  EXPECT_EQ(ok(call(*s, "POST", "/images", {{"png_base64", png64(data::Image(8, 8, 0.5f))}, {"resize", true}}))
                .at("width"),
            16);

  ServiceConfig small = config_for(fixture().dir);
  small.max_body_bytes = 16;
  Service limited(small);
  EXPECT_EQ(limited.handle({"POST", "/decode", std::string(64, ' ')}).status, 413);
}

TEST(Equivalence, ResponsesMatchLibraryCalls) {
  auto s = loaded_service();
  const auto& b = fixture().bundle;
  const auto x = picture(2), y = picture(3);
  const auto ix = upload(*s, x), iy = upload(*s, y);

  const auto latent = ok(call(*s, "POST", "/encode", {{"image_id", ix}})).at("latent");
  const auto w = infer::encode(b, as_batch(x));
  ASSERT_EQ(latent.size(), 8u);
  for (int j = 0; j < 8; ++j) EXPECT_EQ(latent[j].get<float>(), w[j]);

  const auto decoded = ok(call(*s, "POST", "/decode", {{"latent", latent}})).at("png_base64");
  EXPECT_EQ(decoded, library_png(infer::reconstruct(b, as_batch(x)), 0));

  const auto blended = ok(call(*s, "POST", "/blend", {{"image_id", ix}, {"mu", 0.3}, {"z_seed", 17}}));
  const auto lib = infer::blend(b, as_batch(x), 0.3, 17);
  EXPECT_EQ(blended.at("png_base64"), library_png(lib.images, 0));
  for (int j = 0; j < 8; ++j) EXPECT_EQ(blended.at("latent")[j].get<float>(), lib.latent[j]);
  const auto mu0 = ok(call(*s, "POST", "/blend", {{"image_id", ix}, {"mu", 0}, {"z_seed", 17}}));
  EXPECT_EQ(mu0.at("png_base64"), decoded);

  const auto strip = ok(call(*s, "POST", "/interpolate", {{"image_id_a", ix}, {"image_id_b", iy}}));
  const auto li = infer::interpolate(b, as_batch(x), as_batch(y));
  ASSERT_EQ(strip.at("alphas").get<std::vector<double>>(), (std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, 1.0}));
  ASSERT_EQ(strip.at("frames").size(), 6u);
  for (int k = 0; k < 6; ++k) EXPECT_EQ(strip.at("frames")[k], library_png(li.frames, k));
  const auto ends =
      ok(call(*s, "POST", "/interpolate", {{"image_id_a", ix}, {"image_id_b", iy}, {"alphas", {0.0, 1.0}}}));
  EXPECT_EQ(ends.at("frames")[0], decoded);
  EXPECT_EQ(ends.at("frames")[1], library_png(infer::reconstruct(b, as_batch(y)), 0));

  const auto sampled = ok(call(*s, "POST", "/sample", {{"z_seed", 5}, {"n", 3}}));
  const auto ls = infer::sample_random(b, 5, 3);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(sampled.at("images")[k], library_png(ls, k));
}

TEST(Concurrency, ParallelEncodesMatchSerial) {
  auto s = loaded_service();
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) ids.push_back(upload(*s, picture(10 + i)));
  std::vector<std::string> serial;
  for (const auto& id : ids) serial.push_back(call(*s, "POST", "/encode", {{"image_id", id}}).body);

  std::vector<std::vector<std::string>> parallel(4, std::vector<std::string>(ids.size()));
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto i = (k + t) % ids.size();
        parallel[t][i] = call(*s, "POST", "/encode", {{"image_id", ids[i]}}).body;
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& run : parallel) EXPECT_EQ(run, serial);
}

TEST(Timeout, SlowRequestsGet503) {
  ServiceConfig c = config_for(fixture().dir);
  c.timeout = std::chrono::milliseconds(1);
  Service s(c);
  s.load_checkpoint(fixture().dir / "runs" / "a.ckpt");
  const auto r = call(s, "POST", "/sample", {{"z_seed", 1}, {"n", 64}});
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(json::parse(r.body).at("code"), "timeout");
}

TEST(Fuzz, ThousandMalformedRequestsNeverCrash) {
  auto s = loaded_service();
  const auto valid_id = upload(*s, picture(4));
  const std::vector<std::string> paths{"/health", "/checkpoints", "/checkpoints/load", "/images", "/encode",
                                       "/decode", "/sample", "/blend", "/interpolate", "/", "/encode/x", ""};
  const std::vector<std::string> methods{"GET", "POST", "PUT", "DELETE", "OPTIONS", "PATCH", ""};
  const std::vector<std::string> keys{"image_id", "image_id_a", "image_id_b", "latent", "mu", "z_seed", "n",
                                      "alphas",   "png_base64", "resize",     "id",     "x"};
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto random_value = [&](auto&& self, int depth) -> json {
    switch (pick(depth > 2 ? 8 : 10)) {
      case 0: return nullptr;
      case 1: return bool(rng() & 1);
      case 2: return static_cast<std::int64_t>(rng()) >> pick(64);
      case 3: return std::ldexp(double(static_cast<std::int32_t>(rng())), int(pick(80)) - 40);
      case 4: return valid_id;
      case 5: return std::string(pick(12), char('!' + pick(90)));
      case 6: return png64(picture(rng()));
      case 7: return std::vector<double>(pick(12), 0.5);
      case 8: {
        json a = json::array();
        for (std::size_t i = 0, n = pick(5); i < n; ++i) a.push_back(self(self, depth + 1));
        return a;
      }
      default: {
        json o = json::object();
        for (std::size_t i = 0, n = pick(5); i < n; ++i) o[keys[pick(keys.size())]] = self(self, depth + 1);
        return o;
      }
    }
  };
  int served = 0;
  for (int i = 0; i < 1000; ++i) {
    Request req{methods[pick(methods.size())], paths[pick(paths.size())], ""};
    if (rng() % 4 == 0) req.method = "POST";
    switch (pick(4)) {
      case 0: {
        std::string junk(pick(64), '\0');
        for (auto& ch : junk) ch = static_cast<char>(rng());
        req.body = junk;
        break;
      }
      case 1: {
        auto text = random_value(random_value, 0).dump();
        req.body = text.substr(0, pick(text.size() + 1));
        break;
      }
      default: {
        json o = json::object();
        for (std::size_t k = 0, n = 1 + pick(4); k < n; ++k) o[keys[pick(keys.size())]] = random_value(random_value, 1);
        req.body = o.dump();
      }
    }
    const auto r = s->handle(req);
    ASSERT_TRUE(r.status == 200 || r.status == 204 || r.status == 400 || r.status == 404 || r.status == 405 ||
                r.status == 409)
        << req.method << " " << req.path << " " << req.body.substr(0, 200) << " -> " << r.status << " " << r.body;
    if (r.status != 204) ASSERT_FALSE(json::parse(r.body, nullptr, false).is_discarded());
    served += r.status == 200;
  }
  EXPECT_GT(served, 0);
  EXPECT_EQ(s->active_checkpoint(), "runs/a.ckpt");
  EXPECT_EQ(ok(call(*s, "GET", "/health")).at("status"), "ok");
}

TEST(Http, ServesOverLoopbackWithCors) {
  ServiceConfig c = config_for(fixture().dir);
  c.cors_origin = "http://explorer.local";
  Service s(c);
  s.load_checkpoint(fixture().dir / "runs" / "a.ckpt", "runs/a.ckpt");
  HttpServer server(s);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "http://explorer.local");
  EXPECT_EQ(json::parse(health->body).at("checkpoint"), "runs/a.ckpt");

  const auto direct = s.handle({"POST", "/sample", json{{"z_seed", 3}, {"n", 2}}.dump()});
  auto sampled = client.Post("/sample", json{{"z_seed", 3}, {"n", 2}}.dump(), "application/json");
  ASSERT_TRUE(sampled);
  EXPECT_EQ(sampled->status, 200);
  EXPECT_EQ(sampled->body, direct.body);

  auto bad = client.Post("/decode", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto preflight = client.Options("/encode");
  ASSERT_TRUE(preflight);
  EXPECT_EQ(preflight->status, 204);
  server.stop();
  EXPECT_FALSE(client.Get("/health"));
}
