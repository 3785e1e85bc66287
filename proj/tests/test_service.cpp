// Copyright 2026 The Plate Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <httplib.h>

#include <filesystem>
#include <future>
#include <numeric>

#include "oracles/fixtures.hpp"
#include "plate/dataset.hpp"
#include "plate/hash.hpp"
#include "plate/service.hpp"
#include "plate/synth.hpp"

using namespace plate;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> final_labels() {
  auto taxonomy = ClassTaxonomy::default_merges();
  for (const auto& raw : standard_raw_labels()) {
    taxonomy.add_raw_label(raw);
  }
  return taxonomy.final_labels();
}

struct Fixture {
  fs::path dir;
  fs::path weights;
  Model model;

  Fixture()
      : dir(fs::temp_directory_path() / "plate_test_service"),
        model(fixture::small_backbone(1000, 17).replace_head(23, 4, final_labels())) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    weights = dir / "model.plf";
    save_weights(model, weights);
    model = load_weights(weights);
  }
};

std::string png_bytes(int index) {
  const auto bytes = encode_png(synth_image("hummus", "hummus", index, 40, 30, 3));
  return {bytes.begin(), bytes.end()};
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

ServiceConfig test_config(const fs::path& weights) {
  ServiceConfig c;
  c.port = 0;
  c.weights = weights;
  return c;
}

nlohmann::json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return nlohmann::json::parse(r->body);
}

}  // namespace

TEST_CASE("every endpoint answers 503 until weights load, then 200") {
  Fixture f;
  ClassificationService service(test_config(f.weights));
  const int port = service.start();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 503);
  CHECK(cli.Get("/classes")->status == 503);
  CHECK(cli.Post("/classify", png_bytes(0), "image/png")->status == 503);
  CHECK_FALSE(service.loaded());

  service.load();
  health = cli.Get("/health");
  CHECK(health->status == 200);
  const auto h = body_of(health);
  CHECK(h["status"] == "ok");
  CHECK(h["model_version"] == "sha256:" + sha256_hex_file(f.weights));

  const auto classes = cli.Get("/classes");
  CHECK(classes->status == 200);
  const auto list = body_of(classes)["classes"];
  REQUIRE(list.size() == 23);
  for (std::size_t i = 0; i < list.size(); ++i) {
    CHECK(list[i]["index"] == i);
    if (i > 0) {
      CHECK(list[i - 1]["label"].get<std::string>() < list[i]["label"].get<std::string>());
    }
  }
  service.stop();
}

TEST_CASE("classify returns the in-process prediction bit for bit") {
  Fixture f;
  ClassificationService service(test_config(f.weights));
  const int port = service.start();
  service.load();
  httplib::Client cli("127.0.0.1", port);
  const auto image = png_bytes(1);
  const auto version = weight_file_version(f.weights);

  const auto r = cli.Post("/classify", image, "image/png");
  REQUIRE(r->status == 200);
  const auto j = body_of(r);
  CHECK(j["model_version"] == version);
  CHECK(j["latency_ms"].get<double>() >= 0.0);
  const auto expected = classify_image(f.model, as_bytes(image), 5);
  REQUIRE(j["predictions"].size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(j["predictions"][i]["label"] == expected.top[i].label);
    CHECK(j["predictions"][i]["probability"].get<float>() == expected.top[i].probability);
    if (i > 0) {
      CHECK(j["predictions"][i - 1]["probability"].get<double>() >= j["predictions"][i]["probability"].get<double>());
    }
  }

  const auto again = body_of(cli.Post("/classify", image, "image/png"));
  CHECK(again["predictions"] == j["predictions"]);

  const auto all = body_of(cli.Post("/classify?k=23", image, "image/png"));
  REQUIRE(all["predictions"].size() == 23);
  double sum = 0.0;
  for (const auto& p : all["predictions"]) {
    sum += p["probability"].get<double>();
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);

  httplib::MultipartFormDataItems items{{"image", image, "dish.png", "image/png"}, {"k", "3", "", ""}};
  const auto multipart = cli.Post("/classify", items);
  REQUIRE(multipart->status == 200);
  const auto m = body_of(multipart);
  REQUIRE(m["predictions"].size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m["predictions"][i] == j["predictions"][i]);
  }
  service.stop();
}

TEST_CASE("constructed bad requests map to 400, 413 and 422") {
  Fixture f;
  auto cfg = test_config(f.weights);
  const auto image = png_bytes(2);
  cfg.max_upload_bytes = image.size() + 16;
  ClassificationService service(cfg);
  const int port = service.start();
  service.load();
  httplib::Client cli("127.0.0.1", port);

  CHECK(cli.Post("/classify", image, "image/png")->status == 200);
  CHECK(cli.Post("/classify", "not an image", "image/png")->status == 400);
  CHECK(cli.Post("/classify", "", "image/png")->status == 400);
  auto truncated = image.substr(0, image.size() / 2);
  CHECK(cli.Post("/classify", truncated, "image/png")->status == 400);

  const std::string big(cfg.max_upload_bytes + 1, 'x');
  const auto over = cli.Post("/classify", big, "image/png");
  REQUIRE(over);
  CHECK(over->status == 413);
  const std::string huge(cfg.max_upload_bytes + (1u << 20), 'x');
  const auto way_over = cli.Post("/classify", huge, "image/png");
  if (way_over) {
    CHECK(way_over->status == 413);
  }

  for (const auto* k : {"0", "24", "-1", "abc", "5x"}) {
    const auto r = cli.Post(std::string("/classify?k=") + k, image, "image/png");
    REQUIRE(r);
    CHECK_MESSAGE(r->status == 422, k);
    CHECK(body_of(r).contains("error"));
  }
  service.stop();
}

TEST_CASE("sixteen concurrent requests each get their own image's result") {
  Fixture f;
  ClassificationService service(test_config(f.weights));
  const int port = service.start();
  service.load();

  constexpr int kRequests = 16;
  std::vector<std::string> images;
  std::vector<Prediction> expected;
  for (int i = 0; i < kRequests; ++i) {
    const auto bytes = encode_png(synth_image(final_labels()[static_cast<std::size_t>(i)], "v", i, 36, 36, 9));
    images.emplace_back(bytes.begin(), bytes.end());
    expected.push_back(classify_image(f.model, as_bytes(images.back()), 5));
  }
  std::vector<std::future<nlohmann::json>> futures;
  for (int i = 0; i < kRequests; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      httplib::Client cli("127.0.0.1", port);
      const auto r = cli.Post("/classify", images[static_cast<std::size_t>(i)], "image/png");
      if (!r || r->status != 200) {
        return nlohmann::json(r ? std::to_string(r->status) : httplib::to_string(r.error()));
      }
      return nlohmann::json::parse(r->body);
    }));
  }
  for (int i = 0; i < kRequests; ++i) {
    const auto j = futures[static_cast<std::size_t>(i)].get();
    REQUIRE_MESSAGE(j.is_object(), "request ", i, " ", j.dump());
    const auto& e = expected[static_cast<std::size_t>(i)];
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(j["predictions"][r]["label"] == e.top[r].label);
      CHECK(j["predictions"][r]["probability"].get<float>() == e.top[r].probability);
    }
  }
  service.stop();
}

TEST_CASE("service configuration is validated") {
  ServiceConfig c;
  CHECK_NOTHROW(c.validate());
  c.max_upload_bytes = 0;
  CHECK_THROWS_AS(c.validate(), ServiceError);
  c = {};
  c.default_k = 0;
  CHECK_THROWS_AS(c.validate(), ServiceError);
  c = {};
  c.timeout_seconds = 0;
  CHECK_THROWS_AS(c.validate(), ServiceError);
  c = {};
  c.port = 70000;
  CHECK_THROWS_AS(c.validate(), ServiceError);
  c = {};
  c.weights = "w.plf";
  CHECK(ServiceConfig::from_json(c.to_json()).to_json() == c.to_json());

  Fixture f;
  ServiceConfig big_k = test_config(f.weights);
  big_k.default_k = 24;
  ClassificationService service(big_k);
  CHECK_THROWS_AS(service.load(), ServiceError);
  ClassificationService missing(test_config(f.dir / "absent.plf"));
  CHECK_THROWS(missing.load());
  CHECK_FALSE(missing.loaded());
}
