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

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles/fixtures.hpp"
#include "oracles/oracles.hpp"
#include "plate/synth.hpp"
#include "plate/trainer.hpp"

using namespace plate;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("plate_test_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelSpec small_spec(int classes) {
  ModelSpec s;
  s.resolution = 32;
  s.stem_channels = 8;
  s.settings = {{1, 8, 1, 1}, {4, 12, 2, 2}};
  s.head_width = 24;
  s.num_classes = classes;
  return s;
}

}  // namespace

TEST_CASE("analytic head gradient matches central finite differences") {
  std::mt19937 gen(5);
  for (int trial = 0; trial < 5; ++trial) {
    const int classes = 3;
    const int dim = 4;
    FeatureCache cache;
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int s = 0; s < 5; ++s) {
      const auto f = oracle::random_values(dim, gen, -2, 2);
      const int y = static_cast<int>(gen() % classes);
      cache.push(f, y, "s");
      xs.emplace_back(f.begin(), f.end());
      ys.push_back(y);
    }
    const auto wf = oracle::random_values(classes * dim, gen);
    const auto bf = oracle::random_values(classes, gen);
    std::vector<double> w(wf.begin(), wf.end());
    std::vector<double> b(bf.begin(), bf.end());
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    const auto g = head_gradient(w, b, cache, rows, classes);
    CHECK(std::abs(g.loss - oracle::head_loss(w, b, xs, ys, classes)) < 1e-12);

    const double h = 1e-5;
    double worst = 0.0;
    auto check = [&](std::vector<double>& params, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + h;
        const double up = oracle::head_loss(w, b, xs, ys, classes);
        params[i] = keep - h;
        const double down = oracle::head_loss(w, b, xs, ys, classes);
        params[i] = keep;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
      }
    };
    check(w, g.weights);
    check(b, g.bias);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("Adam leaves parameters unchanged at zero gradient or zero rate") {
  std::vector<double> p{1.0, -2.0, 3.5};
  const auto before = p;
  Adam adam(3, 0.9, 0.999, 1e-8);
  const std::vector<double> zero(3, 0.0);
  for (int i = 0; i < 10; ++i) {
    adam.step(p, zero, 1e-3);
  }
  CHECK(p == before);
  const std::vector<double> g{0.5, -1.0, 2.0};
  Adam adam2(3, 0.9, 0.999, 1e-8);
  adam2.step(p, g, 0.0);
  CHECK(p == before);
  // First bias-corrected step moves each parameter by lr against the sign.
  adam2.step(p, g, 0.1);
  CHECK(adam2.steps() == 2);
  Adam fresh(3, 0.9, 0.999, 1e-8);
  auto q = before;
  fresh.step(q, g, 0.1);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs((before[i] - q[i]) - 0.1 * (g[i] > 0 ? 1 : -1)) < 1e-6);
  }
}

TEST_CASE("two separable classes reach 99% training accuracy within 50 epochs") {
  const auto cache = fixture::separable_features(2, 100, 16, 3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.early_stop = false;
  cfg.seed = 1;
  const auto r = train_head(cache, 2, cfg);
  CHECK(r.train_accuracy >= 0.99);
  CHECK(r.epoch_loss.size() == 50);
  for (std::size_t e = 2; e < r.epoch_loss.size(); ++e) {
    CHECK(r.epoch_loss[e] <= r.epoch_loss[e - 1] + 1e-3);
  }
}

TEST_CASE("training is deterministic and seed-dependent") {
  const auto cache = fixture::separable_features(4, 30, 8, 9);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.seed = 7;
  const auto a = train_head(cache, 4, cfg);
  const auto b = train_head(cache, 4, cfg);
  CHECK(a.head.weights == b.head.weights);
  CHECK(a.epoch_loss == b.epoch_loss);
  cfg.seed = 8;
  CHECK(train_head(cache, 4, cfg).head.weights != a.head.weights);
}

TEST_CASE("early stopping after a plateau") {
  const auto cache = fixture::separable_features(2, 20, 4, 1, 0.01f);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.head_learning_rate = 0.05;
  const auto r = train_head(cache, 2, cfg);
  CHECK(r.stopped_early);
  CHECK(r.epoch_loss.size() < 500);
}

TEST_CASE("train_head rejects bad input") {
  TrainConfig cfg;
  CHECK_THROWS_AS(train_head(FeatureCache{}, 2, cfg), TrainError);
  auto cache = fixture::separable_features(2, 3, 4, 1);
  cache.labels[0] = 5;
  CHECK_THROWS_AS(train_head(cache, 2, cfg), TrainError);
  auto inf = fixture::separable_features(2, 3, 4, 1);
  inf.features[0] = INFINITY;
  CHECK_THROWS_WITH_AS(train_head(inf, 2, cfg), doctest::Contains("non-finite"), TrainError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_head(fixture::separable_features(2, 3, 4, 1), 2, cfg), TrainError);
  TrainConfig lr;
  lr.head_learning_rate = 0.0;
  CHECK_THROWS_AS(lr.validate(), TrainError);
  CHECK(TrainConfig::from_json(TrainConfig{}.to_json()).to_json() == TrainConfig{}.to_json());
}

TEST_CASE("extract_features: determinism, batching equivalence and cache reuse") {
  const auto dir = temp_dir("extract");
  SynthConfig sc;
  sc.width = sc.height = 40;
  sc.classes = {{"falafel", 3}, {"hummus", 2}};
  sc.jpeg_every = 2;
  write_synthetic_corpus(dir / "corpus", sc);
  write_file_bytes(dir / "corpus" / "hummus" / "zz_dup.png",
                   read_file_bytes(dir / "corpus" / "hummus" / "img_0000.png"));
  write_file_bytes(dir / "corpus" / "hummus" / "zz_bad.png", std::vector<std::uint8_t>{1, 2, 3});
  auto taxonomy = ClassTaxonomy::default_merges();
  auto manifest = scan_corpus(dir / "corpus", taxonomy).manifest;
  REQUIRE(manifest.records.size() == 6);
  // Re-add the corrupt file so extraction has to skip it.
  SampleRecord bad;
  bad.path = "hummus/zz_bad.png";
  bad.raw_label = bad.label = "hummus";
  manifest.records.push_back(bad);

  const auto model = Model::build(small_spec(2), 3, manifest.labels)
                         .calibrate_batchnorm(Tensor(Shape4{2, 3, 32, 32}, std::vector<float>(2 * 3 * 32 * 32, 0.5f)));
  std::vector<std::size_t> all(manifest.records.size());
  std::iota(all.begin(), all.end(), 0);

  FeatureStore store(backbone_fingerprint(model), 24);
  const auto first = extract_features(model, manifest, all, &store);
  REQUIRE(first.cache.size() == 6);
  CHECK(first.cache.dim == 24);
  REQUIRE(first.skipped.size() == 1);
  CHECK(first.skipped[0].path == "hummus/zz_bad.png");
  // The duplicate file content is found in the store within the same run or
  // computed twice, depending on scheduling; either way the rows agree.
  const auto dup_a = first.cache.row(3);
  const auto dup_b = first.cache.row(5);
  CHECK(std::equal(dup_a.begin(), dup_a.end(), dup_b.begin()));
  CHECK(first.cache.paths[5] == "hummus/zz_dup.png");

  const auto second = extract_features(model, manifest, all, &store);
  CHECK(second.reused == 6);
  CHECK(second.computed == 0);
  CHECK(second.cache.features == first.cache.features);

  store.save(dir / "features.plf");
  auto reopened = FeatureStore::open(dir / "features.plf", backbone_fingerprint(model), 24);
  CHECK(reopened.size() == store.size());
  CHECK(FeatureStore::open(dir / "features.plf", "other-model", 24).size() == 0);
  CHECK(backbone_fingerprint(model.replace_head(5, 1)) == backbone_fingerprint(model));
  const auto third = extract_features(model, manifest, all, &reopened, 1);
  CHECK(third.reused == 6);
  CHECK(third.cache.features == first.cache.features);

  // Batched forward matches one image at a time.
  Tensor batch(Shape4{3, 3, 32, 32});
  std::vector<Tensor> singles;
  for (int i = 0; i < 3; ++i) {
    singles.push_back(prepare_image(model, read_image(manifest.resolve(manifest.records[static_cast<std::size_t>(i)]))));
    std::copy(singles.back().data().begin(), singles.back().data().end(),
              batch.data().begin() + static_cast<long>(i) * 3 * 32 * 32);
  }
  const auto batched = model.features(batch);
  for (int i = 0; i < 3; ++i) {
    const auto one = model.features(singles[static_cast<std::size_t>(i)]);
    for (int k = 0; k < 24; ++k) {
      CHECK(std::abs(batched.at(i, k, 0, 0) - one.at(0, k, 0, 0)) < 1e-5);
      CHECK(one.at(0, k, 0, 0) == first.cache.row(static_cast<std::size_t>(i))[static_cast<std::size_t>(k)]);
    }
  }
}

TEST_CASE("default model spec features are 1280 long") {
  ModelSpec spec;
  spec.num_classes = 23;
  const auto model = Model::build(spec, 1);
  RgbImage img(50, 50);
  std::fill(img.pixels.begin(), img.pixels.end(), 90);
  const auto f = model.features(prepare_image(model, img));
  CHECK(f.shape() == Shape4{1, 1280, 1, 1});
}
