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

// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "oracles/fixtures.hpp"
#include "oracles/oracles.hpp"
#include "plate/augment.hpp"
#include "plate/dataset.hpp"
#include "plate/evaluation.hpp"
#include "plate/hash.hpp"
#include "plate/layer_table.hpp"
#include "plate/model.hpp"
#include "plate/pipeline.hpp"
#include "plate/service.hpp"
#include "plate/synth.hpp"
#include "plate/trainer.hpp"

using namespace plate;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_root() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / "plate_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

Tensor random_batch(int n, int res, std::uint32_t seed) {
  std::mt19937 gen(seed);
  return Tensor(Shape4{n, 3, res, res},
                oracle::random_values(static_cast<std::size_t>(n) * 3 * res * res, gen, -2, 2));
}

ModelSpec full_spec(int classes) {
  ModelSpec s;
  s.num_classes = classes;
  return s;
}

double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, std::abs(double(a[i]) - b[i]));
  }
  return worst;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double worst = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome convolution_oracles() {
  std::mt19937 gen(20240601);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(gen() % static_cast<unsigned>(hi - lo + 1)); };
  constexpr int kCases = 120;
  double worst_conv = 0.0, worst_dw = 0.0, worst_fc = 0.0;

  for (int t = 0; t < kCases; ++t) {
    const int groups = pick(1, 3);
    const int cin = groups * pick(1, 4);
    const int cout = groups * pick(1, 4);
    const int kh = pick(1, 5), kw = pick(1, 5);
    const int sy = pick(1, 3), sx = pick(1, 3);
    const int py = pick(0, 2), px = pick(0, 2);
    const int h = pick(kh, kh + 10), w = pick(kw, kw + 10);
    const int n = pick(1, 2);
    const auto in = oracle::random_values(static_cast<std::size_t>(n) * cin * h * w, gen);
    const auto wt = oracle::random_values(static_cast<std::size_t>(cout) * (cin / groups) * kh * kw, gen);
    const auto bias = t % 3 == 0 ? std::vector<float>{} : oracle::random_values(static_cast<std::size_t>(cout), gen);
    Conv2dParams p;
    p.weights = Tensor(Shape4{cout, cin / groups, kh, kw}, wt);
    p.bias = bias;
    p.stride = {sy, sx};
    p.padding = {py, px};
    p.groups = groups;
    const auto got = conv2d(Tensor(Shape4{n, cin, h, w}, in), p);
    oracle::Dims od{};
    const auto want = oracle::conv2d(in, {n, cin, h, w}, wt, cout, kh, kw, bias, sy, sx, py, px, groups, &od);
    worst_conv = std::max(worst_conv, max_abs_diff(got.data(), want));
  }

  for (int t = 0; t < kCases; ++t) {
    const int c = pick(1, 12);
    const int k = pick(1, 5);
    const int s = pick(1, 2);
    const int pad = pick(0, 2);
    const int h = pick(k, k + 12), w = pick(k, k + 12);
    const int n = pick(1, 2);
    const auto in = oracle::random_values(static_cast<std::size_t>(n) * c * h * w, gen);
    const auto wt = oracle::random_values(static_cast<std::size_t>(c) * k * k, gen);
    const auto bias = oracle::random_values(static_cast<std::size_t>(c), gen);
    Conv2dParams p;
    p.weights = Tensor(Shape4{c, 1, k, k}, wt);
    p.bias = bias;
    p.stride = {s, s};
    p.padding = {pad, pad};
    p.groups = c;
    const auto got = depthwise_conv2d(Tensor(Shape4{n, c, h, w}, in), p);
    oracle::Dims od{};
    const auto want = oracle::conv2d(in, {n, c, h, w}, wt, c, k, k, bias, s, s, pad, pad, c, &od);
    worst_dw = std::max(worst_dw, max_abs_diff(got.data(), want));
  }

  for (int t = 0; t < kCases; ++t) {
    const int rows = pick(1, 9), din = pick(1, 300), dout = pick(1, 40);
    const auto x = oracle::random_values(static_cast<std::size_t>(rows) * din, gen);
    const auto wt = oracle::random_values(static_cast<std::size_t>(dout) * din, gen);
    const auto b = oracle::random_values(static_cast<std::size_t>(dout), gen);
    const auto got = fully_connected(Matrix(rows, din, x), Matrix(dout, din, wt), b);
    const auto want = oracle::fully_connected(x, rows, din, wt, dout, b);
    worst_fc = std::max(worst_fc, max_abs_diff(got.values, want));
  }

  const bool pass = worst_conv <= 1e-5 && worst_dw <= 1e-5 && worst_fc <= 1e-5;
  return {pass, std::to_string(kCases) + " cases each; max |diff| conv2d " + fmt("%.2e", worst_conv) +
                    ", depthwise " + fmt("%.2e", worst_dw) + ", fully_connected " + fmt("%.2e", worst_fc)};
}

Outcome batchnorm_folding() {
  auto m = Model::build(full_spec(23), 12).calibrate_batchnorm(random_batch(2, 224, 3));
  auto entries = m.entries();
  std::mt19937 gen(77);
  std::uniform_real_distribution<float> jitter(0.8f, 1.25f);
  std::uniform_real_distribution<float> shift(-0.1f, 0.1f);
  for (auto& e : entries) {
    if (e.shape.size() != 1 || e.name.starts_with("classifier")) {
      continue;
    }
    for (auto& v : e.values) {
      v = e.name.ends_with(".bias") ? v + shift(gen) : v * jitter(gen);
    }
  }
  const auto model = Model::from_entries(m.spec(), m.labels(), entries);
  const auto x = random_batch(1, 224, 4);

  auto find = [&](const std::string& name) -> const NamedArray& { return model.entry(name); };
  auto to_tensor = [](const NamedArray& a) {
    return Tensor(Shape4{a.shape[0], a.shape[1], a.shape[2], a.shape[3]}, a.values);
  };

  // Walk the unfolded chain and compare every conv+bn unit with its folded
  // convolution on the same input.
  double worst_layer = 0.0;
  int layers = 0;
  Tensor act = x;
  for (const auto& block : model.blocks()) {
    if (block.classifier) {
      continue;
    }
    Tensor y = act;
    for (const auto& u : block.units) {
      Conv2dParams conv;
      conv.weights = to_tensor(find(u.conv_name + ".weight"));
      conv.stride = {u.stride, u.stride};
      conv.padding = {u.kernel / 2, u.kernel / 2};
      conv.groups = u.groups;
      BatchNormParams bn;
      bn.gamma = find(u.bn_name + ".weight").values;
      bn.beta = find(u.bn_name + ".bias").values;
      bn.running_mean = find(u.bn_name + ".running_mean").values;
      bn.running_var = find(u.bn_name + ".running_var").values;
      bn.epsilon = model.spec().bn_epsilon;
      const auto folded_conv = fold_batchnorm(conv, bn);
      const auto unfolded = batch_norm(u.depthwise() ? depthwise_conv2d(y, conv) : conv2d(y, conv), bn);
      const auto folded = u.depthwise() ? depthwise_conv2d(y, folded_conv) : conv2d(y, folded_conv);
      worst_layer = std::max(worst_layer, max_abs_diff(unfolded.data(), folded.data()));
      ++layers;
      y = u.activation ? relu6(unfolded) : unfolded;
    }
    act = block.residual ? add(y, act) : std::move(y);
  }

  const auto fl = model.logits(x);
  const auto ul = model.logits_unfolded(x);
  const double worst_end = max_abs_diff(fl.values, ul.values);
  return {worst_layer <= 1e-4 && worst_end <= 1e-3,
          std::to_string(layers) + " conv+bn layers, max per-layer |diff| " + fmt("%.2e", worst_layer) +
              ", end-to-end logits " + fmt("%.2e", worst_end)};
}

Outcome weight_io() {
  const auto dir = work_root() / "weights";
  fs::create_directories(dir);
  const auto m = Model::build(full_spec(23), 4).calibrate_batchnorm(random_batch(2, 224, 9));
  save_weights(m, dir / "a.plf");
  save_weights(load_weights(dir / "a.plf"), dir / "b.plf");
  const auto bytes = read_file_bytes(dir / "a.plf");
  const bool identical = bytes == read_file_bytes(dir / "b.plf");

  std::vector<std::string> failures;
  auto expect_error = [&](const std::string& what, const std::vector<std::uint8_t>& data, const std::string& needle) {
    write_file_bytes(dir / "bad.plf", data);
    try {
      load_weights(dir / "bad.plf");
      failures.push_back(what + ": accepted");
    } catch (const FormatError& e) {
      if (std::string(e.what()).find(needle) == std::string::npos) {
        failures.push_back(what + ": message '" + e.what() + "' lacks '" + needle + "'");
      }
    }
  };
  auto edited = [&](auto&& edit) {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 4, 8);
    auto manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(len));
    edit(manifest);
    const auto text = manifest.dump();
    std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 4);
    const std::uint64_t new_len = text.size();
    const auto* lp = reinterpret_cast<const std::uint8_t*>(&new_len);
    out.insert(out.end(), lp, lp + 8);
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), bytes.begin() + 12 + static_cast<long>(len), bytes.end());
    return out;
  };

  auto cut = bytes;
  cut.pop_back();
  expect_error("truncated", cut, kHeadBias);
  expect_error("shape edited",
               edited([](nlohmann::json& j) {
                 for (auto& e : j["entries"]) {
                   if (e["name"] == "features.0.0.weight") {
                     e["shape"] = {3, 32, 3, 3};
                   }
                 }
               }),
               "features.0.0.weight");
  expect_error("entry renamed",
               edited([](nlohmann::json& j) { j["entries"][5]["name"] = "features.99.conv.weight"; }),
               "features.99.conv.weight");
  // Dropping the last entry leaves its bytes behind the new last entry.
  expect_error("entry dropped", edited([](nlohmann::json& j) { j["entries"].erase(j["entries"].size() - 1); }),
               kHeadWeight);
  expect_error("unknown version", edited([](nlohmann::json& j) { j["format_version"] = 7; }), "version");
  auto magic = bytes;
  magic[0] = 'X';
  expect_error("bad magic", magic, "");

  std::string detail = identical ? "save -> load -> save byte-identical (" + std::to_string(bytes.size()) + " bytes)"
                                 : "round trip differs";
  for (const auto& f : failures) {
    detail += "; " + f;
  }
  if (failures.empty()) {
    detail += "; 6 corrupted files rejected with the entry named";
  }
  return {identical && failures.empty(), detail};
}

Outcome gradient_check() {
  std::mt19937 gen(5);
  double worst = 0.0;
  int params = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int classes = 2 + trial % 5;
    const int dim = 3 + trial % 4;
    FeatureCache cache;
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int s = 0; s < 8; ++s) {
      const auto f = oracle::random_values(static_cast<std::size_t>(dim), gen, -2, 2);
      const int y = static_cast<int>(gen() % static_cast<unsigned>(classes));
      cache.push(f, y, "s");
      xs.emplace_back(f.begin(), f.end());
      ys.push_back(y);
    }
    const auto wf = oracle::random_values(static_cast<std::size_t>(classes * dim), gen);
    const auto bf = oracle::random_values(static_cast<std::size_t>(classes), gen);
    std::vector<double> w(wf.begin(), wf.end());
    std::vector<double> b(bf.begin(), bf.end());
    std::vector<std::size_t> rows(cache.size());
    std::iota(rows.begin(), rows.end(), 0);
    const auto g = head_gradient(w, b, cache, rows, classes);
    const double h = 1e-5;
    auto check = [&](std::vector<double>& p, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = oracle::head_loss(w, b, xs, ys, classes);
        p[i] = keep - h;
        const double down = oracle::head_loss(w, b, xs, ys, classes);
        p[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-6}));
        ++params;
      }
    };
    check(w, g.weights);
    check(b, g.bias);
  }
  return {worst < 1e-4, std::to_string(params) + " parameters over 20 instances, max relative error " +
                            fmt("%.2e", worst)};
}

Outcome synthetic_training() {
  const auto cache = fixture::separable_features(23, 100, 32, 23);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.early_stop = false;
  cfg.seed = 7;
  const auto r = train_head(cache, 23, cfg);
  double worst_rise = 0.0;
  for (std::size_t e = 1; e < r.epoch_loss.size(); ++e) {
    worst_rise = std::max(worst_rise, r.epoch_loss[e] - r.epoch_loss[e - 1]);
  }
  const bool pass = r.train_accuracy >= 0.99 && worst_rise <= 1e-3 && r.epoch_loss.size() <= 50;
  return {pass, "2300 samples, " + std::to_string(r.epoch_loss.size()) + " epochs, train accuracy " +
                    fmt("%.2f%%", 100.0 * r.train_accuracy) + ", loss " + fmt("%.4f", r.epoch_loss.front()) +
                    " -> " + fmt("%.4f", r.epoch_loss.back()) + ", largest epoch rise " + fmt("%.2e", worst_rise)};
}

// Shared by the determinism and service criteria.
struct PipelineFixture {
  fs::path corpus;
  fs::path backbone;
  PipelineConfig config;
};

const PipelineFixture& pipeline_fixture() {
  static const PipelineFixture f = [] {
    PipelineFixture p;
    p.corpus = work_root() / "corpus";
    write_synthetic_corpus(p.corpus, small_pipeline_corpus());
    p.backbone = work_root() / "backbone.plf";
    save_weights(Model::build(full_spec(1000), 31).calibrate_batchnorm(random_batch(4, 224, 32)), p.backbone);
    p.config.corpus_root = p.corpus;
    p.config.weights = p.backbone;
    p.config.work_dir = work_root() / "pipeline";
    // The 300-image corpus has 15 or 6 originals per class, so the
    // augmentation threshold and target are scaled to 12.
    p.config.policy.class_threshold = 12;
    p.config.policy.target_count = 12;
    p.config.train.head_learning_rate = 1e-2;
    p.config.seed = 2024;
    return p;
  }();
  return f;
}

std::map<std::string, std::string> tree_digest(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), root).generic_string()] = sha256_hex_file(e.path());
    }
  }
  return out;
}

Outcome pipeline_determinism() {
  const auto& f = pipeline_fixture();
  auto cfg = f.config;
  cfg.threads = 1;
  const auto first_result = run_pipeline(cfg);
  const auto first = tree_digest(cfg.work_dir);
  const auto kept = work_root() / "pipeline_first";
  fs::remove_all(kept);
  fs::rename(cfg.work_dir, kept);
  cfg.threads = 0;
  const auto second_result = run_pipeline(cfg);
  const auto second = tree_digest(cfg.work_dir);

  std::vector<std::string> differing;
  for (const auto& [path, digest] : first) {
    const auto it = second.find(path);
    if (it == second.end() || it->second != digest) {
      differing.push_back(path);
    }
  }
  for (const auto& [path, digest] : second) {
    if (!first.contains(path)) {
      differing.push_back(path);
    }
  }
  const bool metrics_equal = first_result.evaluation.metrics == second_result.evaluation.metrics;
  const auto totals = first_result.after.totals();
  std::string detail = std::to_string(first.size()) + " files compared (manifest, reports, metrics, weights, " +
                       "augmented images); " + std::to_string(first_result.num_classes) + " classes, " +
                       std::to_string(totals.original_train + totals.original_test) + " originals + " +
                       std::to_string(totals.augmented) + " augmented; test top-1 " +
                       fmt("%.2f%%", 100.0 * first_result.evaluation.metrics.top1());
  for (const auto& d : differing) {
    detail += "; differs: " + d;
  }
  return {differing.empty() && metrics_equal && first_result.num_classes == 23, detail};
}

Outcome augmentation_fidelity() {
  const auto root = work_root() / "threshold";
  write_synthetic_corpus(root / "corpus", threshold_corpus());
  auto prepared = prepare_dataset(root / "corpus", ClassTaxonomy::default_merges(), 0.9, 10, 99);
  AugmentationPolicy policy;  // threshold 100, target 100
  policy.seed = 5;
  const auto plan = plan_augmentation(prepared.manifest, policy);
  const auto result = materialize(prepared.manifest, plan, root / "aug");
  // Recount from the materialized manifest rather than trusting the plan.
  const auto after = ClassStats::of(result.manifest);
  const auto before = ClassStats::of(prepared.manifest);

  int small = 0, large = 0;
  std::vector<std::string> problems;
  for (const auto& [label, b] : before.per_label) {
    const auto& a = after.per_label.at(label);
    if (b.original_train < 100) {
      ++small;
      if (a.train() != 100 || a.augmented != 100 - b.original_train) {
        problems.push_back(label + " has " + std::to_string(a.train()) + " training samples");
      }
    } else {
      ++large;
      if (a.augmented != 0) {
        problems.push_back(label + " received " + std::to_string(a.augmented) + " augmented samples");
      }
    }
    if (a.original_test != b.original_test) {
      problems.push_back(label + " test count changed");
    }
  }
  for (const auto& r : result.manifest.records) {
    if (r.provenance == Provenance::augmented && !fs::exists(result.manifest.resolve(r))) {
      problems.push_back("missing " + r.path);
      break;
    }
  }
  const auto bt = before.totals(), at = after.totals();
  std::string detail = std::to_string(small) + " classes below 100 topped up to exactly 100, " +
                       std::to_string(large) + " at or above 100 untouched; train " +
                       std::to_string(bt.train()) + " -> " + std::to_string(at.train()) + ", test " +
                       std::to_string(bt.original_test) + " -> " + std::to_string(at.original_test);
  for (const auto& p : problems) {
    detail += "; " + p;
  }
  return {problems.empty() && small == 5 && large == 18, detail};
}

Outcome consolidation() {
  auto taxonomy = ClassTaxonomy::default_merges();
  const auto raw = standard_raw_labels();
  for (const auto& r : raw) {
    taxonomy.add_raw_label(r);
  }
  const auto labels = taxonomy.final_labels();
  // Same result from scanning a corpus laid out by raw label.
  auto scan_taxonomy = ClassTaxonomy::default_merges();
  const auto scanned = scan_corpus(pipeline_fixture().corpus, scan_taxonomy);
  const std::set<std::string> raw_seen(scan_taxonomy.raw_labels().begin(), scan_taxonomy.raw_labels().end());
  const bool pass = raw.size() == 27 && labels.size() == 23 && scanned.manifest.labels == labels &&
                    raw_seen.size() == 27 && taxonomy.merges().size() == 6;
  return {pass, std::to_string(raw.size()) + " raw labels, " + std::to_string(taxonomy.merges().size()) +
                    " merge rules -> " + std::to_string(labels.size()) + " final labels; scanned corpus gives " +
                    std::to_string(scanned.manifest.labels.size())};
}

Outcome metric_laws() {
  std::vector<std::string> labels;
  for (int i = 0; i < 23; ++i) {
    labels.push_back("label_" + std::to_string(100 + i));
  }
  std::vector<std::string> problems;

  std::vector<EvalSample> oracle_samples, constant_samples;
  for (int i = 0; i < 23 * 10; ++i) {
    std::vector<float> p(23, 0.01f);
    p[static_cast<std::size_t>(i % 23)] = 0.78f;
    oracle_samples.push_back({"s", i % 23, p});
    std::vector<float> c(23, 0.0f);
    c[3] = 1.0f;
    constant_samples.push_back({"s", i % 23, c});
  }
  const auto om = evaluate(oracle_samples, labels).metrics;
  if (om.top1() != 1.0 || om.top5() != 1.0) {
    problems.push_back("oracle predictor scored " + fmt("%.6f", om.top1()));
  }
  const auto cm = evaluate(constant_samples, labels).metrics;
  if (cm.hits[0] * 23 != cm.total || cm.top1() != 10.0 / 230.0) {
    problems.push_back("constant predictor scored " + fmt("%.9f", cm.top1()));
  }

  std::mt19937 gen(3);
  int evaluations = 0;
  auto check_laws = [&](const Metrics& m) {
    ++evaluations;
    if (m.top5() < m.top1()) {
      problems.push_back("top-5 below top-1");
    }
    std::int64_t sum = 0;
    for (const auto& row : m.confusion) {
      sum = std::accumulate(row.begin(), row.end(), sum);
    }
    if (sum != m.total) {
      problems.push_back("confusion total " + std::to_string(sum) + " != " + std::to_string(m.total));
    }
  };
  for (int t = 0; t < 200; ++t) {
    std::vector<EvalSample> s;
    const int n = 1 + static_cast<int>(gen() % 300);
    for (int i = 0; i < n; ++i) {
      std::vector<float> p(23);
      for (auto& v : p) {
        v = static_cast<float>(gen() % 6);
      }
      s.push_back({"s", static_cast<int>(gen() % 23), p});
    }
    check_laws(evaluate(s, labels).metrics);
  }
  check_laws(om);
  check_laws(cm);
  std::string detail = "oracle 1.0, constant " + std::to_string(cm.hits[0]) + "/" + std::to_string(cm.total) +
                       " = 1/23 exactly; laws held on " + std::to_string(evaluations) + " evaluations";
  for (const auto& p : problems) {
    detail += "; " + p;
  }
  return {problems.empty(), detail};
}

Outcome size_ratio() {
  const auto path = work_root() / "mnv2_23.plf";
  save_weights(Model::build(full_spec(23), 1), path);
  const auto mobilenet = fs::file_size(path);
  const auto resnet = synthesized_file_size(resnet50_entries(23));
  const double ratio = double(resnet) / double(mobilenet);
  return {ratio >= 8.0, "MobileNet-v2(23) " + std::to_string(mobilenet) + " bytes, ResNet-50(23) " +
                            std::to_string(resnet) + " bytes, ratio " + fmt("%.2f", ratio)};
}

Outcome latency() {
  const auto model = load_weights(pipeline_fixture().config.work_dir / "model.plf");
  const auto image = encode_jpeg(synth_image("kabsa", "kabsa", 0, 224, 224, 1));
  std::vector<double> ms;
  for (int i = 0; i < 50; ++i) {
    ms.push_back(classify_image(model, image, 5).latency_ms);
  }
  std::sort(ms.begin(), ms.end());
  const double median = (ms[24] + ms[25]) / 2.0;
  return {median < 200.0, "224x224 JPEG decode + preprocess + forward, 50 runs: median " + fmt("%.1f ms", median) +
                              ", max " + fmt("%.1f ms", ms.back())};
}

struct CliLine {
  std::string label;
  float probability;
};

std::vector<CliLine> run_cli_classify(const fs::path& image, const fs::path& weights, int k) {
  const std::string cmd = std::string("\"") + PLATE_CLI_PATH + "\" classify \"" + image.string() + "\" --weights \"" +
                          weights.string() + "\" --k " + std::to_string(k);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) {
    throw std::runtime_error("cannot run " + cmd);
  }
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) {
    out += buf;
  }
  if (pclose(pipe) != 0) {
    throw std::runtime_error("CLI failed: " + cmd);
  }
  std::vector<CliLine> lines;
  std::istringstream in(out);
  std::string label, prob;
  while (in >> label >> prob) {
    lines.push_back({label, std::strtof(prob.c_str(), nullptr)});
  }
  return lines;
}

Outcome service_contract() {
  const auto& f = pipeline_fixture();
  const auto weights = f.config.work_dir / "model.plf";
  const auto model = load_weights(weights);
  std::vector<fs::path> images;
  for (const auto& e : fs::recursive_directory_iterator(f.corpus)) {
    if (e.is_regular_file()) {
      images.push_back(e.path());
    }
  }
  std::sort(images.begin(), images.end());
  fs::path jpeg;
  for (const auto& p : images) {
    if (sniff_format(read_file_bytes(p)) == ImageFormat::Jpeg) {
      jpeg = p;
      break;
    }
  }
  std::vector<std::string> problems;

  ServiceConfig cfg;
  cfg.port = 0;
  cfg.weights = weights;
  const auto jpeg_bytes = read_file_bytes(jpeg);
  cfg.max_upload_bytes = 64u << 10;
  ClassificationService service(cfg);
  const int port = service.start();
  httplib::Client cli("127.0.0.1", port);
  const std::string body(jpeg_bytes.begin(), jpeg_bytes.end());

  auto status = [&](const httplib::Result& r) { return r ? r->status : -1; };
  const int before_health = status(cli.Get("/health"));
  const int before_classify = status(cli.Post("/classify", body, "image/jpeg"));
  if (before_health != 503 || before_classify != 503) {
    problems.push_back("before load: health " + std::to_string(before_health) + ", classify " +
                       std::to_string(before_classify));
  }
  service.load();
  if (status(cli.Get("/health")) != 200) {
    problems.push_back("health after load is not 200");
  }

  // Bit-for-bit parity with the CLI over the full distribution.
  const auto cli_lines = run_cli_classify(jpeg, weights, 23);
  const auto r = cli.Post("/classify?k=23", body, "image/jpeg");
  int compared = 0;
  if (status(r) != 200) {
    problems.push_back("classify returned " + std::to_string(status(r)));
  } else {
    const auto j = nlohmann::json::parse(r->body);
    if (j["predictions"].size() != cli_lines.size() || cli_lines.size() != 23) {
      problems.push_back("prediction count differs from the CLI");
    } else {
      for (std::size_t i = 0; i < cli_lines.size(); ++i) {
        const float p = j["predictions"][i]["probability"].get<float>();
        if (j["predictions"][i]["label"] != cli_lines[i].label ||
            std::memcmp(&p, &cli_lines[i].probability, sizeof p) != 0) {
          problems.push_back("rank " + std::to_string(i) + " differs from the CLI");
        }
        ++compared;
      }
    }
  }
  // Multipart upload gives the same top-5.
  httplib::MultipartFormDataItems items{{"image", body, jpeg.filename().string(), "image/jpeg"}, {"k", "5", "", ""}};
  const auto mp = cli.Post("/classify", items);
  if (status(mp) != 200) {
    problems.push_back("multipart upload returned " + std::to_string(status(mp)));
  } else {
    const auto j = nlohmann::json::parse(mp->body);
    for (std::size_t i = 0; i < 5 && i < cli_lines.size(); ++i) {
      if (j["predictions"][i]["label"] != cli_lines[i].label ||
          j["predictions"][i]["probability"].get<float>() != cli_lines[i].probability) {
        problems.push_back("multipart rank " + std::to_string(i) + " differs");
      }
    }
  }

  // Sixteen requests in flight, each with a different image.
  constexpr int kRequests = 16;
  std::vector<std::string> bodies;
  std::vector<Prediction> expected;
  for (int i = 0; i < kRequests; ++i) {
    const auto bytes = read_file_bytes(images[static_cast<std::size_t>(i * 17 % images.size())]);
    bodies.emplace_back(bytes.begin(), bytes.end());
    expected.push_back(classify_image(model, bytes, 5));
  }
  std::vector<std::future<std::string>> futures;
  for (int i = 0; i < kRequests; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      httplib::Client c("127.0.0.1", port);
      const auto res = c.Post("/classify", bodies[static_cast<std::size_t>(i)], "application/octet-stream");
      return res && res->status == 200 ? res->body : std::string();
    }));
  }
  int concurrent_ok = 0;
  for (int i = 0; i < kRequests; ++i) {
    const auto text = futures[static_cast<std::size_t>(i)].get();
    if (text.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(text);
    bool ok = j["predictions"].size() == 5;
    for (std::size_t k = 0; ok && k < 5; ++k) {
      ok = j["predictions"][k]["label"] == expected[static_cast<std::size_t>(i)].top[k].label &&
           j["predictions"][k]["probability"].get<float>() == expected[static_cast<std::size_t>(i)].top[k].probability;
    }
    concurrent_ok += ok ? 1 : 0;
  }
  if (concurrent_ok != kRequests) {
    problems.push_back(std::to_string(concurrent_ok) + "/16 concurrent requests correct");
  }

  // Constructed error requests.
  const int undecodable = status(cli.Post("/classify", std::string("GIF89a not an image"), "image/gif"));
  const int oversize = status(cli.Post("/classify", std::string(cfg.max_upload_bytes + 1, '\xff'), "image/jpeg"));
  const int k_zero = status(cli.Post("/classify?k=0", body, "image/jpeg"));
  const int k_big = status(cli.Post("/classify?k=24", body, "image/jpeg"));
  if (undecodable != 400 || oversize != 413 || k_zero != 422 || k_big != 422) {
    problems.push_back("error codes " + std::to_string(undecodable) + "/" + std::to_string(oversize) + "/" +
                       std::to_string(k_zero) + "/" + std::to_string(k_big));
  }
  service.stop();

  std::string detail = "CLI parity on " + std::to_string(compared) + " ranked probabilities; " +
                       std::to_string(concurrent_ok) + "/16 concurrent correct; 503 -> 200 on load; 400 " +
                       std::to_string(undecodable) + ", 413 " + std::to_string(oversize) + ", 422 " +
                       std::to_string(k_zero) + "/" + std::to_string(k_big);
  for (const auto& p : problems) {
    detail += "; " + p;
  }
  return {problems.empty(), detail};
}

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"convolution oracle suite", 60, convolution_oracles},
      {"batch-norm folding", 60, batchnorm_folding},
      {"weight I/O", 10, weight_io},
      {"gradient check", 10, gradient_check},
      {"synthetic training", 120, synthetic_training},
      {"pipeline determinism", 600, pipeline_determinism},
      {"augmentation rule fidelity", 300, augmentation_fidelity},
      {"consolidation fidelity", 60, consolidation},
      {"metrics laws", 60, metric_laws},
      {"size ratio", 10, size_ratio},
      {"latency", 120, latency},
      {"service contract", 300, service_contract},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > c.budget_seconds) {
      o.pass = false;
      o.detail += "; took longer than " + fmt("%.0f s", c.budget_seconds);
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << fmt("%.1f s", seconds) << ")  " << o.detail
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
