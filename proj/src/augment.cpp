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

#include "plate/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>

#include "plate/parallel.hpp"
#include "plate/random.hpp"

namespace plate {
namespace fs = std::filesystem;

void AugmentationPolicy::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) {
      throw AugmentError(std::string("augmentation policy: ") + what);
    }
  };
  require(class_threshold >= 1, "class_threshold must be >= 1");
  require(target_count >= class_threshold, "target_count must be >= class_threshold");
  require(flip_probability >= 0.0 && flip_probability <= 1.0, "flip_probability must lie in [0, 1]");
  require(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0,
          "crop area range must satisfy 0 < min <= max <= 1");
  require(noise_sigma_min >= 0.0 && noise_sigma_min <= noise_sigma_max, "noise sigma range is invalid");
  require(rotation_max_deg >= 0.0, "rotation_max_deg must be >= 0");
  require(translate_max >= 0.0 && translate_max < 1.0, "translate_max must lie in [0, 1)");
  require(scale_min > 0.0 && scale_min <= scale_max, "scale range is invalid");
  require(contrast_min >= 0.0 && contrast_min <= contrast_max, "contrast range is invalid");
}

nlohmann::json AugmentationPolicy::to_json() const {
  return {{"class_threshold", class_threshold},
          {"target_count", target_count},
          {"flip_probability", flip_probability},
          {"crop_area", {crop_area_min, crop_area_max}},
          {"noise_sigma", {noise_sigma_min, noise_sigma_max}},
          {"rotation_max_deg", rotation_max_deg},
          {"translate_max", translate_max},
          {"scale", {scale_min, scale_max}},
          {"contrast", {contrast_min, contrast_max}},
          {"seed", seed}};
}

AugmentationPolicy AugmentationPolicy::from_json(const nlohmann::json& j) {
  AugmentationPolicy p;
  p.class_threshold = j.value("class_threshold", p.class_threshold);
  p.target_count = j.value("target_count", p.target_count);
  p.flip_probability = j.value("flip_probability", p.flip_probability);
  auto range = [&](const char* key, double& lo, double& hi) {
    if (j.contains(key)) {
      lo = j.at(key).at(0).get<double>();
      hi = j.at(key).at(1).get<double>();
    }
  };
  range("crop_area", p.crop_area_min, p.crop_area_max);
  range("noise_sigma", p.noise_sigma_min, p.noise_sigma_max);
  range("scale", p.scale_min, p.scale_max);
  range("contrast", p.contrast_min, p.contrast_max);
  p.rotation_max_deg = j.value("rotation_max_deg", p.rotation_max_deg);
  p.translate_max = j.value("translate_max", p.translate_max);
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

std::array<double, 6> AugmentationRecipe::affine_matrix(int width, int height) const {
  const double theta = affine.rotation_deg * std::numbers::pi / 180.0;
  const double a = affine.scale * std::cos(theta);
  const double b = -affine.scale * std::sin(theta);
  const double c = affine.scale * std::sin(theta);
  const double d = affine.scale * std::cos(theta);
  const double cx = width / 2.0;
  const double cy = height / 2.0;
  return {a, b, cx - a * cx - b * cy + affine.translate_x * width,
          c, d, cy - c * cx - d * cy + affine.translate_y * height};
}

nlohmann::json AugmentationRecipe::to_json() const {
  return {{"flip", flip},
          {"crop", {crop.x, crop.y, crop.width, crop.height}},
          {"noise_sigma", noise_sigma},
          {"noise_seed", noise_seed},
          {"affine",
           {{"rotation_deg", affine.rotation_deg},
            {"translate", {affine.translate_x, affine.translate_y}},
            {"scale", affine.scale}}},
          {"contrast", contrast}};
}

AugmentationRecipe AugmentationRecipe::from_json(const nlohmann::json& j) {
  AugmentationRecipe r;
  r.flip = j.at("flip").get<bool>();
  const auto& c = j.at("crop");
  r.crop = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(), c.at(3).get<double>()};
  r.noise_sigma = j.at("noise_sigma").get<double>();
  r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  const auto& a = j.at("affine");
  r.affine.rotation_deg = a.at("rotation_deg").get<double>();
  r.affine.translate_x = a.at("translate").at(0).get<double>();
  r.affine.translate_y = a.at("translate").at(1).get<double>();
  r.affine.scale = a.at("scale").get<double>();
  r.contrast = j.at("contrast").get<double>();
  return r;
}

AugmentationRecipe sample_recipe(const AugmentationPolicy& policy, const std::string& label, int sequence) {
  Rng rng(mix_seed(policy.seed, label, static_cast<std::uint64_t>(sequence)));
  AugmentationRecipe r;
  r.flip = rng.bernoulli(policy.flip_probability);
  const double side = std::sqrt(rng.uniform(policy.crop_area_min, policy.crop_area_max));
  r.crop.width = side;
  r.crop.height = side;
  r.crop.x = rng.uniform() * (1.0 - side);
  r.crop.y = rng.uniform() * (1.0 - side);
  r.noise_sigma = rng.uniform(policy.noise_sigma_min, policy.noise_sigma_max);
  r.noise_seed = rng.next_u64();
  r.affine.rotation_deg = rng.uniform(-policy.rotation_max_deg, policy.rotation_max_deg);
  r.affine.translate_x = rng.uniform(-policy.translate_max, policy.translate_max);
  r.affine.translate_y = rng.uniform(-policy.translate_max, policy.translate_max);
  r.affine.scale = rng.uniform(policy.scale_min, policy.scale_max);
  r.contrast = rng.uniform(policy.contrast_min, policy.contrast_max);
  return r;
}

namespace {

void flip_horizontal(FloatImage& img) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width / 2; ++x) {
      float* l = img.at(x, y);
      float* r = img.at(img.width - 1 - x, y);
      for (int c = 0; c < 3; ++c) {
        std::swap(l[c], r[c]);
      }
    }
  }
}

bool is_identity(const AffineParams& a) {
  return a.rotation_deg == 0.0 && a.translate_x == 0.0 && a.translate_y == 0.0 && a.scale == 1.0;
}

// Inverse-maps every output pixel center through the forward matrix and
// samples bilinearly; coordinates are clamped, which replicates the edges.
FloatImage warp_affine(const FloatImage& src, const std::array<double, 6>& m) {
  const double det = m[0] * m[4] - m[1] * m[3];
  const double ia = m[4] / det;
  const double ib = -m[1] / det;
  const double ic = -m[3] / det;
  const double id = m[0] / det;
  FloatImage out;
  out.width = src.width;
  out.height = src.height;
  out.pixels.resize(src.pixels.size());
  const double max_x = src.width - 1;
  const double max_y = src.height - 1;
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      const double px = ox + 0.5 - m[2];
      const double py = oy + 0.5 - m[5];
      const double sx = std::clamp(ia * px + ib * py - 0.5, 0.0, max_x);
      const double sy = std::clamp(ic * px + id * py - 0.5, 0.0, max_y);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const int y1 = std::min(y0 + 1, src.height - 1);
      const float wx = static_cast<float>(sx - x0);
      const float wy = static_cast<float>(sy - y0);
      const float* p00 = src.at(x0, y0);
      const float* p01 = src.at(x1, y0);
      const float* p10 = src.at(x0, y1);
      const float* p11 = src.at(x1, y1);
      float* dst = out.at(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const float top = p00[c] + wx * (p01[c] - p00[c]);
        const float bottom = p10[c] + wx * (p11[c] - p10[c]);
        dst[c] = top + wy * (bottom - top);
      }
    }
  }
  return out;
}

}  // namespace

RgbImage apply_recipe(const RgbImage& image, const AugmentationRecipe& recipe) {
  if (image.empty()) {
    throw AugmentError("cannot augment an empty image");
  }
  const auto& crop = recipe.crop;
  constexpr double slack = 1e-12;
  if (!(crop.width > 0.0 && crop.height > 0.0 && crop.x >= -slack && crop.y >= -slack &&
        crop.x + crop.width <= 1.0 + slack && crop.y + crop.height <= 1.0 + slack)) {
    throw AugmentError("crop rectangle lies outside the image");
  }
  if (!(recipe.affine.scale > 0.0)) {
    throw AugmentError("affine scale must be positive");
  }

  FloatImage img = FloatImage::from(image);
  const int w = img.width;
  const int h = img.height;

  if (recipe.flip) {
    flip_horizontal(img);
  }
  if (!(crop.x == 0.0 && crop.y == 0.0 && crop.width == 1.0 && crop.height == 1.0)) {
    img = resample_bilinear(img, crop.x * w, crop.y * h, crop.width * w, crop.height * h, w, h);
  }
  if (recipe.noise_sigma > 0.0) {
    Rng rng(recipe.noise_seed);
    for (auto& v : img.pixels) {
      v += static_cast<float>(recipe.noise_sigma * rng.normal());
    }
  }
  if (!is_identity(recipe.affine)) {
    img = warp_affine(img, recipe.affine_matrix(w, h));
  }
  if (recipe.contrast != 1.0) {
    double sum = 0.0;
    for (float v : img.pixels) {
      sum += v;
    }
    const double mean = sum / static_cast<double>(img.pixels.size());
    for (auto& v : img.pixels) {
      v = static_cast<float>(mean + recipe.contrast * (v - mean));
    }
  }
  return img.to_rgb();
}

std::string PlannedSample::output_name() const {
  char seq[16];
  std::snprintf(seq, sizeof seq, "%05d", sequence);
  return label + "/aug_" + label + "_" + seq + ".png";
}

nlohmann::json PlannedSample::to_json() const {
  return {{"label", label}, {"sequence", sequence}, {"source", source}, {"recipe", recipe.to_json()}};
}

PlannedSample PlannedSample::from_json(const nlohmann::json& j) {
  PlannedSample p;
  p.label = j.at("label").get<std::string>();
  p.sequence = j.at("sequence").get<int>();
  p.source = j.at("source").get<std::string>();
  p.recipe = AugmentationRecipe::from_json(j.at("recipe"));
  return p;
}

std::vector<PlannedSample> plan_augmentation(const DatasetManifest& manifest, const AugmentationPolicy& policy,
                                             std::vector<std::string>* warnings) {
  policy.validate();
  std::map<std::string, std::vector<std::string>> sources;
  for (const auto& label : manifest.labels) {
    sources[label];
  }
  for (const auto& r : manifest.records) {
    if (r.provenance == Provenance::original && r.split == Split::train) {
      sources[r.label].push_back(r.path);
    }
  }
  std::vector<PlannedSample> plan;
  for (auto& [label, paths] : sources) {
    const auto n = static_cast<int>(paths.size());
    if (n >= policy.class_threshold) {
      continue;
    }
    if (n == 0) {
      if (warnings != nullptr) {
        warnings->push_back("class '" + label + "' has no training originals; not augmented");
      }
      continue;
    }
    std::sort(paths.begin(), paths.end());
    for (int seq = 0; seq < policy.target_count - n; ++seq) {
      PlannedSample p;
      p.label = label;
      p.sequence = seq;
      p.source = paths[static_cast<std::size_t>(seq % n)];
      p.recipe = sample_recipe(policy, label, seq);
      plan.push_back(std::move(p));
    }
  }
  return plan;
}

namespace {

fs::path normalized_absolute(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

std::set<std::string> read_journal(const fs::path& journal) {
  std::set<std::string> done;
  std::ifstream in(journal);
  std::string line;
  while (std::getline(in, line)) {
    try {
      const auto j = nlohmann::json::parse(line);
      done.insert(j.at("output").get<std::string>());
    } catch (const nlohmann::json::exception&) {
      // A torn last line from an interrupted run; that output is redone.
    }
  }
  return done;
}

}  // namespace

MaterializeResult materialize(const DatasetManifest& manifest, const std::vector<PlannedSample>& plan,
                              const fs::path& output_root, int threads) {
  std::error_code ec;
  fs::create_directories(output_root, ec);
  if (ec || !fs::is_directory(output_root)) {
    throw AugmentError("cannot create output root " + output_root.string());
  }
  const auto journal_path = output_root / "journal.jsonl";
  {
    std::ofstream probe(journal_path, std::ios::app);
    if (!probe) {
      throw AugmentError("output root " + output_root.string() + " is not writable");
    }
  }

  std::map<std::string, const SampleRecord*> by_path;
  for (const auto& r : manifest.records) {
    by_path[r.path] = &r;
  }

  std::string plan_text;
  for (const auto& p : plan) {
    if (!by_path.contains(p.source)) {
      throw AugmentError("plan source " + p.source + " is not in the manifest");
    }
    plan_text += p.to_json().dump() + "\n";
  }
  write_file_bytes(output_root / "plan.jsonl", {reinterpret_cast<const std::uint8_t*>(plan_text.data()), plan_text.size()});

  const auto done = read_journal(journal_path);
  const auto root_abs = normalized_absolute(manifest.root);
  const auto out_abs = normalized_absolute(output_root);

  MaterializeResult result;
  result.before = ClassStats::of(manifest);
  std::vector<SampleRecord> added(plan.size());
  std::vector<char> pending(plan.size(), 0);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& p = plan[i];
    const auto& src = *by_path.at(p.source);
    const auto name = p.output_name();
    auto& rec = added[i];
    rec.path = (out_abs / name).lexically_relative(root_abs).generic_string();
    rec.raw_label = src.raw_label;
    rec.label = p.label;
    rec.split = Split::train;
    rec.fold = src.fold;
    rec.provenance = Provenance::augmented;
    rec.source = p.source;
    if (by_path.contains(rec.path) || (done.contains(name) && fs::exists(output_root / name))) {
      ++result.resumed;
    } else {
      pending[i] = 1;
    }
  }

  std::mutex journal_mu;
  std::ofstream journal(journal_path, std::ios::app);
  parallel_for(
      plan.size(),
      [&](std::size_t i) {
        if (!pending[i]) {
          return;
        }
        const auto& p = plan[i];
        const auto image = read_image(manifest.root / p.source);
        const auto out = apply_recipe(image, p.recipe);
        const auto target = output_root / p.output_name();
        fs::create_directories(target.parent_path());
        auto tmp = target;
        tmp += ".tmp";
        write_png(tmp, out);
        fs::rename(tmp, target);
        auto line = p.to_json();
        line["output"] = p.output_name();
        std::lock_guard lock(journal_mu);
        journal << line.dump() << "\n";
        journal.flush();
      },
      threads);
  result.written = static_cast<std::size_t>(std::count(pending.begin(), pending.end(), 1));

  result.manifest = manifest;
  std::vector<SampleRecord> augmented;
  std::vector<SampleRecord> originals;
  for (auto& r : result.manifest.records) {
    (r.provenance == Provenance::augmented ? augmented : originals).push_back(std::move(r));
  }
  for (auto& r : added) {
    if (!by_path.contains(r.path)) {
      augmented.push_back(std::move(r));
    }
  }
  std::sort(augmented.begin(), augmented.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  originals.insert(originals.end(), std::make_move_iterator(augmented.begin()),
                   std::make_move_iterator(augmented.end()));
  result.manifest.records = std::move(originals);
  result.after = ClassStats::of(result.manifest);
  return result;
}

std::string augmentation_report(const ClassStats& before, const ClassStats& after) {
  const auto b = before.totals();
  const auto a = after.totals();
  std::ostringstream out;
  out << std::left << std::setw(8) << "" << std::right << std::setw(22) << "without augmentation" << std::setw(20)
      << "with augmentation" << std::setw(10) << "delta"
      << "\n";
  auto row = [&](const char* name, std::int64_t x, std::int64_t y) {
    out << std::left << std::setw(8) << name << std::right << std::setw(22) << x << std::setw(20) << y
        << std::setw(10) << (y - x) << "\n";
  };
  row("train", b.train(), a.train());
  row("test", b.original_test, a.original_test);
  row("total", b.total(), a.total());
  out << "\nper class (train originals -> train after augmentation)\n";
  for (const auto& [label, c] : after.per_label) {
    const auto it = before.per_label.find(label);
    const auto prior = it == before.per_label.end() ? 0 : it->second.train();
    out << "  " << label << ": " << prior << " -> " << c.train() << "\n";
  }
  return out.str();
}

}  // namespace plate
