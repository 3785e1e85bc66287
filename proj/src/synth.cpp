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

#include "plate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "plate/random.hpp"

namespace plate {
namespace fs = std::filesystem;

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Appearance {
  Rgb background;
  Rgb dish;
  Rgb accent;
  int pattern;  // 0 stripes, 1 dots, 2 rings, 3 checks
  double frequency;
  double angle;
};

Appearance appearance_for(const std::string& key, const std::string& variant) {
  Rng rng(mix_seed(0x5eed, key));
  Appearance a{};
  const double base = rng.uniform();
  a.background = hsv(base, 0.25 + 0.3 * rng.uniform(), 0.35 + 0.5 * rng.uniform());
  a.dish = hsv(base + 0.2 + 0.6 * rng.uniform(), 0.5 + 0.5 * rng.uniform(), 0.5 + 0.5 * rng.uniform());
  a.accent = hsv(rng.uniform(), 0.6 + 0.4 * rng.uniform(), 0.3 + 0.7 * rng.uniform());
  a.pattern = static_cast<int>(rng.below(4));
  a.frequency = 2.0 + 6.0 * rng.uniform();
  a.angle = rng.uniform() * std::numbers::pi;
  if (variant != key) {
    // Near-duplicate raw class: a slight tint on the dish color.
    Rng tint(mix_seed(0x7157, variant));
    a.dish.r = std::clamp(a.dish.r + 0.06 * (tint.uniform() - 0.5), 0.0, 1.0);
    a.dish.g = std::clamp(a.dish.g + 0.06 * (tint.uniform() - 0.5), 0.0, 1.0);
  }
  return a;
}

}  // namespace

RgbImage synth_image(const std::string& appearance, const std::string& variant, int index, int width, int height,
                     std::uint64_t seed) {
  const auto look = appearance_for(appearance, variant);
  Rng rng(mix_seed(seed, variant, static_cast<std::uint64_t>(index)));
  const double cx = width * (0.5 + 0.15 * (rng.uniform() - 0.5) * 2);
  const double cy = height * (0.5 + 0.15 * (rng.uniform() - 0.5) * 2);
  const double radius = std::min(width, height) * (0.28 + 0.12 * rng.uniform());
  const double brightness = 0.85 + 0.3 * rng.uniform();
  const double phase = rng.uniform() * 2 * std::numbers::pi;
  const double noise = 6.0;
  const double ca = std::cos(look.angle);
  const double sa = std::sin(look.angle);

  RgbImage img(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = (x + 0.5 - cx) / radius;
      const double dy = (y + 0.5 - cy) / radius;
      const double r2 = dx * dx + dy * dy;
      Rgb c = look.background;
      if (r2 <= 1.0) {
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        bool accent = false;
        switch (look.pattern) {
          case 0: accent = std::sin(look.frequency * 3 * u + phase) > 0.3; break;
          case 1: accent = std::sin(look.frequency * 3 * u + phase) * std::sin(look.frequency * 3 * v) > 0.4; break;
          case 2: accent = std::sin(look.frequency * 4 * std::sqrt(r2) + phase) > 0.0; break;
          default: accent = (std::sin(look.frequency * 2 * u + phase) > 0) != (std::sin(look.frequency * 2 * v) > 0);
        }
        c = accent ? look.accent : look.dish;
      }
      std::uint8_t* px = img.at(x, y);
      const double chan[3] = {c.r, c.g, c.b};
      for (int k = 0; k < 3; ++k) {
        const double value = 255.0 * chan[k] * brightness + noise * rng.normal();
        px[k] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(value), 0.0, 255.0));
      }
    }
  }
  return img;
}

SynthSummary write_synthetic_corpus(const fs::path& root, const SynthConfig& config) {
  SynthSummary summary;
  for (const auto& cls : config.classes) {
    const auto dir = root / cls.raw_label;
    fs::create_directories(dir);
    const auto appearance = config.taxonomy.consolidate(cls.raw_label);
    for (int i = 0; i < cls.count; ++i) {
      const auto img = synth_image(appearance, cls.raw_label, i, config.width, config.height, config.seed);
      char name[32];
      const bool jpeg = config.jpeg_every > 0 && i % config.jpeg_every == config.jpeg_every - 1;
      std::snprintf(name, sizeof name, "img_%04d.%s", i, jpeg ? "jpg" : "png");
      const auto bytes = jpeg ? encode_jpeg(img, 92) : encode_png(img);
      write_file_bytes(dir / name, bytes);
      ++summary.images;
    }
  }
  if (config.corrupt_files > 0 && !config.classes.empty()) {
    const auto& first = config.classes.front().raw_label;
    for (int i = 0; i < config.corrupt_files; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "corrupt_%02d.jpg", i);
      // A JPEG start-of-image marker followed by garbage.
      std::vector<std::uint8_t> junk{0xFF, 0xD8, 0xFF, 0xE0};
      Rng rng(mix_seed(config.seed, "corrupt", static_cast<std::uint64_t>(i)));
      for (int k = 0; k < 64; ++k) {
        junk.push_back(static_cast<std::uint8_t>(rng.below(256)));
      }
      write_file_bytes(root / first / name, junk);
      summary.corrupt.push_back(first + "/" + name);
    }
  }
  return summary;
}

std::vector<std::string> standard_raw_labels() {
  return {"baklava",  "fattoush",  "kinafah",   "khubz",   "pita",     "salad",    "tabouleh",
          "dolma",    "falafel",   "fatayer",   "harees",  "hummus",   "jareesh",  "kabsa",
          "kofta",    "luqaimat",  "manakish",  "mandi",   "mansaf",   "maqluba",  "mutabbal",
          "mutabbaq", "qatayef",   "saleeg",    "sambosa", "shakshuka", "shawarma"};
}

SynthConfig small_pipeline_corpus(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.width = 64;
  c.height = 64;
  c.jpeg_every = 5;
  c.classes = {{"baklava", 8}, {"kinafah", 7}, {"khubz", 8}, {"pita", 7},
               {"salad", 5},   {"tabouleh", 5}, {"fattoush", 5}};
  const auto raw = standard_raw_labels();
  int small = 0;
  for (std::size_t i = 7; i < raw.size(); ++i) {
    // Every fourth unmerged label is kept small.
    const bool is_small = (i - 7) % 4 == 3 && small < 5;
    small += is_small ? 1 : 0;
    c.classes.push_back({raw[i], is_small ? 6 : 15});
  }
  std::sort(c.classes.begin(), c.classes.end(),
            [](const SynthClass& a, const SynthClass& b) { return a.raw_label < b.raw_label; });
  return c;
}

SynthConfig threshold_corpus(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.width = 16;
  c.height = 16;
  ClassTaxonomy t = ClassTaxonomy::default_merges();
  for (const auto& raw : standard_raw_labels()) {
    t.add_raw_label(raw);
  }
  const std::vector<int> small{20, 35, 50, 65, 80};
  int next_small = 0;
  const auto labels = t.final_labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool is_small = i % 4 == 2 && next_small < 5;
    c.classes.push_back({labels[i], is_small ? small[static_cast<std::size_t>(next_small++)] : 112});
  }
  return c;
}

}  // namespace plate
