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

#pragma once

// Shared test fixtures built from std:: random engines only.

#include <random>
#include <string>

#include "plate/model.hpp"
#include "plate/trainer.hpp"

namespace fixture {

/// Linearly separable features: each class is a Gaussian blob around its own
/// random center, with centers far apart relative to the spread.
inline plate::FeatureCache separable_features(int classes, int per_class, int dim, unsigned seed,
                                              float spread = 0.3f) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<std::vector<float>> centers(static_cast<std::size_t>(classes), std::vector<float>(static_cast<std::size_t>(dim)));
  for (auto& c : centers) {
    for (auto& v : c) {
      v = 2.0f * normal(gen);
    }
  }
  plate::FeatureCache cache;
  cache.dim = dim;
  std::vector<float> f(static_cast<std::size_t>(dim));
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      for (int k = 0; k < dim; ++k) {
        f[static_cast<std::size_t>(k)] = centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] + spread * normal(gen);
      }
      cache.push(f, c, "c" + std::to_string(c) + "/s" + std::to_string(i));
    }
  }
  return cache;
}

/// A reduced MobileNet-v2 for fast end-to-end runs: 32x32 input, two
/// bottleneck rows, 24 features. Batch norm is calibrated on Gaussian input.
inline plate::ModelSpec small_spec(int classes) {
  plate::ModelSpec s;
  s.resolution = 32;
  s.stem_channels = 8;
  s.settings = {{1, 8, 1, 1}, {4, 12, 2, 2}};
  s.head_width = 24;
  s.num_classes = classes;
  return s;
}

inline plate::Model small_backbone(int classes, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> batch(8 * 3 * 32 * 32);
  for (auto& v : batch) {
    v = normal(gen);
  }
  return plate::Model::build(small_spec(classes), seed).calibrate_batchnorm(plate::Tensor(plate::Shape4{8, 3, 32, 32}, batch));
}

}  // namespace fixture
