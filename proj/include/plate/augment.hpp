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

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plate/dataset.hpp"
#include "plate/image.hpp"

namespace plate {

class AugmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugmentationPolicy {
  int class_threshold = 100;
  int target_count = 100;
  double flip_probability = 0.5;
  double crop_area_min = 0.8;
  double crop_area_max = 1.0;
  double noise_sigma_min = 2.0;
  double noise_sigma_max = 12.0;
  double rotation_max_deg = 15.0;
  double translate_max = 0.1;  // fraction of width / height
  double scale_min = 0.9;
  double scale_max = 1.1;
  double contrast_min = 0.7;
  double contrast_max = 1.3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);
};

/// Crop rectangle in fractions of the image size.
struct CropRect {
  double x = 0.0;
  double y = 0.0;
  double width = 1.0;
  double height = 1.0;
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// Similarity transform about the image center: rotate, scale, then shift by
/// a fraction of the image size.
struct AffineParams {
  double rotation_deg = 0.0;
  double translate_x = 0.0;
  double translate_y = 0.0;
  double scale = 1.0;
  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

struct AugmentationRecipe {
  bool flip = false;
  CropRect crop;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  AffineParams affine;
  double contrast = 1.0;

  /// Forward 2x3 pixel-space matrix [a b tx; c d ty] for a w x h image.
  std::array<double, 6> affine_matrix(int width, int height) const;

  nlohmann::json to_json() const;
  static AugmentationRecipe from_json(const nlohmann::json& j);
  friend bool operator==(const AugmentationRecipe&, const AugmentationRecipe&) = default;
};

/// Draws a recipe from the policy ranges. Pure function of
/// (policy.seed, label, sequence).
AugmentationRecipe sample_recipe(const AugmentationPolicy& policy, const std::string& label, int sequence);

/// flip -> crop (resized back) -> noise -> affine -> contrast; output has the
/// input's size, values rounded and clamped to [0, 255].
RgbImage apply_recipe(const RgbImage& image, const AugmentationRecipe& recipe);

struct PlannedSample {
  std::string label;
  int sequence = 0;
  std::string source;  // manifest-relative path of the original
  AugmentationRecipe recipe;

  /// "<label>/aug_<label>_<sequence>.png", relative to the output root.
  std::string output_name() const;
  nlohmann::json to_json() const;
  static PlannedSample from_json(const nlohmann::json& j);
  friend bool operator==(const PlannedSample&, const PlannedSample&) = default;
};

/// Recipes that top every label with fewer than class_threshold training
/// originals up to target_count, cycling over its sorted originals. Test
/// records are never sources.
std::vector<PlannedSample> plan_augmentation(const DatasetManifest& manifest, const AugmentationPolicy& policy,
                                             std::vector<std::string>* warnings = nullptr);

struct MaterializeResult {
  DatasetManifest manifest;
  ClassStats before;
  ClassStats after;
  std::size_t written = 0;
  std::size_t resumed = 0;  // already present from an earlier interrupted run
};

/// Writes each planned image as PNG under `output_root`, logs it to
/// `output_root/journal.jsonl`, and appends train/augmented records. Outputs
/// already listed in the journal and present on disk are not regenerated.
MaterializeResult materialize(const DatasetManifest& manifest, const std::vector<PlannedSample>& plan,
                              const std::filesystem::path& output_root, int threads = 0);

/// Train / test / total rows, without and with augmentation.
std::string augmentation_report(const ClassStats& before, const ClassStats& after);

}  // namespace plate
