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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "plate/dataset.hpp"
#include "plate/image.hpp"

namespace plate {

// Procedural image corpora for tests and demos. Each final label gets its
// own colors and pattern; raw labels that consolidate to the same final
// label differ only by a slight tint, so they are near-duplicates.

struct SynthClass {
  std::string raw_label;
  int count = 0;
};

struct SynthConfig {
  std::vector<SynthClass> classes;
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  int jpeg_every = 0;  // every n-th image of a class is written as JPEG; 0 = PNG only
  int corrupt_files = 0;  // undecodable files added to the first class directory
  ClassTaxonomy taxonomy = ClassTaxonomy::default_merges();
};

struct SynthSummary {
  std::size_t images = 0;
  std::vector<std::string> corrupt;  // root-relative paths
};

RgbImage synth_image(const std::string& appearance, const std::string& variant, int index, int width, int height,
                     std::uint64_t seed);

SynthSummary write_synthetic_corpus(const std::filesystem::path& root, const SynthConfig& config);

/// 27 raw food labels: the seven that the default merges consolidate plus
/// twenty that stay as they are. Consolidated, they give 23 labels.
std::vector<std::string> standard_raw_labels();

/// 300 images over the 27 raw labels (23 final): eighteen final labels with
/// 15 images and five with 6.
SynthConfig small_pipeline_corpus(std::uint64_t seed = 7);

/// 16x16 images over the 23 consolidated labels: eighteen with 112 images
/// (100 train at a 0.9 split) and five with 20, 35, 50, 65 and 80.
SynthConfig threshold_corpus(std::uint64_t seed = 11);

}  // namespace plate
