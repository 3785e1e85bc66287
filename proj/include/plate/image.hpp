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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "plate/tensor.hpp"

namespace plate {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved RGB bitmap.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RgbImage() = default;
  RgbImage(int w, int h);

  bool empty() const { return width <= 0 || height <= 0; }
  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Float interleaved RGB image used inside resampling chains.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  static FloatImage from(const RgbImage& image);
  /// Rounds to nearest and clamps to [0, 255].
  RgbImage to_rgb() const;
  float* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* at(int x, int y) const { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
};

enum class ImageFormat { Png, Jpeg, Unknown };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);

/// Decodes a PNG or JPEG byte stream to RGB. Throws ImageError.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_jpeg(const RgbImage& image, int quality = 90);
void write_png(const std::filesystem::path& path, const RgbImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Bilinear resample of the source region (x, y, w, h), in pixel units with
/// half-pixel centers and clamped borders, onto an out_w x out_h grid. With the
/// full image as region and equal output size this is an exact copy.
FloatImage resample_bilinear(const FloatImage& src, double x, double y, double w, double h, int out_w,
                             int out_h);

struct Normalization {
  std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
  std::array<float, 3> stddev{0.229f, 0.224f, 0.225f};
};

/// Resize to resolution x resolution, scale to [0, 1], standardize per
/// channel, emit a (1, 3, H, W) tensor.
Tensor preprocess(const RgbImage& image, int resolution, const Normalization& norm = {});

}  // namespace plate
