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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace plate {

/// Raised when operand shapes or parameters do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t count() const { return n * c * h * w; }
  std::string str() const;
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense float32 array in row-major (N, C, H, W) order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape);
  Tensor(Shape4 shape, std::vector<float> values);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }

  float& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }
  float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w)];
  }

  /// Contiguous (H, W) plane of sample n, channel c.
  std::span<float> plane(std::int64_t n, std::int64_t c);
  std::span<const float> plane(std::int64_t n, std::int64_t c) const;

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

struct Conv2dParams {
  Tensor weights;  // (Cout, Cin / groups, Kh, Kw)
  std::vector<float> bias;  // empty or Cout entries
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> padding{0, 0};
  int groups = 1;

  std::int64_t out_channels() const { return weights.shape().n; }
  std::int64_t in_channels() const { return weights.shape().c * groups; }
  std::int64_t kernel_h() const { return weights.shape().h; }
  std::int64_t kernel_w() const { return weights.shape().w; }
};

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float epsilon = 1e-5f;
};

/// Row-major 2-D float matrix.
struct Matrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::int64_t r, std::int64_t c) : rows(r), cols(c), values(static_cast<std::size_t>(r * c), 0.0f) {}
  Matrix(std::int64_t r, std::int64_t c, std::vector<float> v);

  float& operator()(std::int64_t r, std::int64_t c) { return values[static_cast<std::size_t>(r * cols + c)]; }
  float operator()(std::int64_t r, std::int64_t c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
  std::span<const float> row(std::int64_t r) const {
    return std::span<const float>(values).subspan(static_cast<std::size_t>(r * cols), static_cast<std::size_t>(cols));
  }
};

/// Output spatial extent of a strided, zero-padded window; may be <= 0 when
/// the kernel does not fit.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, int stride, int padding);

/// Cross-correlation with zero padding, any group count.
Tensor conv2d(const Tensor& input, const Conv2dParams& params);

/// Per-channel convolution; requires groups == Cin == Cout.
Tensor depthwise_conv2d(const Tensor& input, const Conv2dParams& params);

/// Inference-mode batch normalization.
Tensor batch_norm(const Tensor& input, const BatchNormParams& bn);

/// Returns a convolution equal to batch_norm(conv2d(x, conv), bn) for all x.
Conv2dParams fold_batchnorm(const Conv2dParams& conv, const BatchNormParams& bn);

Tensor relu6(Tensor input);
void relu6_inplace(Tensor& input);

/// Elementwise sum of equally shaped tensors.
Tensor add(const Tensor& a, const Tensor& b);

/// Mean over H x W; output (N, C, 1, 1).
Tensor global_avg_pool(const Tensor& input);

/// input * weights^T + bias. input: N x Din, weights: Dout x Din, bias: Dout.
Matrix fully_connected(const Matrix& input, const Matrix& weights, std::span<const float> bias);

/// Numerically stable softmax over one vector.
std::vector<float> softmax(std::span<const float> logits);

}  // namespace plate
