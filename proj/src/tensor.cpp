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

#include "plate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace plate {
namespace {

std::string vec_str(std::size_t n) { return "[" + std::to_string(n) + "]"; }

void check_conv(const Tensor& input, const Conv2dParams& p) {
  const auto& ws = p.weights.shape();
  if (p.groups < 1) {
    throw ShapeError("conv2d: groups must be >= 1, got " + std::to_string(p.groups));
  }
  if (ws.n <= 0 || ws.c <= 0 || ws.h <= 0 || ws.w <= 0) {
    throw ShapeError("conv2d: weights must have positive extents, got " + ws.str());
  }
  if (ws.n % p.groups != 0) {
    throw ShapeError("conv2d: groups " + std::to_string(p.groups) + " does not divide Cout " +
                     std::to_string(ws.n));
  }
  if (input.shape().c % p.groups != 0) {
    throw ShapeError("conv2d: groups " + std::to_string(p.groups) + " does not divide Cin " +
                     std::to_string(input.shape().c));
  }
  if (input.shape().c != p.in_channels()) {
    throw ShapeError("conv2d: input " + input.shape().str() + " does not match weights " + ws.str() +
                     " with groups " + std::to_string(p.groups));
  }
  if (!p.bias.empty() && static_cast<std::int64_t>(p.bias.size()) != ws.n) {
    throw ShapeError("conv2d: bias " + vec_str(p.bias.size()) + " does not match weights " + ws.str());
  }
  if (p.stride[0] < 1 || p.stride[1] < 1 || p.padding[0] < 0 || p.padding[1] < 0) {
    throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const auto oh = conv_output_extent(input.shape().h, ws.h, p.stride[0], p.padding[0]);
  const auto ow = conv_output_extent(input.shape().w, ws.w, p.stride[1], p.padding[1]);
  if (oh < 0 || ow < 0) {
    throw ShapeError("conv2d: kernel " + ws.str() + " does not fit input " + input.shape().str());
  }
}

Tensor make_output(const Tensor& input, const Conv2dParams& p) {
  const auto& ws = p.weights.shape();
  const auto oh = std::max<std::int64_t>(0, conv_output_extent(input.shape().h, ws.h, p.stride[0], p.padding[0]));
  const auto ow = std::max<std::int64_t>(0, conv_output_extent(input.shape().w, ws.w, p.stride[1], p.padding[1]));
  Tensor out(Shape4{input.shape().n, ws.n, oh, ow});
  if (!p.bias.empty()) {
    for (std::int64_t n = 0; n < out.shape().n; ++n) {
      for (std::int64_t c = 0; c < out.shape().c; ++c) {
        auto plane = out.plane(n, c);
        std::fill(plane.begin(), plane.end(), p.bias[static_cast<std::size_t>(c)]);
      }
    }
  }
  return out;
}

// C[m x p] += A[m x k] * B[k x p], all row-major with the given leading dims.
constexpr std::int64_t kRowBlock = 4;
constexpr std::int64_t kColBlock = 16;
constexpr std::int64_t kColTile = 256;
constexpr std::int64_t kDepthTile = 256;

using Vec8 = float __attribute__((vector_size(32), aligned(4), may_alias));

inline Vec8 load8(const float* p) { return *reinterpret_cast<const Vec8*>(p); }
inline void store8(float* p, Vec8 v) { *reinterpret_cast<Vec8*>(p) = v; }

// 4 x 16 register tile.
inline void micro_kernel(const float* __restrict a, std::int64_t lda, const float* __restrict b,
                         std::int64_t ldb, float* __restrict c, std::int64_t ldc, std::int64_t depth) {
  Vec8 c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * lda;
  const float* a3 = a + 3 * lda;
  for (std::int64_t kk = 0; kk < depth; ++kk) {
    const float* brow = b + kk * ldb;
    const Vec8 b0 = load8(brow);
    const Vec8 b1 = load8(brow + 8);
    const float w0 = a0[kk];
    const float w1 = a1[kk];
    const float w2 = a2[kk];
    const float w3 = a3[kk];
    c00 += w0 * b0;
    c01 += w0 * b1;
    c10 += w1 * b0;
    c11 += w1 * b1;
    c20 += w2 * b0;
    c21 += w2 * b1;
    c30 += w3 * b0;
    c31 += w3 * b1;
  }
  store8(c, load8(c) + c00);
  store8(c + 8, load8(c + 8) + c01);
  store8(c + ldc, load8(c + ldc) + c10);
  store8(c + ldc + 8, load8(c + ldc + 8) + c11);
  store8(c + 2 * ldc, load8(c + 2 * ldc) + c20);
  store8(c + 2 * ldc + 8, load8(c + 2 * ldc + 8) + c21);
  store8(c + 3 * ldc, load8(c + 3 * ldc) + c30);
  store8(c + 3 * ldc + 8, load8(c + 3 * ldc + 8) + c31);
}

inline void edge_kernel(const float* __restrict a, std::int64_t lda, const float* __restrict b,
                        std::int64_t ldb, float* __restrict c, std::int64_t ldc, std::int64_t rows,
                        std::int64_t cols, std::int64_t depth) {
  for (std::int64_t r = 0; r < rows; ++r) {
    float* crow = c + r * ldc;
    for (std::int64_t kk = 0; kk < depth; ++kk) {
      const float av = a[r * lda + kk];
      const float* brow = b + kk * ldb;
      for (std::int64_t j = 0; j < cols; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_accumulate(const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float* c,
                     std::int64_t ldc, std::int64_t m, std::int64_t k, std::int64_t p) {
  for (std::int64_t p0 = 0; p0 < p; p0 += kColTile) {
    const std::int64_t pw = std::min(kColTile, p - p0);
    for (std::int64_t k0 = 0; k0 < k; k0 += kDepthTile) {
      const std::int64_t kd = std::min(kDepthTile, k - k0);
      std::int64_t i = 0;
      for (; i + kRowBlock <= m; i += kRowBlock) {
        const float* ablk = a + i * lda + k0;
        float* crow = c + i * ldc + p0;
        const float* bblk = b + k0 * ldb + p0;
        std::int64_t j = 0;
        for (; j + kColBlock <= pw; j += kColBlock) {
          micro_kernel(ablk, lda, bblk + j, ldb, crow + j, ldc, kd);
        }
        if (j < pw) {
          edge_kernel(ablk, lda, bblk + j, ldb, crow + j, ldc, kRowBlock, pw - j, kd);
        }
      }
      if (i < m) {
        edge_kernel(a + i * lda + k0, lda, b + k0 * ldb + p0, ldb, c + i * ldc + p0, ldc, m - i, pw, kd);
      }
    }
  }
}

// Unfolds one group of one sample into a (Cin_g * Kh * Kw) x (Hout * Wout) matrix.
void im2col(const Tensor& input, std::int64_t n, std::int64_t c0, std::int64_t cin_g, const Conv2dParams& p,
            std::int64_t oh, std::int64_t ow, std::vector<float>& col) {
  const auto kh = p.kernel_h();
  const auto kw = p.kernel_w();
  const auto h = input.shape().h;
  const auto w = input.shape().w;
  const auto cols = oh * ow;
  col.assign(static_cast<std::size_t>(cin_g * kh * kw * cols), 0.0f);
  for (std::int64_t ci = 0; ci < cin_g; ++ci) {
    const auto plane = input.plane(n, c0 + ci);
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        float* dst = col.data() + ((ci * kh + ky) * kw + kx) * cols;
        for (std::int64_t y = 0; y < oh; ++y) {
          const std::int64_t iy = y * p.stride[0] + ky - p.padding[0];
          if (iy < 0 || iy >= h) {
            continue;
          }
          const float* src = plane.data() + iy * w;
          for (std::int64_t x = 0; x < ow; ++x) {
            const std::int64_t ix = x * p.stride[1] + kx - p.padding[1];
            if (ix >= 0 && ix < w) {
              dst[y * ow + x] = src[ix];
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor::Tensor(Shape4 shape) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("tensor: negative extent in " + shape.str());
  }
  data_.assign(static_cast<std::size_t>(shape.count()), 0.0f);
}

Tensor::Tensor(Shape4 shape, std::vector<float> values) : shape_(shape), data_(std::move(values)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("tensor: negative extent in " + shape.str());
  }
  if (static_cast<std::int64_t>(data_.size()) != shape.count()) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape.str());
  }
}

std::span<float> Tensor::plane(std::int64_t n, std::int64_t c) {
  const auto hw = static_cast<std::size_t>(shape_.h * shape_.w);
  return std::span<float>(data_).subspan(static_cast<std::size_t>(n * shape_.c + c) * hw, hw);
}

std::span<const float> Tensor::plane(std::int64_t n, std::int64_t c) const {
  const auto hw = static_cast<std::size_t>(shape_.h * shape_.w);
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(n * shape_.c + c) * hw, hw);
}

Matrix::Matrix(std::int64_t r, std::int64_t c, std::vector<float> v) : rows(r), cols(c), values(std::move(v)) {
  if (r < 0 || c < 0 || static_cast<std::int64_t>(values.size()) != r * c) {
    throw ShapeError("matrix: " + std::to_string(values.size()) + " values for " + std::to_string(r) + "x" +
                     std::to_string(c));
  }
}

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    // floor division for negative numerators
    return -((-span + stride - 1) / stride) + 1;
  }
  return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const Conv2dParams& params) {
  check_conv(input, params);
  Tensor out = make_output(input, params);
  const auto& os = out.shape();
  if (out.empty()) {
    return out;
  }
  const auto cin_g = params.weights.shape().c;
  const auto cout_g = os.c / params.groups;
  const auto depth = cin_g * params.kernel_h() * params.kernel_w();
  const auto cols = os.h * os.w;
  const bool pointwise = params.kernel_h() == 1 && params.kernel_w() == 1 && params.stride[0] == 1 &&
                         params.stride[1] == 1 && params.padding[0] == 0 && params.padding[1] == 0;
  std::vector<float> col;
  for (std::int64_t n = 0; n < os.n; ++n) {
    for (std::int64_t g = 0; g < params.groups; ++g) {
      const float* a = params.weights.data().data() + g * cout_g * depth;
      float* c = out.plane(n, g * cout_g).data();
      const float* b;
      if (pointwise) {
        b = input.plane(n, g * cin_g).data();
      } else {
        im2col(input, n, g * cin_g, cin_g, params, os.h, os.w, col);
        b = col.data();
      }
      gemm_accumulate(a, depth, b, cols, c, cols, cout_g, depth, cols);
    }
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Conv2dParams& params) {
  check_conv(input, params);
  const auto cin = input.shape().c;
  if (params.groups != cin || params.out_channels() != cin || params.weights.shape().c != 1) {
    throw ShapeError("depthwise_conv2d: requires groups == Cin == Cout, got groups " +
                     std::to_string(params.groups) + " for input " + input.shape().str() + " and weights " +
                     params.weights.shape().str());
  }
  Tensor out = make_output(input, params);
  const auto& os = out.shape();
  const auto h = input.shape().h;
  const auto w = input.shape().w;
  const auto kh = params.kernel_h();
  const auto kw = params.kernel_w();
  const int sy = params.stride[0];
  const int sx = params.stride[1];
  const int py = params.padding[0];
  const int px = params.padding[1];
  for (std::int64_t n = 0; n < os.n; ++n) {
    for (std::int64_t c = 0; c < os.c; ++c) {
      const float* src = input.plane(n, c).data();
      float* dst = out.plane(n, c).data();
      const float* filt = params.weights.data().data() + c * kh * kw;
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        // Output columns whose tap kx lands inside the input row.
        const std::int64_t lo = std::max<std::int64_t>(0, (px - kx + sx - 1) / sx);
        const std::int64_t hi_num = w - 1 + px - kx;
        const std::int64_t hi = hi_num < 0 ? -1 : std::min<std::int64_t>(os.w - 1, hi_num / sx);
        if (lo > hi) {
          continue;
        }
        for (std::int64_t y = 0; y < os.h; ++y) {
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = y * sy + ky - py;
            if (iy < 0 || iy >= h) {
              continue;
            }
            const float wv = filt[ky * kw + kx];
            const float* srow = src + iy * w + kx - px;
            float* drow = dst + y * os.w;
            if (sx == 1) {
              for (std::int64_t x = lo; x <= hi; ++x) {
                drow[x] += wv * srow[x];
              }
            } else {
              for (std::int64_t x = lo; x <= hi; ++x) {
                drow[x] += wv * srow[x * sx];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

void check_bn(const BatchNormParams& bn, std::int64_t channels, const char* op) {
  const auto expect = static_cast<std::size_t>(channels);
  if (bn.gamma.size() != expect || bn.beta.size() != expect || bn.running_mean.size() != expect ||
      bn.running_var.size() != expect) {
    throw ShapeError(std::string(op) + ": batch-norm vectors (" + std::to_string(bn.gamma.size()) + ", " +
                     std::to_string(bn.beta.size()) + ", " + std::to_string(bn.running_mean.size()) + ", " +
                     std::to_string(bn.running_var.size()) + ") do not match " + std::to_string(channels) +
                     " channels");
  }
  if (!(bn.epsilon >= 0.0f)) {
    throw ShapeError(std::string(op) + ": epsilon must be non-negative");
  }
  for (std::size_t i = 0; i < expect; ++i) {
    if (!(bn.running_var[i] >= 0.0f) || !(double(bn.running_var[i]) + bn.epsilon > 0.0)) {
      throw ShapeError(std::string(op) + ": running_var + epsilon must be positive (channel " +
                       std::to_string(i) + ")");
    }
  }
}

}  // namespace

Tensor batch_norm(const Tensor& input, const BatchNormParams& bn) {
  check_bn(bn, input.shape().c, "batch_norm");
  Tensor out = input;
  for (std::int64_t n = 0; n < input.shape().n; ++n) {
    for (std::int64_t c = 0; c < input.shape().c; ++c) {
      const auto i = static_cast<std::size_t>(c);
      const float inv = static_cast<float>(1.0 / std::sqrt(double(bn.running_var[i]) + bn.epsilon));
      for (float& v : out.plane(n, c)) {
        v = bn.gamma[i] * ((v - bn.running_mean[i]) * inv) + bn.beta[i];
      }
    }
  }
  return out;
}

Conv2dParams fold_batchnorm(const Conv2dParams& conv, const BatchNormParams& bn) {
  const auto cout = conv.out_channels();
  check_bn(bn, cout, "fold_batchnorm");
  if (!conv.bias.empty() && static_cast<std::int64_t>(conv.bias.size()) != cout) {
    throw ShapeError("fold_batchnorm: bias " + vec_str(conv.bias.size()) + " does not match Cout " +
                     std::to_string(cout));
  }
  Conv2dParams folded = conv;
  folded.bias.assign(static_cast<std::size_t>(cout), 0.0f);
  const auto per_out = static_cast<std::size_t>(conv.weights.shape().c * conv.kernel_h() * conv.kernel_w());
  auto weights = folded.weights.data();
  for (std::int64_t o = 0; o < cout; ++o) {
    const auto i = static_cast<std::size_t>(o);
    const double scale = double(bn.gamma[i]) / std::sqrt(double(bn.running_var[i]) + bn.epsilon);
    for (std::size_t j = 0; j < per_out; ++j) {
      auto& wv = weights[i * per_out + j];
      wv = static_cast<float>(wv * scale);
    }
    const double b = conv.bias.empty() ? 0.0 : conv.bias[i];
    folded.bias[i] = static_cast<float>((b - bn.running_mean[i]) * scale + bn.beta[i]);
  }
  return folded;
}

void relu6_inplace(Tensor& input) {
  for (float& v : input.data()) {
    v = std::min(std::max(v, 0.0f), 6.0f);
  }
}

Tensor relu6(Tensor input) {
  relu6_inplace(input);
  return input;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
  Tensor out = a;
  auto dst = out.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  const auto& s = input.shape();
  if (s.h * s.w < 1) {
    throw ShapeError("global_avg_pool: empty spatial extent in " + s.str());
  }
  Tensor out(Shape4{s.n, s.c, 1, 1});
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (float v : input.plane(n, c)) {
        sum += v;
      }
      out.at(n, c, 0, 0) = static_cast<float>(sum / double(s.h * s.w));
    }
  }
  return out;
}

Matrix fully_connected(const Matrix& input, const Matrix& weights, std::span<const float> bias) {
  if (input.cols != weights.cols) {
    throw ShapeError("fully_connected: input " + std::to_string(input.rows) + "x" + std::to_string(input.cols) +
                     " does not match weights " + std::to_string(weights.rows) + "x" +
                     std::to_string(weights.cols));
  }
  if (static_cast<std::int64_t>(bias.size()) != weights.rows) {
    throw ShapeError("fully_connected: bias " + vec_str(bias.size()) + " does not match " +
                     std::to_string(weights.rows) + " outputs");
  }
  Matrix out(input.rows, weights.rows);
  for (std::int64_t r = 0; r < input.rows; ++r) {
    const auto x = input.row(r);
    for (std::int64_t o = 0; o < weights.rows; ++o) {
      const auto wrow = weights.row(o);
      double acc = bias[static_cast<std::size_t>(o)];
      for (std::int64_t i = 0; i < input.cols; ++i) {
        acc += double(x[static_cast<std::size_t>(i)]) * wrow[static_cast<std::size_t>(i)];
      }
      out(r, o) = static_cast<float>(acc);
    }
  }
  return out;
}

std::vector<float> softmax(std::span<const float> logits) {
  if (logits.empty()) {
    throw ShapeError("softmax: empty input");
  }
  const float peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(double(logits[i]) - double(peak));
    sum += e[i];
  }
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<float>(e[i] / sum);
  }
  return out;
}

}  // namespace plate
