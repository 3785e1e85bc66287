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

#include "plate/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <jpeglib.h>

namespace plate {

RgbImage::RgbImage(int w, int h) : width(w), height(h) {
  if (w < 0 || h < 0) {
    throw ImageError("image: negative dimensions");
  }
  pixels.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0);
}

FloatImage FloatImage::from(const RgbImage& image) {
  FloatImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.assign(image.pixels.begin(), image.pixels.end());
  return out;
}

RgbImage FloatImage::to_rgb() const {
  RgbImage out(width, height);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float v = std::nearbyint(pixels[i]);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
  }
  return out;
}

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= sizeof(kPng) && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return ImageFormat::Png;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
    return ImageFormat::Jpeg;
  }
  return ImageFormat::Unknown;
}

namespace {

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("png: " + msg);
  }
  img.format = PNG_FORMAT_RGB;
  if (img.width == 0 || img.height == 0 || img.width > (1u << 15) || img.height > (1u << 15)) {
    png_image_free(&img);
    throw ImageError("png: unsupported dimensions");
  }
  RgbImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

// Returns false and fills `message` on failure. No objects with destructors
// live across the setjmp boundary.
bool decode_jpeg_raw(const std::uint8_t* data, std::size_t size, RgbImage* out, char* message) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  err.pub.emit_message = jpeg_silence;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_width == 0 || cinfo.output_height == 0 || cinfo.output_width > (1u << 15) ||
      cinfo.output_height > (1u << 15) || cinfo.output_components != 3) {
    std::snprintf(message, JMSG_LENGTH_MAX, "unsupported dimensions");
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  out->width = static_cast<int>(cinfo.output_width);
  out->height = static_cast<int>(cinfo.output_height);
  out->pixels.resize(static_cast<std::size_t>(out->width) * out->height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out->pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out->width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

bool encode_jpeg_raw(const RgbImage* image, int quality, unsigned char** buffer, unsigned long* size,
                     char* message) {
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_compress(&cinfo);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, buffer, size);
  cinfo.image_width = static_cast<JDIMENSION>(image->width);
  cinfo.image_height = static_cast<JDIMENSION>(image->height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(image->pixels.data() +
                                     static_cast<std::size_t>(cinfo.next_scanline) * image->width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::Png:
      return decode_png(bytes);
    case ImageFormat::Jpeg: {
      RgbImage out;
      char message[JMSG_LENGTH_MAX] = {};
      if (!decode_jpeg_raw(bytes.data(), bytes.size(), &out, message)) {
        throw ImageError(std::string("jpeg: ") + message);
      }
      return out;
    }
    case ImageFormat::Unknown:
      break;
  }
  throw ImageError("unrecognized image format (expected PNG or JPEG)");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

RgbImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_image(bytes);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.empty()) {
    throw ImageError("png: cannot encode an empty image");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_jpeg(const RgbImage& image, int quality) {
  if (image.empty()) {
    throw ImageError("jpeg: cannot encode an empty image");
  }
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  char message[JMSG_LENGTH_MAX] = {};
  const bool ok = encode_jpeg_raw(&image, quality, &buffer, &size, message);
  std::vector<std::uint8_t> out;
  if (ok) {
    out.assign(buffer, buffer + size);
  }
  std::free(buffer);
  if (!ok) {
    throw ImageError(std::string("jpeg: ") + message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file_bytes(path, encode_png(image));
}

FloatImage resample_bilinear(const FloatImage& src, double x, double y, double w, double h, int out_w,
                             int out_h) {
  if (src.width <= 0 || src.height <= 0 || out_w <= 0 || out_h <= 0) {
    throw ImageError("resample: empty image");
  }
  FloatImage out;
  out.width = out_w;
  out.height = out_h;
  out.pixels.assign(static_cast<std::size_t>(out_w) * out_h * 3, 0.0f);
  const double sx = w / out_w;
  const double sy = h / out_h;
  const int max_x = src.width - 1;
  const int max_y = src.height - 1;
  // Precompute column taps.
  std::vector<int> x0s(static_cast<std::size_t>(out_w));
  std::vector<int> x1s(static_cast<std::size_t>(out_w));
  std::vector<float> fxs(static_cast<std::size_t>(out_w));
  for (int ox = 0; ox < out_w; ++ox) {
    double fx = x + (ox + 0.5) * sx - 0.5;
    fx = std::clamp(fx, 0.0, static_cast<double>(max_x));
    const int x0 = static_cast<int>(std::floor(fx));
    x0s[static_cast<std::size_t>(ox)] = x0;
    x1s[static_cast<std::size_t>(ox)] = std::min(x0 + 1, max_x);
    fxs[static_cast<std::size_t>(ox)] = static_cast<float>(fx - x0);
  }
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = y + (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(max_y));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, max_y);
    const float wy = static_cast<float>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto i = static_cast<std::size_t>(ox);
      const float wx = fxs[i];
      const float* p00 = src.at(x0s[i], y0);
      const float* p01 = src.at(x1s[i], y0);
      const float* p10 = src.at(x0s[i], y1);
      const float* p11 = src.at(x1s[i], y1);
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

Tensor preprocess(const RgbImage& image, int resolution, const Normalization& norm) {
  if (image.empty()) {
    throw ImageError("preprocess: zero-sized image");
  }
  if (resolution <= 0) {
    throw ImageError("preprocess: resolution must be positive");
  }
  FloatImage f = FloatImage::from(image);
  if (image.width != resolution || image.height != resolution) {
    f = resample_bilinear(f, 0.0, 0.0, image.width, image.height, resolution, resolution);
  }
  Tensor out(Shape4{1, 3, resolution, resolution});
  for (int c = 0; c < 3; ++c) {
    auto plane = out.plane(0, c);
    const float mean = norm.mean[static_cast<std::size_t>(c)];
    const float inv_std = 1.0f / norm.stddev[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane.size(); ++i) {
      plane[i] = (f.pixels[i * 3 + static_cast<std::size_t>(c)] / 255.0f - mean) * inv_std;
    }
  }
  return out;
}

}  // namespace plate
