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
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plate/container.hpp"
#include "plate/image.hpp"
#include "plate/tensor.hpp"

namespace plate {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One row of the MobileNet-v2 bottleneck table.
struct BottleneckSetting {
  int expansion = 1;
  int channels = 16;
  int repeats = 1;
  int stride = 1;
  friend bool operator==(const BottleneckSetting&, const BottleneckSetting&) = default;
};

struct ModelSpec {
  int resolution = 224;
  int stem_channels = 32;
  std::vector<BottleneckSetting> settings = {
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
  };
  int head_width = 1280;
  int num_classes = 1000;
  float bn_epsilon = 1e-5f;

  /// Throws SpecError naming the offending block index.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// A conv -> batch-norm (-> relu6) unit, named after its parameter entries.
struct ConvUnit {
  std::string conv_name;  // "<conv_name>.weight"
  std::string bn_name;  // "<bn_name>.{weight,bias,running_mean,running_var}"
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int groups = 1;
  bool activation = true;

  bool depthwise() const { return groups > 1 && groups == in_channels && groups == out_channels; }
};

/// One entry of the ordered block list: features.0 (stem), features.1 ..
/// features.17 (bottlenecks), features.18 (final 1x1 conv), then the
/// classifier. Freezing counts over this list.
struct BlockLayout {
  int index = 0;
  std::string name;
  std::vector<ConvUnit> units;
  bool residual = false;
  bool classifier = false;
};

std::vector<BlockLayout> describe_blocks(const ModelSpec& spec);

inline const std::string kHeadWeight = "classifier.1.weight";
inline const std::string kHeadBias = "classifier.1.bias";

/// Ordered (name, shape) list of every stored array for a spec.
std::vector<NamedArray> expected_entries(const ModelSpec& spec);

struct FreezePolicy {
  /// Leading backbone blocks whose parameters are frozen; the classifier is
  /// always trainable.
  int frozen_block_count = 0;
};

struct ClassifierHead {
  int num_classes = 0;
  int in_features = 0;
  std::vector<float> weights;  // num_classes x in_features
  std::vector<float> bias;  // num_classes

  /// Uniform in +-1/sqrt(in_features), zero bias.
  static ClassifierHead initialize(int num_classes, int in_features, std::uint64_t seed);
};

struct ClassScore {
  int index = 0;
  std::string label;
  float probability = 0.0f;
};

struct Prediction {
  std::vector<ClassScore> top;
  double latency_ms = 0.0;
};

/// k highest probabilities; ties go to the lower class index.
std::vector<ClassScore> top_k(std::span<const float> probabilities, int k, const std::vector<std::string>& labels);

struct FoldedGraph;

/// An immutable MobileNet-v2 classifier. Batch norm is folded into the
/// preceding convolutions when the model is constructed; the unfolded
/// parameters are kept for serialization.
class Model {
 public:
  /// Random initialization (He-normal convs, identity batch norm, uniform head).
  static Model build(const ModelSpec& spec, std::uint64_t seed, std::vector<std::string> labels = {});

  /// Validates every entry against the model spec and takes ownership.
  static Model from_entries(const ModelSpec& spec, std::vector<std::string> labels, std::vector<NamedArray> entries);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<NamedArray>& entries() const { return entries_; }
  const NamedArray& entry(const std::string& name) const;
  std::vector<BlockLayout> blocks() const { return describe_blocks(spec_); }

  /// Learnable parameters (conv/fc weights and biases, batch-norm affine);
  /// running statistics are buffers and are excluded.
  std::int64_t total_parameter_count() const;
  std::int64_t trainable_parameter_count(const FreezePolicy& policy) const;

  /// Resets every batch-norm layer's running statistics to the per-channel
  /// mean and variance its convolution produces on `batch`, layer by layer.
  /// Gives a randomly initialized backbone well-scaled activations.
  Model calibrate_batchnorm(const Tensor& batch) const;

  Model replace_head(int num_classes, std::uint64_t seed, std::vector<std::string> labels = {}) const;
  Model with_head(const ClassifierHead& head, std::vector<std::string> labels = {}) const;
  ClassifierHead head() const;

  /// Backbone output after global average pooling: (N, head_width, 1, 1).
  Tensor features(const Tensor& batch) const;
  Matrix logits(const Tensor& batch) const;
  /// Reference path that runs explicit batch-norm layers.
  Matrix logits_unfolded(const Tensor& batch) const;
  Matrix probabilities(const Tensor& batch) const;
  std::vector<Prediction> forward(const Tensor& batch, int k) const;

  /// Applies the classifier to precomputed features (N x head_width).
  Matrix head_probabilities(const Matrix& features) const;

 private:
  Model(ModelSpec spec, std::vector<std::string> labels, std::vector<NamedArray> entries);
  void check_batch(const Tensor& batch) const;

  ModelSpec spec_;
  std::vector<std::string> labels_;
  std::vector<NamedArray> entries_;
  std::shared_ptr<const FoldedGraph> folded_;
};

struct WeightManifestEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t offset = 0;
};

struct WeightManifest {
  int format_version = kContainerFormatVersion;
  nlohmann::json metadata;
  std::vector<WeightManifestEntry> entries;
};

WeightManifest save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);
Model model_from_container(const Container& container);
Container model_to_container(const Model& model);

/// Decode + preprocess at the model's resolution.
Tensor prepare_image(const Model& model, const RgbImage& image);

}  // namespace plate
