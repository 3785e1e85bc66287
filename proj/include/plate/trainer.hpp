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
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plate/dataset.hpp"
#include "plate/model.hpp"

namespace plate {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 128;
  double head_learning_rate = 1e-3;
  // Kept for the record: backbone fine-tuning happens outside this tool, so
  // this rate is never applied here.
  double backbone_learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 30;
  bool early_stop = true;
  int patience = 5;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Pooled backbone features, one row per sample.
struct FeatureCache {
  int dim = 0;
  std::vector<float> features;  // size() x dim
  std::vector<int> labels;
  std::vector<std::string> paths;
  std::vector<int> folds;  // -1 when unassigned
  std::vector<char> augmented;

  std::size_t size() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  void push(std::span<const float> f, int label, std::string path, int fold = -1, bool is_augmented = false);
  FeatureCache subset(const std::vector<std::size_t>& rows) const;
};

/// Content-addressed feature vectors for one model, persisted in the weight
/// container format. Opening a file written for a different model discards it.
class FeatureStore {
 public:
  FeatureStore(std::string fingerprint, int dim) : fingerprint_(std::move(fingerprint)), dim_(dim) {}

  static FeatureStore open(const std::filesystem::path& path, const std::string& fingerprint, int dim);
  void save(const std::filesystem::path& path) const;

  const std::vector<float>* find(const std::string& content_hash) const;
  void put(const std::string& content_hash, std::vector<float> features);
  std::size_t size() const { return entries_.size(); }
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::string fingerprint_;
  int dim_;
  std::map<std::string, std::vector<float>> entries_;
};

/// SHA-256 over the backbone: model spec (without the class count) and every
/// non-classifier array. Models that differ only in their head share it.
std::string backbone_fingerprint(const Model& model);

struct ExtractionResult {
  FeatureCache cache;
  std::vector<RejectedFile> skipped;
  std::size_t reused = 0;
  std::size_t computed = 0;
};

/// Features for the selected records, in the given order. Unreadable images
/// are skipped and reported. With a store, previously seen file contents are
/// not recomputed and new ones are added.
ExtractionResult extract_features(const Model& model, const DatasetManifest& manifest,
                                  const std::vector<std::size_t>& records, FeatureStore* store = nullptr,
                                  int threads = 0);

/// Mean softmax cross-entropy over a batch and its gradient with respect to
/// the head parameters: (p - onehot) x features, averaged.
struct HeadGradient {
  double loss = 0.0;
  std::vector<double> weights;  // classes x dim
  std::vector<double> bias;
};

HeadGradient head_gradient(std::span<const double> weights, std::span<const double> bias, const FeatureCache& cache,
                           std::span<const std::size_t> rows, int num_classes);

class Adam {
 public:
  Adam(std::size_t size, double beta1, double beta2, double epsilon);
  /// One bias-corrected update of params in place.
  void step(std::span<double> params, std::span<const double> grads, double learning_rate);
  std::int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainResult {
  ClassifierHead head;
  std::vector<double> epoch_loss;  // mean cross-entropy over the full cache after each epoch
  bool stopped_early = false;
  double train_accuracy = 0.0;
  nlohmann::json to_json() const;
};

/// Adam on mean cross-entropy over seeded per-epoch shuffles; the last
/// partial batch is kept. Starts from `initial` when given.
TrainResult train_head(const FeatureCache& cache, int num_classes, const TrainConfig& config,
                       const ClassifierHead* initial = nullptr);

}  // namespace plate
