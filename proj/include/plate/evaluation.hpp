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
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "plate/model.hpp"
#include "plate/trainer.hpp"

namespace plate {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalSample {
  std::string path;
  int true_index = 0;
  std::vector<float> probabilities;
};

struct Misprediction {
  std::string path;
  std::string true_label;
  std::string predicted_label;
  float probability = 0.0f;
};

struct Metrics {
  std::vector<std::string> labels;
  std::vector<int> ks;
  std::vector<std::int64_t> hits;  // parallel to ks
  std::int64_t total = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]

  double accuracy(int k) const;  // throws if k was not evaluated
  double top1() const { return accuracy(1); }
  double top5() const { return accuracy(5); }
  /// 0 when the class was never predicted / never present.
  double precision(int cls) const;
  double recall(int cls) const;

  nlohmann::json to_json() const;
  static Metrics from_json(const nlohmann::json& j);
  /// Accuracy table with one column per k.
  std::string table(const std::string& row_name = "mobilenet_v2") const;
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct Evaluation {
  Metrics metrics;
  std::vector<Misprediction> mispredictions;  // top-1 misses, most confident first

  std::string mispredictions_csv() const;
};

/// Rank of the true class decides each top-k hit; ties go to the lower class
/// index. k values above the class count are evaluated as the class count.
Evaluation evaluate(const std::vector<EvalSample>& samples, const std::vector<std::string>& labels,
                    const std::vector<int>& ks = {1, 5});

/// Applies `head` to every cache row and evaluates.
Evaluation evaluate_head(const ClassifierHead& head, const FeatureCache& cache, const std::vector<std::string>& labels,
                         const std::vector<int>& ks = {1, 5});

struct CrossValidation {
  std::vector<Metrics> folds;
  double mean_top1 = 0.0;
  double stddev_top1 = 0.0;  // sample standard deviation over folds
  double mean_top5 = 0.0;
  double stddev_top5 = 0.0;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// For each fold i, trains a head on every row whose fold is not i
/// (augmented rows carry their source's fold) and evaluates it on the
/// original rows of fold i. Rows without a fold are always training rows.
CrossValidation cross_validate(const FeatureCache& cache, const std::vector<std::string>& labels,
                               const TrainConfig& config, int k = 10);

}  // namespace plate
