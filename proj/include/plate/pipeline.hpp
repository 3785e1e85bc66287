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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plate/augment.hpp"
#include "plate/dataset.hpp"
#include "plate/evaluation.hpp"
#include "plate/model.hpp"
#include "plate/trainer.hpp"

namespace plate {

// Step functions shared by the CLI subcommands and the end-to-end runs.

struct PreparedDataset {
  DatasetManifest manifest;
  ScanReport report;
  std::vector<std::string> warnings;  // from splitting and fold assignment
};

/// scan -> split -> assign_folds.
PreparedDataset prepare_dataset(const std::filesystem::path& corpus_root, ClassTaxonomy taxonomy,
                                double train_fraction, int folds, std::uint64_t seed, int threads = 0);

struct TrainedModel {
  Model model;  // backbone with the trained head and the manifest's labels
  TrainResult result;
  ExtractionResult extraction;
};

/// Replaces the head with one output per manifest label and trains it on the
/// manifest's train records (originals and augmented).
TrainedModel train_on_manifest(const Model& backbone, const DatasetManifest& manifest, const TrainConfig& config,
                               FeatureStore* store = nullptr, int threads = 0);

/// Evaluates a model on the manifest's test records. The model's labels must
/// equal the manifest's.
Evaluation evaluate_on_manifest(const Model& model, const DatasetManifest& manifest, FeatureStore* store = nullptr,
                                int threads = 0, std::vector<RejectedFile>* skipped = nullptr);

/// Cross-validation over the manifest's training records.
CrossValidation cross_validate_manifest(const Model& backbone, const DatasetManifest& manifest,
                                        const TrainConfig& config, int folds, FeatureStore* store = nullptr,
                                        int threads = 0);

struct PipelineConfig {
  std::filesystem::path corpus_root;
  std::filesystem::path weights;  // backbone weights; the head is replaced
  std::filesystem::path work_dir;
  std::optional<std::filesystem::path> feature_store;  // default: <work_dir>/features.plf
  ClassTaxonomy taxonomy = ClassTaxonomy::default_merges();
  bool consolidate = true;
  bool augment = true;
  bool cross_validation = true;
  double train_fraction = 0.9;
  int folds = 10;
  AugmentationPolicy policy;
  TrainConfig train;
  std::uint64_t seed = 0;  // seeds split, folds, augmentation and training
  int threads = 0;
};

struct PipelineResult {
  DatasetManifest manifest;
  ClassStats before;
  ClassStats after;
  TrainResult train;
  Evaluation evaluation;
  std::optional<CrossValidation> cross_validation;
  std::size_t num_classes = 0;
};

/// scan -> split -> assign_folds -> plan -> materialize -> train -> eval.
/// Writes into work_dir: scan_report.txt, manifest.jsonl,
/// augmentation_report.txt, aug/, model.plf, train.json, metrics.json,
/// metrics.txt, mispredictions.csv and, with cross-validation, cv.json and
/// cv.txt.
PipelineResult run_pipeline(const PipelineConfig& config);

struct AblationCell {
  bool consolidation = true;
  bool augmentation = true;
  std::string name() const;
};

/// The three published rows in order: (off, on), (on, off), (on, on).
std::vector<AblationCell> standard_ablation_grid();

struct AblationRow {
  AblationCell cell;
  std::size_t num_classes = 0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  double top1 = 0.0;
  double top5 = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string table() const;
  nlohmann::json to_json() const;
};

/// Runs the pipeline once per cell under <work_dir>/<cell name>, sharing one
/// feature store. Cross-validation is skipped inside cells.
AblationReport run_ablation(const PipelineConfig& base, const std::vector<AblationCell>& cells);

}  // namespace plate
