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

#include "plate/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "plate/random.hpp"

namespace plate {
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::vector<std::size_t> select(const DatasetManifest& m, auto&& keep) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (keep(m.records[i])) {
      out.push_back(i);
    }
  }
  return out;
}

std::string skipped_text(const std::vector<RejectedFile>& skipped) {
  std::string out;
  for (const auto& s : skipped) {
    out += s.path + ": " + s.reason + "\n";
  }
  return out;
}

}  // namespace

PreparedDataset prepare_dataset(const fs::path& corpus_root, ClassTaxonomy taxonomy, double train_fraction,
                                int folds, std::uint64_t seed, int threads) {
  PreparedDataset out;
  auto scanned = scan_corpus(corpus_root, taxonomy, threads);
  out.report = std::move(scanned.report);
  auto m = split(scanned.manifest, train_fraction, mix_seed(seed, "split"), &out.warnings);
  out.manifest = assign_folds(m, folds, mix_seed(seed, "folds"), &out.warnings);
  return out;
}

TrainedModel train_on_manifest(const Model& backbone, const DatasetManifest& manifest, const TrainConfig& config,
                               FeatureStore* store, int threads) {
  if (manifest.labels.size() < 2) {
    throw TrainError("need at least two labels to train a classifier");
  }
  const auto rows = select(manifest, [](const SampleRecord& r) { return r.split == Split::train; });
  auto extraction = extract_features(backbone, manifest, rows, store, threads);
  auto result = train_head(extraction.cache, static_cast<int>(manifest.labels.size()), config);
  auto model = backbone.with_head(result.head, manifest.labels);
  return {std::move(model), std::move(result), std::move(extraction)};
}

Evaluation evaluate_on_manifest(const Model& model, const DatasetManifest& manifest, FeatureStore* store, int threads,
                                std::vector<RejectedFile>* skipped) {
  if (model.labels() != manifest.labels) {
    throw EvaluationError("model labels do not match the manifest labels");
  }
  const auto rows = select(manifest, [](const SampleRecord& r) {
    return r.split == Split::test && r.provenance == Provenance::original;
  });
  auto extraction = extract_features(model, manifest, rows, store, threads);
  if (skipped != nullptr) {
    *skipped = extraction.skipped;
  }
  return evaluate_head(model.head(), extraction.cache, manifest.labels);
}

CrossValidation cross_validate_manifest(const Model& backbone, const DatasetManifest& manifest,
                                        const TrainConfig& config, int folds, FeatureStore* store, int threads) {
  const auto rows = select(manifest, [](const SampleRecord& r) { return r.split == Split::train; });
  const auto extraction = extract_features(backbone, manifest, rows, store, threads);
  return cross_validate(extraction.cache, manifest.labels, config, folds);
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  fs::create_directories(config.work_dir);
  const auto taxonomy = config.consolidate ? config.taxonomy : ClassTaxonomy{};
  auto prepared =
      prepare_dataset(config.corpus_root, taxonomy, config.train_fraction, config.folds, config.seed, config.threads);
  std::string scan_text = prepared.report.to_text();
  for (const auto& w : prepared.warnings) {
    scan_text += "warning: " + w + "\n";
  }
  write_text(config.work_dir / "scan_report.txt", scan_text);

  PipelineResult result;
  result.num_classes = prepared.manifest.labels.size();
  result.before = ClassStats::of(prepared.manifest);
  DatasetManifest manifest = prepared.manifest;
  if (config.augment) {
    auto policy = config.policy;
    policy.seed = mix_seed(config.seed, "augment");
    std::vector<std::string> warnings;
    const auto plan = plan_augmentation(manifest, policy, &warnings);
    auto materialized = materialize(manifest, plan, config.work_dir / "aug", config.threads);
    manifest = std::move(materialized.manifest);
  }
  result.after = ClassStats::of(manifest);
  write_text(config.work_dir / "augmentation_report.txt", augmentation_report(result.before, result.after));
  manifest.write(config.work_dir / "manifest.jsonl");

  const auto backbone = load_weights(config.weights);
  const auto store_path = config.feature_store.value_or(config.work_dir / "features.plf");
  auto store = FeatureStore::open(store_path, backbone_fingerprint(backbone), backbone.spec().head_width);

  auto train_config = config.train;
  train_config.seed = mix_seed(config.seed, "train");
  auto trained = train_on_manifest(backbone, manifest, train_config, &store, config.threads);
  save_weights(trained.model, config.work_dir / "model.plf");
  auto train_json = trained.result.to_json();
  train_json["config"] = train_config.to_json();
  train_json["skipped"] = skipped_text(trained.extraction.skipped);
  write_text(config.work_dir / "train.json", train_json.dump(2) + "\n");

  std::vector<RejectedFile> skipped;
  result.evaluation = evaluate_on_manifest(trained.model, manifest, &store, config.threads, &skipped);
  write_text(config.work_dir / "metrics.json", result.evaluation.metrics.to_json().dump(2) + "\n");
  write_text(config.work_dir / "metrics.txt", result.evaluation.metrics.table());
  write_text(config.work_dir / "mispredictions.csv", result.evaluation.mispredictions_csv());

  if (config.cross_validation) {
    auto cv = cross_validate_manifest(backbone, manifest, train_config, config.folds, &store, config.threads);
    write_text(config.work_dir / "cv.json", cv.to_json().dump(2) + "\n");
    write_text(config.work_dir / "cv.txt", cv.table());
    result.cross_validation = std::move(cv);
  }
  store.save(store_path);

  result.manifest = std::move(manifest);
  result.train = std::move(trained.result);
  return result;
}

std::string AblationCell::name() const {
  return std::string(consolidation ? "merged" : "unmerged") + "_" + (augmentation ? "augmented" : "plain");
}

std::vector<AblationCell> standard_ablation_grid() { return {{false, true}, {true, false}, {true, true}}; }

namespace {

// Top-1 accuracy reported for each standard cell on the original 27-class
// food corpus, which is not distributed. Shown for comparison only.
std::optional<double> reference_top1(const AblationCell& c) {
  if (!c.consolidation && c.augmentation) {
    return 0.900;
  }
  if (c.consolidation && !c.augmentation) {
    return 0.935;
  }
  if (c.consolidation && c.augmentation) {
    return 0.940;
  }
  return std::nullopt;
}

}  // namespace

std::string AblationReport::table() const {
  std::ostringstream out;
  out << "combined classes  augmentation  classes   train   test    top-1    top-5  reference top-1\n";
  char line[160];
  for (const auto& r : rows) {
    const auto ref = reference_top1(r.cell);
    char ref_text[16] = "-";
    if (ref) {
      std::snprintf(ref_text, sizeof ref_text, "%.1f%%", 100.0 * *ref);
    }
    std::snprintf(line, sizeof line, "%-17s %-13s %7zu %7zu %6zu %7.2f%% %7.2f%%  %15s\n",
                  r.cell.consolidation ? "with" : "without", r.cell.augmentation ? "with" : "without", r.num_classes,
                  r.train_samples, r.test_samples, 100.0 * r.top1, 100.0 * r.top5, ref_text);
    out << line;
  }
  out << "\nEach cell's accuracy is over its own class count (see the classes column).\n"
         "Reference values were measured on the original food corpus and are not reproduced here.\n";
  return out.str();
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"cell", r.cell.name()},
                       {"consolidation", r.cell.consolidation},
                       {"augmentation", r.cell.augmentation},
                       {"num_classes", r.num_classes},
                       {"train_samples", r.train_samples},
                       {"test_samples", r.test_samples},
                       {"top1", r.top1},
                       {"top5", r.top5}};
    if (const auto ref = reference_top1(r.cell)) {
      row["reference_top1"] = *ref;
    }
    j.push_back(row);
  }
  return {{"rows", j}};
}

AblationReport run_ablation(const PipelineConfig& base, const std::vector<AblationCell>& cells) {
  AblationReport report;
  const auto store = base.feature_store.value_or(base.work_dir / "features.plf");
  for (const auto& cell : cells) {
    PipelineConfig cfg = base;
    cfg.consolidate = cell.consolidation;
    cfg.augment = cell.augmentation;
    cfg.cross_validation = false;
    cfg.work_dir = base.work_dir / cell.name();
    cfg.feature_store = store;
    const auto r = run_pipeline(cfg);
    const auto totals = r.after.totals();
    report.rows.push_back({cell, r.num_classes, static_cast<std::size_t>(totals.train()),
                           static_cast<std::size_t>(totals.original_test), r.evaluation.metrics.top1(),
                           r.evaluation.metrics.top5()});
  }
  return report;
}

}  // namespace plate
