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
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace plate {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw directory labels plus a consolidation map. Unmapped labels map to
/// themselves. Merge targets may not themselves be remapped, which keeps
/// consolidation idempotent.
class ClassTaxonomy {
 public:
  ClassTaxonomy() = default;

  /// The built-in merges: baklava/kinafah, khubz/pita, salad/tabouleh/fattoush.
  static ClassTaxonomy default_merges();

  /// One "raw -> final" (or "raw → final") pair per line; '#' starts a comment.
  static ClassTaxonomy parse(std::string_view text);
  static ClassTaxonomy load(const std::filesystem::path& path);
  std::string to_text() const;

  void add_merge(const std::string& raw, const std::string& final_label);
  std::string consolidate(std::string_view raw) const;

  const std::map<std::string, std::string>& merges() const { return merges_; }
  const std::set<std::string>& raw_labels() const { return raw_labels_; }
  void add_raw_label(const std::string& raw) { raw_labels_.insert(raw); }

  /// Distinct consolidated labels of raw_labels(), ascending.
  std::vector<std::string> final_labels() const;

 private:
  std::map<std::string, std::string> merges_;
  std::set<std::string> raw_labels_;
};

enum class Split { train, test };
enum class Provenance { original, augmented };

std::string_view to_string(Split s);
std::string_view to_string(Provenance p);

struct SampleRecord {
  std::string path;  // relative to the manifest root, '/'-separated
  std::string raw_label;
  std::string label;  // final label
  std::optional<Split> split;
  std::optional<int> fold;
  Provenance provenance = Provenance::original;
  std::optional<std::string> source;  // path of the original an augmented sample came from

  nlohmann::json to_json() const;
  static SampleRecord from_json(const nlohmann::json& j);
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> labels;  // final labels, ascending; index = class index
  std::vector<SampleRecord> records;

  std::filesystem::path resolve(const SampleRecord& r) const { return root / r.path; }
  int label_index(std::string_view label) const;  // throws DatasetError for unknown labels

  /// Header line followed by one record per line.
  std::string to_jsonl() const;
  static DatasetManifest from_jsonl(std::string_view text);
  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct RejectedFile {
  std::string path;
  std::string reason;
};

struct ScanReport {
  std::size_t accepted = 0;
  std::vector<RejectedFile> rejected;
  std::vector<std::string> warnings;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct ScanResult {
  DatasetManifest manifest;
  ScanReport report;
};

/// Scans `<root>/<raw-label>/<images>`. Every file is decoded; undecodable
/// files are reported and skipped. Records are ordered by path. The
/// taxonomy's raw label set is filled from the directory names.
ScanResult scan_corpus(const std::filesystem::path& root, ClassTaxonomy& taxonomy, int threads = 0);

/// Stratified per final label. Within a label, paths are sorted and shuffled
/// with a seed derived from (seed, label); the first floor(n * fraction)
/// (clamped to [1, n - 1]) go to train. Labels with fewer than two samples
/// go entirely to train with a warning.
DatasetManifest split(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed,
                      std::vector<std::string>* warnings = nullptr);

/// Gives every training original a fold index in [0, k). Within a label the
/// folds are dealt round-robin after a seeded shuffle, continuing from where
/// the previous label stopped, so fold sizes differ by at most one both per
/// label and overall.
DatasetManifest assign_folds(const DatasetManifest& manifest, int k, std::uint64_t seed,
                             std::vector<std::string>* warnings = nullptr);

struct ClassCounts {
  std::int64_t original_train = 0;
  std::int64_t original_test = 0;
  std::int64_t original_unsplit = 0;
  std::int64_t augmented = 0;

  std::int64_t originals() const { return original_train + original_test + original_unsplit; }
  std::int64_t train() const { return original_train + augmented; }
  std::int64_t total() const { return originals() + augmented; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ClassStats {
  std::map<std::string, ClassCounts> per_label;

  static ClassStats of(const DatasetManifest& manifest);
  ClassCounts totals() const;
  std::string to_text() const;
  nlohmann::json to_json() const;
};

}  // namespace plate
