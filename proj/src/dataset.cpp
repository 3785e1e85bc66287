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

#include "plate/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "plate/image.hpp"
#include "plate/parallel.hpp"
#include "plate/random.hpp"

namespace plate {
namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

ClassTaxonomy ClassTaxonomy::default_merges() {
  ClassTaxonomy t;
  t.add_merge("baklava", "baklava_kinafah");
  t.add_merge("kinafah", "baklava_kinafah");
  t.add_merge("khubz", "khubz_pita");
  t.add_merge("pita", "khubz_pita");
  t.add_merge("tabouleh", "salad");
  t.add_merge("fattoush", "salad");
  return t;
}

ClassTaxonomy ClassTaxonomy::parse(std::string_view text) {
  ClassTaxonomy t;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = trim(view);
    if (view.empty()) {
      continue;
    }
    std::size_t arrow = view.find("->");
    std::size_t arrow_len = 2;
    if (arrow == std::string_view::npos) {
      arrow = view.find("→");
      arrow_len = std::string_view("→").size();
    }
    if (arrow == std::string_view::npos) {
      throw DatasetError("taxonomy line " + std::to_string(line_no) + ": expected 'raw -> final'");
    }
    const auto raw = trim(view.substr(0, arrow));
    const auto fin = trim(view.substr(arrow + arrow_len));
    if (raw.empty() || fin.empty()) {
      throw DatasetError("taxonomy line " + std::to_string(line_no) + ": empty label");
    }
    try {
      t.add_merge(std::string(raw), std::string(fin));
    } catch (const DatasetError& e) {
      throw DatasetError("taxonomy line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return t;
}

ClassTaxonomy ClassTaxonomy::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DatasetError("cannot read taxonomy file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ClassTaxonomy::to_text() const {
  std::string out;
  for (const auto& [raw, fin] : merges_) {
    out += raw + " -> " + fin + "\n";
  }
  return out;
}

void ClassTaxonomy::add_merge(const std::string& raw, const std::string& final_label) {
  if (const auto it = merges_.find(raw); it != merges_.end() && it->second != final_label) {
    throw DatasetError("'" + raw + "' is already mapped to '" + it->second + "'");
  }
  // Reject chains in either direction: a target that is remapped, or a
  // source that is some other merge's target.
  if (const auto it = merges_.find(final_label); it != merges_.end() && it->second != final_label) {
    throw DatasetError("'" + final_label + "' is itself mapped to '" + it->second + "'");
  }
  if (raw != final_label) {
    for (const auto& [r, f] : merges_) {
      if (f == raw && r != raw) {
        throw DatasetError("'" + raw + "' is the target of '" + r + "' and cannot be remapped");
      }
    }
  }
  merges_[raw] = final_label;
}

std::string ClassTaxonomy::consolidate(std::string_view raw) const {
  const auto it = merges_.find(std::string(raw));
  return it == merges_.end() ? std::string(raw) : it->second;
}

std::vector<std::string> ClassTaxonomy::final_labels() const {
  std::set<std::string> out;
  for (const auto& raw : raw_labels_) {
    out.insert(consolidate(raw));
  }
  return {out.begin(), out.end()};
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }
std::string_view to_string(Provenance p) { return p == Provenance::original ? "original" : "augmented"; }

nlohmann::json SampleRecord::to_json() const {
  nlohmann::json j;
  j["path"] = path;
  j["raw_label"] = raw_label;
  j["label"] = label;
  j["provenance"] = std::string(to_string(provenance));
  if (split) {
    j["split"] = std::string(to_string(*split));
  }
  if (fold) {
    j["fold"] = *fold;
  }
  if (source) {
    j["source"] = *source;
  }
  return j;
}

SampleRecord SampleRecord::from_json(const nlohmann::json& j) {
  SampleRecord r;
  r.path = j.at("path").get<std::string>();
  r.raw_label = j.at("raw_label").get<std::string>();
  r.label = j.at("label").get<std::string>();
  const auto prov = j.at("provenance").get<std::string>();
  if (prov == "original") {
    r.provenance = Provenance::original;
  } else if (prov == "augmented") {
    r.provenance = Provenance::augmented;
  } else {
    throw DatasetError("unknown provenance '" + prov + "'");
  }
  if (j.contains("split")) {
    const auto s = j.at("split").get<std::string>();
    if (s == "train") {
      r.split = Split::train;
    } else if (s == "test") {
      r.split = Split::test;
    } else {
      throw DatasetError("unknown split '" + s + "'");
    }
  }
  if (j.contains("fold")) {
    r.fold = j.at("fold").get<int>();
  }
  if (j.contains("source")) {
    r.source = j.at("source").get<std::string>();
  }
  return r;
}

int DatasetManifest::label_index(std::string_view label) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) {
    throw DatasetError("label '" + std::string(label) + "' is not in the taxonomy");
  }
  return static_cast<int>(it - labels.begin());
}

std::string DatasetManifest::to_jsonl() const {
  nlohmann::json header;
  header["kind"] = "plate-manifest";
  header["version"] = 1;
  header["root"] = root.generic_string();
  header["labels"] = labels;
  std::string out = header.dump() + "\n";
  for (const auto& r : records) {
    out += r.to_json().dump() + "\n";
  }
  return out;
}

DatasetManifest DatasetManifest::from_jsonl(std::string_view text) {
  DatasetManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("kind", "") != "plate-manifest") {
          throw DatasetError("missing manifest header");
        }
        m.root = j.at("root").get<std::string>();
        m.labels = j.at("labels").get<std::vector<std::string>>();
        have_header = true;
        continue;
      }
      m.records.push_back(SampleRecord::from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DatasetError& e) {
      throw DatasetError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) {
    throw DatasetError("empty manifest");
  }
  return m;
}

void DatasetManifest::write(const fs::path& path) const {
  // The root is stored relative to the manifest file so a manifest and its
  // corpus can be moved together.
  DatasetManifest copy = *this;
  const auto base = fs::absolute(path).parent_path().lexically_normal();
  fs::create_directories(base);
  copy.root = fs::absolute(root).lexically_normal().lexically_relative(base);
  if (copy.root.empty()) {
    copy.root = ".";
  }
  const auto text = copy.to_jsonl();
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

DatasetManifest DatasetManifest::read(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  auto m = from_jsonl({reinterpret_cast<const char*>(bytes.data()), bytes.size()});
  if (m.root.is_relative()) {
    m.root = (fs::absolute(path).parent_path() / m.root).lexically_normal();
  }
  return m;
}

std::string ScanReport::to_text() const {
  std::ostringstream out;
  out << "accepted " << accepted << " images, rejected " << rejected.size() << "\n";
  for (const auto& r : rejected) {
    out << "rejected " << r.path << ": " << r.reason << "\n";
  }
  for (const auto& w : warnings) {
    out << "warning: " << w << "\n";
  }
  return out.str();
}

nlohmann::json ScanReport::to_json() const {
  auto rej = nlohmann::json::array();
  for (const auto& r : rejected) {
    rej.push_back({{"path", r.path}, {"reason", r.reason}});
  }
  return {{"accepted", accepted}, {"rejected", rej}, {"warnings", warnings}};
}

ScanResult scan_corpus(const fs::path& root, ClassTaxonomy& taxonomy, int threads) {
  if (!fs::is_directory(root)) {
    throw DatasetError("corpus root " + root.string() + " is not a directory");
  }
  ScanResult result;
  result.manifest.root = root;

  struct Candidate {
    std::string rel;
    std::string raw;
  };
  std::vector<Candidate> candidates;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with(".")) {
      continue;
    }
    if (entry.is_directory()) {
      class_dirs.push_back(entry.path());
    } else {
      result.report.warnings.push_back("ignoring file outside a class directory: " + name);
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  for (const auto& dir : class_dirs) {
    const auto raw = dir.filename().string();
    taxonomy.add_raw_label(raw);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      if (!entry.is_regular_file() || name.starts_with(".")) {
        continue;
      }
      candidates.push_back({raw + "/" + name, raw});
      ++files;
    }
    if (files == 0) {
      result.report.warnings.push_back("class directory '" + raw + "' is empty");
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) { return a.rel < b.rel; });
  std::sort(result.report.warnings.begin(), result.report.warnings.end());

  std::vector<std::string> errors(candidates.size());
  parallel_for(
      candidates.size(),
      [&](std::size_t i) {
        try {
          const auto image = read_image(root / candidates[i].rel);
          if (image.empty()) {
            errors[i] = "empty image";
          }
        } catch (const std::exception& e) {
          errors[i] = e.what();
          if (errors[i].empty()) {
            errors[i] = "undecodable";
          }
        }
      },
      threads);

  std::set<std::string> labels;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!errors[i].empty()) {
      result.report.rejected.push_back({candidates[i].rel, errors[i]});
      continue;
    }
    SampleRecord r;
    r.path = candidates[i].rel;
    r.raw_label = candidates[i].raw;
    r.label = taxonomy.consolidate(r.raw_label);
    labels.insert(r.label);
    result.manifest.records.push_back(std::move(r));
  }
  result.report.accepted = result.manifest.records.size();
  result.manifest.labels.assign(labels.begin(), labels.end());
  return result;
}

namespace {

std::map<std::string, std::vector<std::size_t>> group_by_label(const DatasetManifest& m, auto&& keep) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (keep(m.records[i])) {
      groups[m.records[i].label].push_back(i);
    }
  }
  for (auto& [label, idx] : groups) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.records[a].path < m.records[b].path; });
  }
  return groups;
}

}  // namespace

DatasetManifest split(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed,
                      std::vector<std::string>* warnings) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DatasetError("train fraction must lie in (0, 1)");
  }
  for (const auto& r : manifest.records) {
    if (r.provenance == Provenance::augmented) {
      throw DatasetError("split expects originals only; found augmented record " + r.path);
    }
  }
  DatasetManifest out = manifest;
  const auto groups = group_by_label(out, [](const SampleRecord&) { return true; });
  for (const auto& [label, sorted] : groups) {
    auto order = sorted;
    Rng rng(mix_seed(mix_seed(seed, "split"), label));
    rng.shuffle(std::span<std::size_t>(order));
    const auto n = static_cast<std::int64_t>(order.size());
    std::int64_t n_train = n;
    if (n < 2) {
      if (warnings != nullptr) {
        warnings->push_back("class '" + label + "' has " + std::to_string(n) + " sample(s); all assigned to train");
      }
    } else {
      n_train = static_cast<std::int64_t>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
      n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      auto& r = out.records[order[static_cast<std::size_t>(i)]];
      r.split = i < n_train ? Split::train : Split::test;
      r.fold.reset();
    }
  }
  return out;
}

DatasetManifest assign_folds(const DatasetManifest& manifest, int k, std::uint64_t seed,
                             std::vector<std::string>* warnings) {
  if (k < 2) {
    throw DatasetError("fold count must be at least 2");
  }
  DatasetManifest out = manifest;
  for (auto& r : out.records) {
    r.fold.reset();
  }
  const auto groups = group_by_label(out, [](const SampleRecord& r) {
    return r.provenance == Provenance::original && r.split == Split::train;
  });
  std::size_t cursor = 0;
  for (const auto& [label, sorted] : groups) {
    if (sorted.size() < static_cast<std::size_t>(k) && warnings != nullptr) {
      warnings->push_back("class '" + label + "' has " + std::to_string(sorted.size()) +
                          " training originals, fewer than " + std::to_string(k) + " folds; some folds are empty");
    }
    auto order = sorted;
    Rng rng(mix_seed(mix_seed(seed, "folds"), label));
    rng.shuffle(std::span<std::size_t>(order));
    for (const auto idx : order) {
      out.records[idx].fold = static_cast<int>(cursor % static_cast<std::size_t>(k));
      ++cursor;
    }
  }
  // Augmented samples follow their source into its fold so a held-out fold
  // never has derived copies on the training side.
  std::map<std::string, int> fold_of;
  for (const auto& r : out.records) {
    if (r.provenance == Provenance::original && r.fold) {
      fold_of[r.path] = *r.fold;
    }
  }
  for (auto& r : out.records) {
    if (r.provenance == Provenance::augmented && r.source) {
      if (const auto it = fold_of.find(*r.source); it != fold_of.end()) {
        r.fold = it->second;
      }
    }
  }
  return out;
}

ClassStats ClassStats::of(const DatasetManifest& manifest) {
  ClassStats s;
  for (const auto& label : manifest.labels) {
    s.per_label[label];
  }
  for (const auto& r : manifest.records) {
    auto& c = s.per_label[r.label];
    if (r.provenance == Provenance::augmented) {
      ++c.augmented;
    } else if (!r.split) {
      ++c.original_unsplit;
    } else if (*r.split == Split::train) {
      ++c.original_train;
    } else {
      ++c.original_test;
    }
  }
  return s;
}

ClassCounts ClassStats::totals() const {
  ClassCounts t;
  for (const auto& [label, c] : per_label) {
    t.original_train += c.original_train;
    t.original_test += c.original_test;
    t.original_unsplit += c.original_unsplit;
    t.augmented += c.augmented;
  }
  return t;
}

std::string ClassStats::to_text() const {
  std::size_t width = 5;
  for (const auto& [label, c] : per_label) {
    width = std::max(width, label.size());
  }
  std::ostringstream out;
  auto row = [&](const std::string& name, const ClassCounts& c) {
    out << name << std::string(width - name.size() + 2, ' ');
    for (const auto v : {c.original_train, c.original_test, c.augmented, c.total()}) {
      const auto s = std::to_string(v);
      out << std::string(s.size() < 10 ? 10 - s.size() : 1, ' ') << s;
    }
    out << "\n";
  };
  out << "class" << std::string(width - 5 + 2, ' ') << "     train      test augmented     total\n";
  for (const auto& [label, c] : per_label) {
    row(label, c);
  }
  row("total", totals());
  return out.str();
}

nlohmann::json ClassStats::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [label, c] : per_label) {
    j[label] = {{"original_train", c.original_train},
                {"original_test", c.original_test},
                {"original_unsplit", c.original_unsplit},
                {"augmented", c.augmented}};
  }
  return j;
}

}  // namespace plate
