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

#include "plate/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>

namespace plate {

double Metrics::accuracy(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) {
      return total == 0 ? 0.0 : static_cast<double>(hits[i]) / static_cast<double>(total);
    }
  }
  throw EvaluationError("top-" + std::to_string(k) + " was not evaluated");
}

double Metrics::precision(int cls) const {
  std::int64_t predicted = 0;
  for (const auto& row : confusion) {
    predicted += row.at(static_cast<std::size_t>(cls));
  }
  return predicted == 0 ? 0.0
                        : static_cast<double>(confusion.at(static_cast<std::size_t>(cls))[static_cast<std::size_t>(cls)]) /
                              static_cast<double>(predicted);
}

double Metrics::recall(int cls) const {
  const auto& row = confusion.at(static_cast<std::size_t>(cls));
  std::int64_t present = 0;
  for (const auto v : row) {
    present += v;
  }
  return present == 0 ? 0.0 : static_cast<double>(row[static_cast<std::size_t>(cls)]) / static_cast<double>(present);
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j;
  j["labels"] = labels;
  j["total"] = total;
  nlohmann::json acc = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    acc["top" + std::to_string(ks[i])] = {{"hits", hits[i]}, {"accuracy", accuracy(ks[i])}};
  }
  j["accuracy"] = acc;
  j["ks"] = ks;
  j["confusion"] = confusion;
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < labels.size(); ++c) {
    per_class.push_back({{"label", labels[c]},
                         {"precision", precision(static_cast<int>(c))},
                         {"recall", recall(static_cast<int>(c))}});
  }
  j["per_class"] = per_class;
  return j;
}

Metrics Metrics::from_json(const nlohmann::json& j) {
  Metrics m;
  m.labels = j.at("labels").get<std::vector<std::string>>();
  m.total = j.at("total").get<std::int64_t>();
  m.ks = j.at("ks").get<std::vector<int>>();
  for (const auto k : m.ks) {
    m.hits.push_back(j.at("accuracy").at("top" + std::to_string(k)).at("hits").get<std::int64_t>());
  }
  m.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
  return m;
}

std::string Metrics::table(const std::string& row_name) const {
  std::ostringstream out;
  const int name_width = static_cast<int>(std::max<std::size_t>(row_name.size(), 5)) + 2;
  out << std::left << std::setw(name_width) << "model";
  for (const auto k : ks) {
    out << std::right << std::setw(10) << ("top-" + std::to_string(k));
  }
  out << "\n" << std::left << std::setw(name_width) << row_name;
  for (const auto k : ks) {
    char cell[32];
    std::snprintf(cell, sizeof cell, "%.2f%%", 100.0 * accuracy(k));
    out << std::right << std::setw(10) << cell;
  }
  out << "\n";
  return out.str();
}

std::string Evaluation::mispredictions_csv() const {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
      return s;
    }
    std::string q = "\"";
    for (const char c : s) {
      q += c;
      if (c == '"') {
        q += '"';
      }
    }
    return q + "\"";
  };
  std::ostringstream out;
  out << "path,true,predicted,probability\n";
  for (const auto& m : mispredictions) {
    char p[32];
    std::snprintf(p, sizeof p, "%.6f", static_cast<double>(m.probability));
    out << quote(m.path) << "," << quote(m.true_label) << "," << quote(m.predicted_label) << "," << p << "\n";
  }
  return out.str();
}

Evaluation evaluate(const std::vector<EvalSample>& samples, const std::vector<std::string>& labels,
                    const std::vector<int>& ks) {
  if (samples.empty()) {
    throw EvaluationError("nothing to evaluate");
  }
  const auto n_classes = static_cast<int>(labels.size());
  if (ks.empty() || std::any_of(ks.begin(), ks.end(), [](int k) { return k < 1; })) {
    throw EvaluationError("k values must be >= 1");
  }
  Evaluation ev;
  auto& m = ev.metrics;
  m.labels = labels;
  m.ks = ks;
  m.hits.assign(ks.size(), 0);
  m.confusion.assign(labels.size(), std::vector<std::int64_t>(labels.size(), 0));
  for (const auto& s : samples) {
    if (s.true_index < 0 || s.true_index >= n_classes) {
      throw EvaluationError("sample " + s.path + " has label index " + std::to_string(s.true_index) +
                            " outside the taxonomy of " + std::to_string(n_classes));
    }
    if (s.probabilities.size() != labels.size()) {
      throw EvaluationError("sample " + s.path + " has " + std::to_string(s.probabilities.size()) +
                            " probabilities for " + std::to_string(n_classes) + " classes");
    }
    const float pt = s.probabilities[static_cast<std::size_t>(s.true_index)];
    int rank = 0;
    int predicted = 0;
    for (int c = 0; c < n_classes; ++c) {
      const float pc = s.probabilities[static_cast<std::size_t>(c)];
      if (pc > pt || (pc == pt && c < s.true_index)) {
        ++rank;
      }
      if (pc > s.probabilities[static_cast<std::size_t>(predicted)]) {
        predicted = c;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (rank < std::min(ks[i], n_classes)) {
        ++m.hits[i];
      }
    }
    ++m.confusion[static_cast<std::size_t>(s.true_index)][static_cast<std::size_t>(predicted)];
    ++m.total;
    if (predicted != s.true_index) {
      ev.mispredictions.push_back({s.path, labels[static_cast<std::size_t>(s.true_index)],
                                   labels[static_cast<std::size_t>(predicted)],
                                   s.probabilities[static_cast<std::size_t>(predicted)]});
    }
  }
  std::stable_sort(ev.mispredictions.begin(), ev.mispredictions.end(),
                   [](const Misprediction& a, const Misprediction& b) { return a.probability > b.probability; });
  return ev;
}

Evaluation evaluate_head(const ClassifierHead& head, const FeatureCache& cache, const std::vector<std::string>& labels,
                         const std::vector<int>& ks) {
  if (head.num_classes != static_cast<int>(labels.size())) {
    throw EvaluationError("head has " + std::to_string(head.num_classes) + " outputs for " +
                          std::to_string(labels.size()) + " labels");
  }
  Matrix w{head.num_classes, head.in_features, head.weights};
  std::vector<EvalSample> samples;
  samples.reserve(cache.size());
  for (std::size_t r = 0; r < cache.size(); ++r) {
    const auto f = cache.row(r);
    const Matrix x{1, cache.dim, std::vector<float>(f.begin(), f.end())};
    const auto logits = fully_connected(x, w, head.bias);
    samples.push_back({cache.paths[r], cache.labels[r], softmax(logits.values)});
  }
  return evaluate(samples, labels, ks);
}

namespace {

void mean_stddev(const std::vector<double>& xs, double& mean, double& stddev) {
  mean = 0.0;
  for (const auto x : xs) {
    mean += x;
  }
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (const auto x : xs) {
    ss += (x - mean) * (x - mean);
  }
  stddev = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace

nlohmann::json CrossValidation::to_json() const {
  nlohmann::json per_fold = nlohmann::json::array();
  for (const auto& f : folds) {
    per_fold.push_back(f.to_json());
  }
  return {{"folds", per_fold},
          {"mean_top1", mean_top1},
          {"stddev_top1", stddev_top1},
          {"mean_top5", mean_top5},
          {"stddev_top5", stddev_top5}};
}

std::string CrossValidation::table() const {
  std::ostringstream out;
  out << "fold     samples     top-1     top-5\n";
  char line[96];
  for (std::size_t i = 0; i < folds.size(); ++i) {
    std::snprintf(line, sizeof line, "%-8zu %7lld %8.2f%% %8.2f%%\n", i, static_cast<long long>(folds[i].total),
                  100.0 * folds[i].top1(), 100.0 * folds[i].top5());
    out << line;
  }
  std::snprintf(line, sizeof line, "mean             %8.2f%% %8.2f%%\nstddev           %8.2f%% %8.2f%%\n",
                100.0 * mean_top1, 100.0 * mean_top5, 100.0 * stddev_top1, 100.0 * stddev_top5);
  out << line;
  return out.str();
}

CrossValidation cross_validate(const FeatureCache& cache, const std::vector<std::string>& labels,
                               const TrainConfig& config, int k) {
  if (k < 2) {
    throw EvaluationError("cross-validation needs k >= 2");
  }
  CrossValidation cv;
  std::vector<double> top1, top5;
  for (int fold = 0; fold < k; ++fold) {
    std::vector<std::size_t> train, held_out;
    for (std::size_t r = 0; r < cache.size(); ++r) {
      if (cache.folds[r] == fold) {
        if (!cache.augmented[r]) {
          held_out.push_back(r);
        }
      } else {
        train.push_back(r);
      }
    }
    if (held_out.empty()) {
      throw EvaluationError("fold " + std::to_string(fold) + " is empty");
    }
    if (train.empty()) {
      throw EvaluationError("no training rows outside fold " + std::to_string(fold));
    }
    TrainConfig fold_config = config;
    fold_config.seed = config.seed + static_cast<std::uint64_t>(fold);
    const auto trained = train_head(cache.subset(train), static_cast<int>(labels.size()), fold_config);
    auto metrics = evaluate_head(trained.head, cache.subset(held_out), labels).metrics;
    top1.push_back(metrics.top1());
    top5.push_back(metrics.top5());
    cv.folds.push_back(std::move(metrics));
  }
  mean_stddev(top1, cv.mean_top1, cv.stddev_top1);
  mean_stddev(top5, cv.mean_top5, cv.stddev_top5);
  return cv;
}

}  // namespace plate
