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

#include "plate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#include "plate/container.hpp"
#include "plate/hash.hpp"
#include "plate/parallel.hpp"
#include "plate/random.hpp"

namespace plate {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) {
    throw TrainError("batch_size must be >= 1");
  }
  if (!(head_learning_rate > 0.0) || !(backbone_learning_rate > 0.0)) {
    throw TrainError("learning rates must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw TrainError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw TrainError("Adam epsilon must be > 0");
  }
  if (epochs < 1) {
    throw TrainError("epochs must be >= 1");
  }
  if (patience < 1) {
    throw TrainError("patience must be >= 1");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"head_learning_rate", head_learning_rate},
          {"backbone_learning_rate", backbone_learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"epsilon", epsilon},
          {"epochs", epochs},
          {"early_stop", early_stop},
          {"patience", patience},
          {"min_improvement", min_improvement},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.head_learning_rate = j.value("head_learning_rate", c.head_learning_rate);
  c.backbone_learning_rate = j.value("backbone_learning_rate", c.backbone_learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.epochs = j.value("epochs", c.epochs);
  c.early_stop = j.value("early_stop", c.early_stop);
  c.patience = j.value("patience", c.patience);
  c.min_improvement = j.value("min_improvement", c.min_improvement);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void FeatureCache::push(std::span<const float> f, int label, std::string path, int fold, bool is_augmented) {
  if (dim == 0) {
    dim = static_cast<int>(f.size());
  }
  if (f.size() != static_cast<std::size_t>(dim)) {
    throw TrainError("feature length " + std::to_string(f.size()) + " does not match cache dimension " +
                     std::to_string(dim));
  }
  features.insert(features.end(), f.begin(), f.end());
  labels.push_back(label);
  paths.push_back(std::move(path));
  folds.push_back(fold);
  augmented.push_back(is_augmented ? 1 : 0);
}

FeatureCache FeatureCache::subset(const std::vector<std::size_t>& rows) const {
  FeatureCache out;
  out.dim = dim;
  for (const auto i : rows) {
    out.push(row(i), labels[i], paths[i], folds[i], augmented[i] != 0);
  }
  return out;
}

FeatureStore FeatureStore::open(const fs::path& path, const std::string& fingerprint, int dim) {
  FeatureStore store(fingerprint, dim);
  if (!fs::exists(path)) {
    return store;
  }
  const auto c = read_container(path);
  if (c.metadata.value("kind", "") != "feature-cache" || c.metadata.value("model", "") != fingerprint ||
      c.metadata.value("dim", 0) != dim) {
    return store;
  }
  for (const auto& e : c.entries) {
    if (e.values.size() == static_cast<std::size_t>(dim)) {
      store.entries_[e.name] = e.values;
    }
  }
  return store;
}

void FeatureStore::save(const fs::path& path) const {
  Container c;
  c.metadata = {{"kind", "feature-cache"}, {"model", fingerprint_}, {"dim", dim_}};
  for (const auto& [hash, values] : entries_) {
    c.entries.push_back({hash, {dim_}, values});
  }
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  write_container(path, c);
}

const std::vector<float>* FeatureStore::find(const std::string& content_hash) const {
  const auto it = entries_.find(content_hash);
  return it == entries_.end() ? nullptr : &it->second;
}

void FeatureStore::put(const std::string& content_hash, std::vector<float> features) {
  if (features.size() != static_cast<std::size_t>(dim_)) {
    throw TrainError("feature store expects vectors of length " + std::to_string(dim_));
  }
  entries_[content_hash] = std::move(features);
}

std::string backbone_fingerprint(const Model& model) {
  auto spec = model.spec().to_json();
  spec.erase("num_classes");
  const auto text = spec.dump();
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  for (const auto& e : model.entries()) {
    if (e.name == kHeadWeight || e.name == kHeadBias) {
      continue;
    }
    bytes.insert(bytes.end(), e.name.begin(), e.name.end());
    const auto* raw = reinterpret_cast<const std::uint8_t*>(e.values.data());
    bytes.insert(bytes.end(), raw, raw + e.values.size() * sizeof(float));
  }
  return sha256_hex(bytes);
}

ExtractionResult extract_features(const Model& model, const DatasetManifest& manifest,
                                  const std::vector<std::size_t>& records, FeatureStore* store, int threads) {
  const int dim = model.spec().head_width;
  std::vector<std::vector<float>> rows(records.size());
  std::vector<std::string> errors(records.size());
  std::vector<char> reused(records.size(), 0);
  std::mutex store_mu;

  parallel_for(
      records.size(),
      [&](std::size_t i) {
        const auto& rec = manifest.records.at(records[i]);
        try {
          const auto bytes = read_file_bytes(manifest.resolve(rec));
          std::string hash;
          if (store != nullptr) {
            hash = sha256_hex(bytes);
            std::lock_guard lock(store_mu);
            if (const auto* hit = store->find(hash)) {
              rows[i] = *hit;
              reused[i] = 1;
              return;
            }
          }
          const auto image = decode_image(bytes);
          const auto f = model.features(prepare_image(model, image));
          rows[i].assign(f.data().begin(), f.data().end());
          if (store != nullptr) {
            std::lock_guard lock(store_mu);
            store->put(hash, rows[i]);
          }
        } catch (const std::exception& e) {
          errors[i] = e.what();
          if (errors[i].empty()) {
            errors[i] = "unreadable";
          }
        }
      },
      threads);

  ExtractionResult out;
  out.cache.dim = dim;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = manifest.records[records[i]];
    if (!errors[i].empty()) {
      out.skipped.push_back({rec.path, errors[i]});
      continue;
    }
    out.cache.push(rows[i], manifest.label_index(rec.label), rec.path, rec.fold.value_or(-1),
                   rec.provenance == Provenance::augmented);
    if (reused[i]) {
      ++out.reused;
    } else {
      ++out.computed;
    }
  }
  return out;
}

HeadGradient head_gradient(std::span<const double> weights, std::span<const double> bias, const FeatureCache& cache,
                           std::span<const std::size_t> rows, int num_classes) {
  const auto dim = static_cast<std::size_t>(cache.dim);
  const auto classes = static_cast<std::size_t>(num_classes);
  HeadGradient g;
  g.weights.assign(classes * dim, 0.0);
  g.bias.assign(classes, 0.0);
  if (rows.empty()) {
    return g;
  }
  std::vector<double> p(classes);
  for (const auto r : rows) {
    const auto f = cache.row(r);
    const auto y = static_cast<std::size_t>(cache.labels[r]);
    double peak = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double z = bias[c];
      const double* w = weights.data() + c * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        z += w[k] * f[k];
      }
      p[c] = z;
      peak = std::max(peak, z);
    }
    double sum = 0.0;
    for (auto& v : p) {
      v = std::exp(v - peak);
      sum += v;
    }
    for (auto& v : p) {
      v /= sum;
    }
    g.loss -= std::log(std::max(p[y], 1e-300));
    for (std::size_t c = 0; c < classes; ++c) {
      const double delta = p[c] - (c == y ? 1.0 : 0.0);
      g.bias[c] += delta;
      double* gw = g.weights.data() + c * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        gw[k] += delta * f[k];
      }
    }
  }
  const double scale = 1.0 / static_cast<double>(rows.size());
  g.loss *= scale;
  for (auto& v : g.weights) {
    v *= scale;
  }
  for (auto& v : g.bias) {
    v *= scale;
  }
  return g;
}

Adam::Adam(std::size_t size, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads, double learning_rate) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw TrainError("Adam: parameter size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon_);
  }
}

nlohmann::json TrainResult::to_json() const {
  return {{"epoch_loss", epoch_loss},
          {"epochs_run", epoch_loss.size()},
          {"stopped_early", stopped_early},
          {"train_accuracy", train_accuracy}};
}

TrainResult train_head(const FeatureCache& cache, int num_classes, const TrainConfig& config,
                       const ClassifierHead* initial) {
  config.validate();
  if (cache.size() == 0) {
    throw TrainError("cannot train on an empty feature cache");
  }
  if (num_classes < 2) {
    throw TrainError("need at least two classes");
  }
  for (const auto y : cache.labels) {
    if (y < 0 || y >= num_classes) {
      throw TrainError("label index " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  const auto dim = static_cast<std::size_t>(cache.dim);
  const auto head0 = initial != nullptr ? *initial
                                        : ClassifierHead::initialize(num_classes, cache.dim,
                                                                     mix_seed(config.seed, "head-init"));
  if (head0.num_classes != num_classes || head0.in_features != cache.dim) {
    throw TrainError("initial head shape does not match the cache");
  }
  std::vector<double> w(head0.weights.begin(), head0.weights.end());
  std::vector<double> b(head0.bias.begin(), head0.bias.end());
  Adam adam_w(w.size(), config.beta1, config.beta2, config.epsilon);
  Adam adam_b(b.size(), config.beta1, config.beta2, config.epsilon);

  std::vector<std::size_t> all(cache.size());
  std::iota(all.begin(), all.end(), 0);

  TrainResult result;
  double best = INFINITY;
  int stalled = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto order = all;
    Rng rng(mix_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const auto g = head_gradient(w, b, cache, batch, num_classes);
      if (!std::isfinite(g.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch starting at " << start << " (loss " << g.loss << ")";
        throw TrainError(msg.str());
      }
      adam_w.step(w, g.weights, config.head_learning_rate);
      adam_b.step(b, g.bias, config.head_learning_rate);
    }
    const double loss = head_gradient(w, b, cache, all, num_classes).loss;
    if (!std::isfinite(loss)) {
      throw TrainError("non-finite loss after epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(loss);
    if (loss < best - config.min_improvement) {
      best = loss;
      stalled = 0;
    } else if (++stalled >= config.patience && config.early_stop) {
      result.stopped_early = true;
      break;
    }
  }

  result.head.num_classes = num_classes;
  result.head.in_features = cache.dim;
  result.head.weights.assign(w.begin(), w.end());
  result.head.bias.assign(b.begin(), b.end());

  std::size_t correct = 0;
  for (std::size_t r = 0; r < cache.size(); ++r) {
    const auto f = cache.row(r);
    int best_c = 0;
    double best_z = -INFINITY;
    for (int c = 0; c < num_classes; ++c) {
      double z = result.head.bias[static_cast<std::size_t>(c)];
      const float* wc = result.head.weights.data() + static_cast<std::size_t>(c) * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        z += double(wc[k]) * f[k];
      }
      if (z > best_z) {
        best_z = z;
        best_c = c;
      }
    }
    correct += best_c == cache.labels[r] ? 1 : 0;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(cache.size());
  return result;
}

}  // namespace plate
