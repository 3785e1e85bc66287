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

#include "plate/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "plate/random.hpp"

namespace plate {

using nlohmann::json;

void ModelSpec::validate() const {
  if (resolution < 1) {
    throw SpecError("invalid model spec: resolution must be >= 1");
  }
  if (stem_channels < 1) {
    throw SpecError("invalid model spec: block 0 (stem) needs >= 1 output channel");
  }
  if (settings.empty()) {
    throw SpecError("invalid model spec: no bottleneck stages");
  }
  int block = 1;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const auto& st = settings[s];
    const std::string where = "invalid model spec: block " + std::to_string(block) + " (stage " + std::to_string(s) + ")";
    if (st.stride != 1 && st.stride != 2) {
      throw SpecError(where + " has stride " + std::to_string(st.stride) + "; expected 1 or 2");
    }
    if (st.expansion < 1) {
      throw SpecError(where + " has expansion " + std::to_string(st.expansion) + "; expected >= 1");
    }
    if (st.channels < 1) {
      throw SpecError(where + " has " + std::to_string(st.channels) + " output channels");
    }
    if (st.repeats < 1) {
      throw SpecError(where + " has repeat count " + std::to_string(st.repeats));
    }
    block += st.repeats;
  }
  if (head_width < 1) {
    throw SpecError("invalid model spec: block " + std::to_string(block) + " (final conv) needs >= 1 channel");
  }
  if (num_classes < 1) {
    throw SpecError("invalid model spec: num_classes must be >= 1");
  }
  if (!(bn_epsilon >= 0.0f)) {
    throw SpecError("invalid model spec: bn_epsilon must be non-negative");
  }
}

json ModelSpec::to_json() const {
  json rows = json::array();
  for (const auto& s : settings) {
    rows.push_back({s.expansion, s.channels, s.repeats, s.stride});
  }
  return json{{"resolution", resolution}, {"stem_channels", stem_channels}, {"settings", rows},
              {"head_width", head_width}, {"num_classes", num_classes},   {"bn_epsilon", bn_epsilon}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  ModelSpec spec;
  try {
    spec.resolution = j.at("resolution").get<int>();
    spec.stem_channels = j.at("stem_channels").get<int>();
    spec.settings.clear();
    for (const auto& row : j.at("settings")) {
      spec.settings.push_back({row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>(), row.at(3).get<int>()});
    }
    spec.head_width = j.at("head_width").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.bn_epsilon = j.at("bn_epsilon").get<float>();
  } catch (const json::exception& e) {
    throw SpecError(std::string("invalid model spec metadata: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::vector<BlockLayout> describe_blocks(const ModelSpec& spec) {
  spec.validate();
  std::vector<BlockLayout> blocks;
  auto unit = [](std::string conv, std::string bn, int cin, int cout, int k, int stride, int groups, bool act) {
    return ConvUnit{std::move(conv), std::move(bn), cin, cout, k, stride, groups, act};
  };

  BlockLayout stem;
  stem.index = 0;
  stem.name = "features.0";
  stem.units.push_back(unit("features.0.0", "features.0.1", 3, spec.stem_channels, 3, 2, 1, true));
  blocks.push_back(std::move(stem));

  int channels = spec.stem_channels;
  int index = 1;
  for (const auto& st : spec.settings) {
    for (int r = 0; r < st.repeats; ++r) {
      const int stride = r == 0 ? st.stride : 1;
      const int hidden = channels * st.expansion;
      BlockLayout b;
      b.index = index;
      b.name = "features." + std::to_string(index);
      const std::string p = b.name + ".conv.";
      int stage = 0;
      if (st.expansion != 1) {
        b.units.push_back(unit(p + "0.0", p + "0.1", channels, hidden, 1, 1, 1, true));
        stage = 1;
      }
      const std::string dw = p + std::to_string(stage);
      b.units.push_back(unit(dw + ".0", dw + ".1", hidden, hidden, 3, stride, hidden, true));
      b.units.push_back(unit(p + std::to_string(stage + 1), p + std::to_string(stage + 2), hidden, st.channels, 1, 1,
                             1, false));
      b.residual = stride == 1 && channels == st.channels;
      blocks.push_back(std::move(b));
      channels = st.channels;
      ++index;
    }
  }

  BlockLayout last;
  last.index = index;
  last.name = "features." + std::to_string(index);
  last.units.push_back(unit(last.name + ".0", last.name + ".1", channels, spec.head_width, 1, 1, 1, true));
  blocks.push_back(std::move(last));

  BlockLayout head;
  head.index = index + 1;
  head.name = "classifier";
  head.classifier = true;
  blocks.push_back(std::move(head));
  return blocks;
}

namespace {

bool is_buffer(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(shape[i]);
  }
  return s + "]";
}

void append_unit_entries(const ConvUnit& u, std::vector<NamedArray>& out) {
  out.push_back({u.conv_name + ".weight", {u.out_channels, u.in_channels / u.groups, u.kernel, u.kernel}, {}});
  for (const char* suffix : {".weight", ".bias", ".running_mean", ".running_var"}) {
    out.push_back({u.bn_name + suffix, {u.out_channels}, {}});
  }
}

}  // namespace

std::vector<NamedArray> expected_entries(const ModelSpec& spec) {
  std::vector<NamedArray> out;
  for (const auto& b : describe_blocks(spec)) {
    for (const auto& u : b.units) {
      append_unit_entries(u, out);
    }
  }
  out.push_back({kHeadWeight, {spec.num_classes, spec.head_width}, {}});
  out.push_back({kHeadBias, {spec.num_classes}, {}});
  return out;
}

ClassifierHead ClassifierHead::initialize(int num_classes, int in_features, std::uint64_t seed) {
  ClassifierHead head;
  head.num_classes = num_classes;
  head.in_features = in_features;
  head.weights.resize(static_cast<std::size_t>(num_classes) * in_features);
  head.bias.assign(static_cast<std::size_t>(num_classes), 0.0f);
  Rng rng(mix_seed(seed, "classifier-head"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  for (auto& w : head.weights) {
    w = static_cast<float>(rng.uniform(-bound, bound));
  }
  return head;
}

std::vector<ClassScore> top_k(std::span<const float> probabilities, int k, const std::vector<std::string>& labels) {
  const int n = static_cast<int>(probabilities.size());
  if (k < 1 || k > n) {
    throw std::invalid_argument("top_k: k must be in [1, " + std::to_string(n) + "], got " + std::to_string(k));
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    const float pa = probabilities[static_cast<std::size_t>(a)];
    const float pb = probabilities[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  std::vector<ClassScore> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int idx = order[static_cast<std::size_t>(i)];
    const std::string label =
        static_cast<std::size_t>(idx) < labels.size() ? labels[static_cast<std::size_t>(idx)] : std::to_string(idx);
    out.push_back({idx, label, probabilities[static_cast<std::size_t>(idx)]});
  }
  return out;
}

// Inference graph with batch norm folded into each convolution.
struct FoldedUnit {
  Conv2dParams conv;
  bool depthwise = false;
  bool activation = false;
};

struct FoldedBlock {
  std::vector<FoldedUnit> units;
  bool residual = false;
};

struct FoldedGraph {
  std::vector<FoldedBlock> blocks;
  Matrix head_weights;
  std::vector<float> head_bias;
};

namespace {

using EntryIndex = std::unordered_map<std::string, const NamedArray*>;

EntryIndex index_entries(const std::vector<NamedArray>& entries) {
  EntryIndex idx;
  for (const auto& e : entries) {
    idx.emplace(e.name, &e);
  }
  return idx;
}

Conv2dParams unit_conv(const ConvUnit& u, const EntryIndex& idx) {
  const auto* w = idx.at(u.conv_name + ".weight");
  Conv2dParams p;
  p.weights = Tensor(Shape4{w->shape[0], w->shape[1], w->shape[2], w->shape[3]}, w->values);
  p.stride = {u.stride, u.stride};
  p.padding = {u.kernel / 2, u.kernel / 2};
  p.groups = u.groups;
  return p;
}

BatchNormParams unit_bn(const ConvUnit& u, const EntryIndex& idx, float epsilon) {
  BatchNormParams bn;
  bn.gamma = idx.at(u.bn_name + ".weight")->values;
  bn.beta = idx.at(u.bn_name + ".bias")->values;
  bn.running_mean = idx.at(u.bn_name + ".running_mean")->values;
  bn.running_var = idx.at(u.bn_name + ".running_var")->values;
  bn.epsilon = epsilon;
  return bn;
}

std::shared_ptr<const FoldedGraph> fold(const ModelSpec& spec, const std::vector<NamedArray>& entries) {
  const auto idx = index_entries(entries);
  auto graph = std::make_shared<FoldedGraph>();
  for (const auto& b : describe_blocks(spec)) {
    if (b.classifier) {
      continue;
    }
    FoldedBlock fb;
    fb.residual = b.residual;
    for (const auto& u : b.units) {
      fb.units.push_back({fold_batchnorm(unit_conv(u, idx), unit_bn(u, idx, spec.bn_epsilon)), u.depthwise(),
                          u.activation});
    }
    graph->blocks.push_back(std::move(fb));
  }
  graph->head_weights = Matrix(spec.num_classes, spec.head_width, idx.at(kHeadWeight)->values);
  graph->head_bias = idx.at(kHeadBias)->values;
  return graph;
}

Tensor run_unit(const Tensor& x, const Conv2dParams& conv, bool depthwise) {
  return depthwise ? depthwise_conv2d(x, conv) : conv2d(x, conv);
}

Matrix pooled_to_matrix(const Tensor& pooled) {
  const auto& s = pooled.shape();
  return Matrix(s.n, s.c, std::vector<float>(pooled.data().begin(), pooled.data().end()));
}

Matrix rows_softmax(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::int64_t r = 0; r < logits.rows; ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.values.begin() + r * logits.cols);
  }
  return out;
}

}  // namespace

Model::Model(ModelSpec spec, std::vector<std::string> labels, std::vector<NamedArray> entries)
    : spec_(std::move(spec)), labels_(std::move(labels)), entries_(std::move(entries)) {
  folded_ = fold(spec_, entries_);
}

Model Model::from_entries(const ModelSpec& spec, std::vector<std::string> labels, std::vector<NamedArray> entries) {
  spec.validate();
  if (!labels.empty() && static_cast<int>(labels.size()) != spec.num_classes) {
    throw SpecError("model has " + std::to_string(spec.num_classes) + " classes but " +
                    std::to_string(labels.size()) + " labels");
  }
  const auto expected = expected_entries(spec);
  std::unordered_map<std::string, const NamedArray*> given;
  for (const auto& e : entries) {
    if (!given.emplace(e.name, &e).second) {
      throw FormatError("duplicate entry '" + e.name + "'");
    }
  }
  std::vector<NamedArray> ordered;
  ordered.reserve(expected.size());
  for (const auto& want : expected) {
    auto it = given.find(want.name);
    if (it == given.end()) {
      std::string extra;
      for (const auto& e : entries) {
        if (std::none_of(expected.begin(), expected.end(), [&](const NamedArray& x) { return x.name == e.name; })) {
          extra += (extra.empty() ? "; unexpected entry '" : ", '") + e.name + "'";
        }
      }
      throw FormatError("missing entry '" + want.name + "'" + extra);
    }
    const auto& have = *it->second;
    if (have.shape != want.shape) {
      throw FormatError("shape mismatch for entry '" + want.name + "': expected " + shape_str(want.shape) +
                        ", found " + shape_str(have.shape));
    }
    if (static_cast<std::int64_t>(have.values.size()) != have.count()) {
      throw FormatError("entry '" + want.name + "' has " + std::to_string(have.values.size()) + " values");
    }
    ordered.push_back(have);
  }
  if (given.size() != expected.size()) {
    std::unordered_map<std::string, int> want_names;
    for (const auto& w : expected) {
      want_names.emplace(w.name, 0);
    }
    for (const auto& e : entries) {
      if (!want_names.contains(e.name)) {
        throw FormatError("unexpected entry '" + e.name + "'");
      }
    }
  }
  if (labels.empty()) {
    for (int i = 0; i < spec.num_classes; ++i) {
      labels.push_back("class_" + std::to_string(i));
    }
  }
  return Model(spec, std::move(labels), std::move(ordered));
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed, std::vector<std::string> labels) {
  auto entries = expected_entries(spec);
  Rng rng(mix_seed(seed, "backbone"));
  for (auto& e : entries) {
    e.values.assign(static_cast<std::size_t>(e.count()), 0.0f);
    const auto& n = e.name;
    if (n == kHeadWeight || n == kHeadBias) {
      continue;
    }
    if (e.shape.size() == 4) {
      // He-normal, fan-out mode.
      const double fan_out = static_cast<double>(e.shape[0] * e.shape[2] * e.shape[3]);
      const double stddev = std::sqrt(2.0 / fan_out);
      for (auto& v : e.values) {
        v = static_cast<float>(rng.normal() * stddev);
      }
    } else if (n.ends_with(".running_var") || (n.ends_with(".weight"))) {
      std::fill(e.values.begin(), e.values.end(), 1.0f);
    }
  }
  const auto head = ClassifierHead::initialize(spec.num_classes, spec.head_width, seed);
  for (auto& e : entries) {
    if (e.name == kHeadWeight) {
      e.values = head.weights;
    } else if (e.name == kHeadBias) {
      e.values = head.bias;
    }
  }
  return from_entries(spec, std::move(labels), std::move(entries));
}

const NamedArray& Model::entry(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) {
      return e;
    }
  }
  throw std::out_of_range("no entry '" + name + "'");
}

std::int64_t Model::total_parameter_count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) {
    if (!is_buffer(e.name)) {
      total += e.count();
    }
  }
  return total;
}

std::int64_t Model::trainable_parameter_count(const FreezePolicy& policy) const {
  const auto blocks = describe_blocks(spec_);
  const int backbone_blocks = static_cast<int>(blocks.size()) - 1;
  if (policy.frozen_block_count < 0 || policy.frozen_block_count > backbone_blocks) {
    throw std::invalid_argument("frozen_block_count must be in [0, " + std::to_string(backbone_blocks) + "], got " +
                                std::to_string(policy.frozen_block_count));
  }
  const auto idx = index_entries(entries_);
  std::int64_t total = 0;
  for (const auto& b : blocks) {
    if (b.index < policy.frozen_block_count) {
      continue;
    }
    if (b.classifier) {
      total += idx.at(kHeadWeight)->count() + idx.at(kHeadBias)->count();
      continue;
    }
    for (const auto& u : b.units) {
      total += idx.at(u.conv_name + ".weight")->count();
      total += idx.at(u.bn_name + ".weight")->count() + idx.at(u.bn_name + ".bias")->count();
    }
  }
  return total;
}

Model Model::replace_head(int num_classes, std::uint64_t seed, std::vector<std::string> labels) const {
  if (num_classes < 2) {
    throw std::invalid_argument("replace_head: num_classes must be >= 2, got " + std::to_string(num_classes));
  }
  return with_head(ClassifierHead::initialize(num_classes, spec_.head_width, seed), std::move(labels));
}

Model Model::with_head(const ClassifierHead& head, std::vector<std::string> labels) const {
  if (head.in_features != spec_.head_width) {
    throw ShapeError("head expects " + std::to_string(head.in_features) + " features, backbone produces " +
                     std::to_string(spec_.head_width));
  }
  if (head.weights.size() != static_cast<std::size_t>(head.num_classes) * head.in_features ||
      head.bias.size() != static_cast<std::size_t>(head.num_classes)) {
    throw ShapeError("head arrays do not match " + std::to_string(head.num_classes) + " classes");
  }
  ModelSpec spec = spec_;
  spec.num_classes = head.num_classes;
  auto entries = entries_;
  for (auto& e : entries) {
    if (e.name == kHeadWeight) {
      e.shape = {head.num_classes, head.in_features};
      e.values = head.weights;
    } else if (e.name == kHeadBias) {
      e.shape = {head.num_classes};
      e.values = head.bias;
    }
  }
  if (labels.empty() && head.num_classes == spec_.num_classes) {
    labels = labels_;
  }
  return from_entries(spec, std::move(labels), std::move(entries));
}

ClassifierHead Model::head() const {
  ClassifierHead h;
  h.num_classes = spec_.num_classes;
  h.in_features = spec_.head_width;
  h.weights = folded_->head_weights.values;
  h.bias = folded_->head_bias;
  return h;
}

void Model::check_batch(const Tensor& batch) const {
  const auto& s = batch.shape();
  if (s.c != 3 || s.h != spec_.resolution || s.w != spec_.resolution) {
    throw ShapeError("forward: batch " + s.str() + " does not match model input (N, 3, " +
                     std::to_string(spec_.resolution) + ", " + std::to_string(spec_.resolution) + ")");
  }
}

Tensor Model::features(const Tensor& batch) const {
  check_batch(batch);
  Tensor x = batch;
  for (const auto& block : folded_->blocks) {
    Tensor y = x;
    for (const auto& u : block.units) {
      y = run_unit(y, u.conv, u.depthwise);
      if (u.activation) {
        relu6_inplace(y);
      }
    }
    x = block.residual ? add(y, x) : std::move(y);
  }
  return global_avg_pool(x);
}

Matrix Model::logits(const Tensor& batch) const {
  const Matrix f = pooled_to_matrix(features(batch));
  return fully_connected(f, folded_->head_weights, folded_->head_bias);
}

Matrix Model::logits_unfolded(const Tensor& batch) const {
  check_batch(batch);
  const auto idx = index_entries(entries_);
  Tensor x = batch;
  for (const auto& b : describe_blocks(spec_)) {
    if (b.classifier) {
      continue;
    }
    Tensor y = x;
    for (const auto& u : b.units) {
      const auto conv = unit_conv(u, idx);
      y = batch_norm(run_unit(y, conv, u.depthwise()), unit_bn(u, idx, spec_.bn_epsilon));
      if (u.activation) {
        relu6_inplace(y);
      }
    }
    x = b.residual ? add(y, x) : std::move(y);
  }
  const Matrix f = pooled_to_matrix(global_avg_pool(x));
  return fully_connected(f, Matrix(spec_.num_classes, spec_.head_width, idx.at(kHeadWeight)->values),
                         idx.at(kHeadBias)->values);
}

Model Model::calibrate_batchnorm(const Tensor& batch) const {
  check_batch(batch);
  if (batch.shape().n < 1) {
    throw ShapeError("calibrate_batchnorm: empty batch");
  }
  auto entries = entries_;
  std::unordered_map<std::string, NamedArray*> by_name;
  for (auto& e : entries) {
    by_name.emplace(e.name, &e);
  }
  const auto idx = index_entries(entries);
  Tensor x = batch;
  for (const auto& b : describe_blocks(spec_)) {
    if (b.classifier) {
      continue;
    }
    Tensor y = x;
    for (const auto& u : b.units) {
      const Tensor z = run_unit(y, unit_conv(u, idx), u.depthwise());
      const auto& s = z.shape();
      auto& mean = by_name.at(u.bn_name + ".running_mean")->values;
      auto& var = by_name.at(u.bn_name + ".running_var")->values;
      for (std::int64_t c = 0; c < s.c; ++c) {
        double sum = 0.0;
        double sq = 0.0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          for (float v : z.plane(n, c)) {
            sum += v;
            sq += double(v) * v;
          }
        }
        const double count = double(s.n * s.h * s.w);
        const double m = sum / count;
        mean[static_cast<std::size_t>(c)] = static_cast<float>(m);
        var[static_cast<std::size_t>(c)] = static_cast<float>(std::max(0.0, sq / count - m * m));
      }
      y = batch_norm(z, unit_bn(u, idx, spec_.bn_epsilon));
      if (u.activation) {
        relu6_inplace(y);
      }
    }
    x = b.residual ? add(y, x) : std::move(y);
  }
  return Model(spec_, labels_, std::move(entries));
}

Matrix Model::probabilities(const Tensor& batch) const { return rows_softmax(logits(batch)); }

Matrix Model::head_probabilities(const Matrix& features) const {
  return rows_softmax(fully_connected(features, folded_->head_weights, folded_->head_bias));
}

std::vector<Prediction> Model::forward(const Tensor& batch, int k) const {
  if (k < 1 || k > spec_.num_classes) {
    throw std::invalid_argument("forward: k must be in [1, " + std::to_string(spec_.num_classes) + "], got " +
                                std::to_string(k));
  }
  const auto start = std::chrono::steady_clock::now();
  const Matrix probs = probabilities(batch);
  const double elapsed =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  std::vector<Prediction> out;
  for (std::int64_t r = 0; r < probs.rows; ++r) {
    out.push_back({top_k(probs.row(r), k, labels_), probs.rows ? elapsed / double(probs.rows) : 0.0});
  }
  return out;
}

Container model_to_container(const Model& model) {
  Container c;
  c.metadata = json{{"kind", "mobilenet_v2"},
                    {"num_classes", model.spec().num_classes},
                    {"input_resolution", model.spec().resolution},
                    {"labels", model.labels()},
                    {"spec", model.spec().to_json()}};
  c.entries = model.entries();
  return c;
}

Model model_from_container(const Container& container) {
  const auto& meta = container.metadata;
  if (meta.value("kind", std::string{}) != "mobilenet_v2" || !meta.contains("spec")) {
    throw FormatError("container does not hold mobilenet_v2 weights");
  }
  const auto spec = ModelSpec::from_json(meta.at("spec"));
  if (meta.value("num_classes", -1) != spec.num_classes || meta.value("input_resolution", -1) != spec.resolution) {
    throw FormatError("metadata num_classes/input_resolution disagree with the embedded model spec");
  }
  auto labels = meta.value("labels", std::vector<std::string>{});
  return Model::from_entries(spec, std::move(labels), container.entries);
}

WeightManifest save_weights(const Model& model, const std::filesystem::path& path) {
  const auto container = model_to_container(model);
  write_container(path, container);
  WeightManifest m;
  m.metadata = container.metadata;
  std::uint64_t offset = 0;
  for (const auto& e : container.entries) {
    m.entries.push_back({e.name, e.shape, offset});
    offset += static_cast<std::uint64_t>(e.count()) * sizeof(float);
  }
  return m;
}

Model load_weights(const std::filesystem::path& path) { return model_from_container(read_container(path)); }

Tensor prepare_image(const Model& model, const RgbImage& image) {
  return preprocess(image, model.spec().resolution);
}

}  // namespace plate
