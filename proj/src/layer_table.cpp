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

#include "plate/layer_table.hpp"

#include <string>

namespace plate {
namespace {

void conv(std::vector<NamedArray>& out, const std::string& name, std::int64_t cout, std::int64_t cin,
          std::int64_t k) {
  out.push_back({name + ".weight", {cout, cin, k, k}, {}});
}

void bn(std::vector<NamedArray>& out, const std::string& name, std::int64_t c) {
  for (const char* suffix : {".weight", ".bias", ".running_mean", ".running_var"}) {
    out.push_back({name + suffix, {c}, {}});
  }
}

}  // namespace

std::vector<NamedArray> resnet50_entries(int num_classes) {
  std::vector<NamedArray> out;
  conv(out, "conv1", 64, 3, 7);
  bn(out, "bn1", 64);
  const int depths[] = {3, 4, 6, 3};
  const int widths[] = {64, 128, 256, 512};
  std::int64_t in = 64;
  for (int layer = 0; layer < 4; ++layer) {
    const std::int64_t width = widths[layer];
    const std::int64_t expanded = width * 4;
    for (int b = 0; b < depths[layer]; ++b) {
      const std::string p = "layer" + std::to_string(layer + 1) + "." + std::to_string(b) + ".";
      conv(out, p + "conv1", width, in, 1);
      bn(out, p + "bn1", width);
      conv(out, p + "conv2", width, width, 3);
      bn(out, p + "bn2", width);
      conv(out, p + "conv3", expanded, width, 1);
      bn(out, p + "bn3", expanded);
      if (b == 0) {
        conv(out, p + "downsample.0", expanded, in, 1);
        bn(out, p + "downsample.1", expanded);
      }
      in = expanded;
    }
  }
  out.push_back({"fc.weight", {num_classes, in}, {}});
  out.push_back({"fc.bias", {num_classes}, {}});
  return out;
}

std::int64_t parameter_count(const std::vector<NamedArray>& entries) {
  std::int64_t total = 0;
  for (const auto& e : entries) {
    if (!e.name.ends_with(".running_mean") && !e.name.ends_with(".running_var")) {
      total += e.count();
    }
  }
  return total;
}

std::uint64_t synthesized_file_size(const std::vector<NamedArray>& entries) {
  return container_size(nlohmann::json{{"kind", "resnet50"}}, entries);
}

}  // namespace plate
