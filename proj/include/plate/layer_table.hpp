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
#include <vector>

#include "plate/container.hpp"

namespace plate {

/// Shape-only manifest of a torchvision-style ResNet-50 (bottleneck depths
/// 3-4-6-3, expansion 4) with a num_classes-way fc layer. Values are empty.
std::vector<NamedArray> resnet50_entries(int num_classes);

/// Learnable parameter count of a shape-only manifest; batch-norm running
/// statistics are buffers and are excluded.
std::int64_t parameter_count(const std::vector<NamedArray>& entries);

/// Size in bytes of a PLF1 file holding these entries.
std::uint64_t synthesized_file_size(const std::vector<NamedArray>& entries);

}  // namespace plate
