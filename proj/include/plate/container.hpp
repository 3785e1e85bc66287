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
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace plate {

/// Raised for any malformed or inconsistent container file. The message
/// names the offending entry when one is involved.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kContainerMagic[4] = {'P', 'L', 'F', '1'};
inline constexpr int kContainerFormatVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t count() const;
};

/// Portable file of named float32 arrays.
///
/// Layout: "PLF1" | u64 LE manifest length | UTF-8 JSON manifest | blob.
/// The manifest lists entries in blob order with their shape and byte offset;
/// the blob is the concatenation of little-endian float32 values.
struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> entries;
};

std::vector<std::uint8_t> serialize_container(const Container& container);
Container parse_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

/// Bytes a container with these entry shapes would occupy, without building it.
std::uint64_t container_size(const nlohmann::json& metadata, const std::vector<NamedArray>& shapes_only);

}  // namespace plate
