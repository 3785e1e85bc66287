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

#include "plate/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace plate {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

using nlohmann::json;

std::int64_t NamedArray::count() const {
  std::int64_t n = 1;
  for (auto e : shape) {
    n *= e;
  }
  return n;
}

namespace {

json build_manifest(const json& metadata, const std::vector<NamedArray>& entries) {
  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    list.push_back(json{{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(e.count()) * sizeof(float);
  }
  return json{{"format_version", kContainerFormatVersion}, {"metadata", metadata}, {"entries", list}};
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_container(const Container& container) {
  std::set<std::string> seen;
  for (const auto& e : container.entries) {
    if (!seen.insert(e.name).second) {
      throw FormatError("duplicate entry '" + e.name + "'");
    }
    for (auto d : e.shape) {
      if (d < 0) {
        throw FormatError("entry '" + e.name + "' has a negative extent");
      }
    }
    if (static_cast<std::int64_t>(e.values.size()) != e.count()) {
      throw FormatError("entry '" + e.name + "' holds " + std::to_string(e.values.size()) +
                        " values but its shape needs " + std::to_string(e.count()));
    }
  }
  const std::string manifest = build_manifest(container.metadata, container.entries).dump();
  std::vector<std::uint8_t> out;
  std::uint64_t blob = 0;
  for (const auto& e : container.entries) {
    blob += e.values.size() * sizeof(float);
  }
  out.reserve(4 + 8 + manifest.size() + blob);
  out.insert(out.end(), std::begin(kContainerMagic), std::end(kContainerMagic));
  put_u64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& e : container.entries) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(e.values.data());
    out.insert(out.end(), raw, raw + e.values.size() * sizeof(float));
  }
  return out;
}

Container parse_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12) {
    throw FormatError("truncated header: file has " + std::to_string(bytes.size()) + " bytes");
  }
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    throw FormatError("bad magic: not a PLF1 file");
  }
  const std::uint64_t manifest_len = get_u64(bytes.data() + 4);
  if (manifest_len > bytes.size() - 12) {
    throw FormatError("truncated manifest: declared " + std::to_string(manifest_len) + " bytes, " +
                      std::to_string(bytes.size() - 12) + " available");
  }
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version") || !manifest.contains("entries")) {
    throw FormatError("manifest lacks format_version or entries");
  }
  if (!manifest["format_version"].is_number_integer() ||
      manifest["format_version"].get<int>() != kContainerFormatVersion) {
    throw FormatError("unknown format version " + manifest["format_version"].dump());
  }
  const std::uint8_t* blob = bytes.data() + 12 + manifest_len;
  const std::uint64_t blob_len = bytes.size() - 12 - manifest_len;

  Container out;
  out.metadata = manifest.value("metadata", json::object());
  std::uint64_t expected = 0;
  std::set<std::string> seen;
  for (const auto& item : manifest["entries"]) {
    NamedArray e;
    try {
      e.name = item.at("name").get<std::string>();
      e.shape = item.at("shape").get<std::vector<std::int64_t>>();
    } catch (const json::exception& ex) {
      throw FormatError(std::string("malformed entry in manifest: ") + ex.what());
    }
    const std::string label = "entry '" + e.name + "'";
    if (!seen.insert(e.name).second) {
      throw FormatError("duplicate " + label);
    }
    for (auto d : e.shape) {
      if (d < 0) {
        throw FormatError(label + " has a negative extent");
      }
    }
    const auto offset = item.value("offset", std::uint64_t{0});
    if (offset != expected) {
      throw FormatError(label + " offset " + std::to_string(offset) + " is not the expected " +
                        std::to_string(expected) + " (entries must be ascending and non-overlapping)");
    }
    const std::uint64_t nbytes = static_cast<std::uint64_t>(e.count()) * sizeof(float);
    if (offset + nbytes > blob_len) {
      throw FormatError("truncated blob: " + label + " needs bytes [" + std::to_string(offset) + ", " +
                        std::to_string(offset + nbytes) + ") but the blob has " + std::to_string(blob_len));
    }
    e.values.resize(static_cast<std::size_t>(e.count()));
    std::memcpy(e.values.data(), blob + offset, nbytes);
    expected = offset + nbytes;
    out.entries.push_back(std::move(e));
  }
  if (expected != blob_len) {
    throw FormatError("blob has " + std::to_string(blob_len - expected) + " trailing bytes after " +
                      (out.entries.empty() ? std::string("the manifest") : "entry '" + out.entries.back().name + "'"));
  }
  return out;
}

void write_container(const std::filesystem::path& path, const Container& container) {
  const auto bytes = serialize_container(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_container(bytes);
}

std::uint64_t container_size(const json& metadata, const std::vector<NamedArray>& shapes_only) {
  std::uint64_t blob = 0;
  for (const auto& e : shapes_only) {
    blob += static_cast<std::uint64_t>(e.count()) * sizeof(float);
  }
  return 12 + build_manifest(metadata, shapes_only).dump().size() + blob;
}

}  // namespace plate
