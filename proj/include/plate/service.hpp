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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>

#include <json.hpp>

#include "plate/model.hpp"

namespace httplib {
class Server;
}

namespace plate {

class ServiceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path weights;
  int default_k = 5;
  std::size_t max_upload_bytes = 8u << 20;
  int timeout_seconds = 30;
  int worker_threads = 16;

  void validate() const;
  nlohmann::json to_json() const;
  static ServiceConfig from_json(const nlohmann::json& j);
};

/// Decode, preprocess and forward one encoded image. latency_ms covers all
/// three steps. Throws ImageError for undecodable bytes and
/// std::invalid_argument for k outside [1, num_classes].
Prediction classify_image(const Model& model, std::span<const std::uint8_t> bytes, int k);

/// {"predictions": [{"label", "probability"}...], "latency_ms", "model_version"}
nlohmann::json prediction_json(const Prediction& prediction, const std::string& model_version);

/// Model version string: "sha256:" followed by the hex digest of the file.
std::string weight_file_version(const std::filesystem::path& weights);

/// HTTP front end: POST /classify, GET /classes, GET /health. Requests are
/// served concurrently against one immutable model; until a model is set
/// every endpoint answers 503.
class ClassificationService {
 public:
  explicit ClassificationService(ServiceConfig config);
  ~ClassificationService();
  ClassificationService(const ClassificationService&) = delete;
  ClassificationService& operator=(const ClassificationService&) = delete;

  /// Binds and starts serving on a background thread. Returns the bound port.
  int start();
  /// Loads config.weights. Throws on a missing or corrupt file.
  void load();
  void set_model(Model model, std::string version);
  bool loaded() const;
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

  const ServiceConfig& config() const { return config_; }

 private:
  struct Loaded {
    Model model;
    std::string version;
  };
  std::shared_ptr<const Loaded> current() const;
  void install_routes();

  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Loaded> loaded_;
};

}  // namespace plate
