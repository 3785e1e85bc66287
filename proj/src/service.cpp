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

#include "plate/service.hpp"

#include <charconv>
#include <chrono>

// Room for a burst of simultaneous uploads before accept() catches up.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>

#include "plate/hash.hpp"
#include "plate/image.hpp"

namespace plate {

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) {
    throw ServiceError("port must be in [0, 65535], got " + std::to_string(port));
  }
  if (default_k < 1) {
    throw ServiceError("default k must be positive, got " + std::to_string(default_k));
  }
  if (max_upload_bytes == 0) {
    throw ServiceError("max upload bytes must be positive");
  }
  if (timeout_seconds <= 0) {
    throw ServiceError("timeout must be positive, got " + std::to_string(timeout_seconds));
  }
  if (worker_threads <= 0) {
    throw ServiceError("worker threads must be positive, got " + std::to_string(worker_threads));
  }
}

nlohmann::json ServiceConfig::to_json() const {
  return {{"host", host},
          {"port", port},
          {"weights", weights.string()},
          {"default_k", default_k},
          {"max_upload_bytes", max_upload_bytes},
          {"timeout_seconds", timeout_seconds},
          {"worker_threads", worker_threads}};
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  ServiceConfig c;
  c.host = j.value("host", c.host);
  c.port = j.value("port", c.port);
  c.weights = j.value("weights", c.weights.string());
  c.default_k = j.value("default_k", c.default_k);
  c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.worker_threads = j.value("worker_threads", c.worker_threads);
  return c;
}

Prediction classify_image(const Model& model, std::span<const std::uint8_t> bytes, int k) {
  if (k < 1 || k > model.spec().num_classes) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(model.spec().num_classes) + "], got " +
                                std::to_string(k));
  }
  const auto start = std::chrono::steady_clock::now();
  const auto image = decode_image(bytes);
  auto out = model.forward(prepare_image(model, image), k).front();
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

nlohmann::json prediction_json(const Prediction& prediction, const std::string& model_version) {
  auto list = nlohmann::json::array();
  for (const auto& s : prediction.top) {
    list.push_back({{"label", s.label}, {"probability", s.probability}});
  }
  return {{"predictions", list}, {"latency_ms", prediction.latency_ms}, {"model_version", model_version}};
}

std::string weight_file_version(const std::filesystem::path& weights) {
  return "sha256:" + sha256_hex_file(weights);
}

namespace {

const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void fail(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

std::optional<int> parse_int(const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) {
    return std::nullopt;
  }
  return v;
}

// Image bytes and the optional k from a raw or multipart request.
struct Upload {
  const std::string* image = nullptr;
  std::optional<std::string> k;
};

Upload read_upload(const httplib::Request& req) {
  Upload u;
  if (req.has_param("k")) {
    u.k = req.get_param_value("k");
  }
  if (!req.is_multipart_form_data()) {
    u.image = &req.body;
    return u;
  }
  if (req.has_file("k")) {
    u.k = req.get_file_value("k").content;
  }
  if (req.has_file("image")) {
    u.image = &req.files.find("image")->second.content;
    return u;
  }
  for (const auto& [name, part] : req.files) {
    if (!part.filename.empty()) {
      u.image = &part.content;
      return u;
    }
  }
  return u;
}

}  // namespace

ClassificationService::ClassificationService(ServiceConfig config)
    : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  config_.validate();
  const auto workers = static_cast<std::size_t>(config_.worker_threads);
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  // Room for multipart framing; the image itself is checked in the handler.
  server_->set_payload_max_length(config_.max_upload_bytes + (64u << 10));
  server_->set_read_timeout(config_.timeout_seconds, 0);
  server_->set_write_timeout(config_.timeout_seconds, 0);
  install_routes();
}

ClassificationService::~ClassificationService() { stop(); }

std::shared_ptr<const ClassificationService::Loaded> ClassificationService::current() const {
  std::lock_guard lock(mutex_);
  return loaded_;
}

void ClassificationService::set_model(Model model, std::string version) {
  if (config_.default_k > model.spec().num_classes) {
    throw ServiceError("default k " + std::to_string(config_.default_k) + " exceeds the model's " +
                       std::to_string(model.spec().num_classes) + " classes");
  }
  auto next = std::make_shared<const Loaded>(Loaded{std::move(model), std::move(version)});
  std::lock_guard lock(mutex_);
  loaded_ = std::move(next);
}

void ClassificationService::load() {
  if (config_.weights.empty()) {
    throw ServiceError("no weight file configured");
  }
  auto model = load_weights(config_.weights);
  set_model(std::move(model), weight_file_version(config_.weights));
}

bool ClassificationService::loaded() const { return current() != nullptr; }

void ClassificationService::install_routes() {
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      fail(res, res.status, httplib::status_message(res.status));
    }
  });

  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const auto m = current();
    if (!m) {
      reply(res, 503, {{"status", "loading"}});
      return;
    }
    reply(res, 200,
          {{"status", "ok"}, {"model_version", m->version}, {"num_classes", m->model.spec().num_classes}});
  });

  server_->Get("/classes", [this](const httplib::Request&, httplib::Response& res) {
    const auto m = current();
    if (!m) {
      fail(res, 503, "model not loaded");
      return;
    }
    auto list = nlohmann::json::array();
    const auto& labels = m->model.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      list.push_back({{"index", i}, {"label", labels[i]}});
    }
    reply(res, 200, {{"classes", list}, {"model_version", m->version}});
  });

  server_->Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    const auto m = current();
    if (!m) {
      fail(res, 503, "model not loaded");
      return;
    }
    const auto upload = read_upload(req);
    if (upload.image == nullptr || upload.image->empty()) {
      fail(res, 400, "request carries no image");
      return;
    }
    if (upload.image->size() > config_.max_upload_bytes) {
      fail(res, 413, "image exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
      return;
    }
    int k = config_.default_k;
    const int classes = m->model.spec().num_classes;
    if (upload.k) {
      const auto parsed = parse_int(*upload.k);
      if (!parsed || *parsed < 1 || *parsed > classes) {
        fail(res, 422, "k must be an integer in [1, " + std::to_string(classes) + "], got '" + *upload.k + "'");
        return;
      }
      k = *parsed;
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(upload.image->data()),
                                              upload.image->size());
    try {
      reply(res, 200, prediction_json(classify_image(m->model, bytes, k), m->version));
    } catch (const ImageError& e) {
      fail(res, 400, std::string("undecodable image: ") + e.what());
    }
  });
}

int ClassificationService::start() {
  if (thread_.joinable()) {
    throw ServiceError("service already started");
  }
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
    if (port < 0) {
      throw ServiceError("cannot bind " + config_.host);
    }
  } else if (!server_->bind_to_port(config_.host, port)) {
    throw ServiceError("cannot bind " + config_.host + ":" + std::to_string(port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void ClassificationService::wait() {
  if (thread_.joinable()) {
    thread_.join();
  }
}

void ClassificationService::stop() {
  server_->stop();
  wait();
}

}  // namespace plate
