// Copyright 2026-present the dphrase authors
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

#include "dphrase/service.h"

#include <chrono>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <thread>

#include "dphrase/json_io.h"
#include "httplib.h"
#include "json.hpp"

namespace dphrase {

namespace {

using nlohmann::json;

HttpResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

// Parses a positive k no larger than max_k.
std::optional<std::size_t> parse_k(const std::string& text, std::size_t max_k,
                                   std::string& error) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &pos);
  } catch (const std::exception&) {
    error = "k must be an integer";
    return std::nullopt;
  }
  if (pos != text.size()) {
    error = "k must be an integer";
    return std::nullopt;
  }
  if (v < 1) {
    error = "k must be >= 1";
    return std::nullopt;
  }
  if (std::size_t(v) > max_k) {
    error = "k exceeds the configured maximum of " + std::to_string(max_k);
    return std::nullopt;
  }
  return std::size_t(v);
}

}  // namespace

std::pair<std::string, int> parse_bind_address(const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == bind.size()) {
    throw RangeError("bind address must look like host:port, got \"" + bind + "\"");
  }
  std::string host = bind.substr(0, colon);
  std::size_t pos = 0;
  int port = 0;
  try {
    port = std::stoi(bind.substr(colon + 1), &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != bind.size() - colon - 1 || port < 0 || port > 65535) {
    throw RangeError("bad port in bind address \"" + bind + "\"");
  }
  return {host, port};
}

void ServiceConfig::apply_environment() {
  if (const char* bind = std::getenv("DPHRASE_BIND"); bind && *bind) {
    std::tie(host, port) = parse_bind_address(bind);
  }
  if (const char* index = std::getenv("DPHRASE_INDEX"); index && *index) {
    index_path = index;
  }
}

void ServiceConfig::validate() const {
  if (max_batch == 0) throw RangeError("service: max batch size must be >= 1");
  if (max_k == 0) throw RangeError("service: max k must be >= 1");
  if (default_k == 0 || default_k > max_k) {
    throw RangeError("service: default k must be in [1, max k]");
  }
  if (!(timeout_seconds > 0.0)) throw RangeError("service: timeout must be positive");
}

struct SearchService::Impl {
  LoadedIndex index;
  EncoderParams params;
  ServiceConfig config;
  httplib::Server server;
  std::thread thread;
  std::mutex log_mutex;

  struct Outcome {
    HttpResponse response;
    std::size_t k = 0;
    std::size_t results = 0;
  };

  SearchConfig search_config(std::size_t k) const {
    SearchConfig sc = config.search;
    sc.final_count = k;
    sc.top_k = std::max(sc.top_k, k);
    return sc;
  }

  Outcome search(const std::string& q, const std::string& k_text) const {
    Outcome out;
    if (q.empty()) {
      out.response = error_response(400, "missing or empty q");
      return out;
    }
    std::size_t k = config.default_k;
    if (!k_text.empty()) {
      std::string err;
      auto parsed = parse_k(k_text, config.max_k, err);
      if (!parsed) {
        out.response = error_response(400, err);
        return out;
      }
      k = *parsed;
    }
    out.k = k;
    try {
      auto results = dphrase::search(index.dump, index.ivf, params, q, search_config(k));
      out.results = results.size();
      out.response = {200, results_to_json(results).dump()};
    } catch (const RangeError& e) {
      out.response = error_response(400, e.what());
    } catch (const std::exception& e) {
      out.response = error_response(500, e.what());
    }
    return out;
  }

  Outcome batch(const std::string& body) const {
    Outcome out;
    json req;
    try {
      req = json::parse(body);
    } catch (const std::exception& e) {
      out.response = error_response(400, std::string("malformed JSON: ") + e.what());
      return out;
    }
    if (!req.is_object() || !req.contains("questions") || !req["questions"].is_array()) {
      out.response = error_response(400, "body must be {\"questions\": [...], \"k\": int}");
      return out;
    }
    const auto& qs = req["questions"];
    if (qs.empty()) {
      out.response = error_response(400, "questions must be non-empty");
      return out;
    }
    if (qs.size() > config.max_batch) {
      out.response = error_response(
          400, "batch exceeds the configured maximum of " + std::to_string(config.max_batch));
      return out;
    }
    std::vector<std::string> questions;
    for (const auto& q : qs) {
      if (!q.is_string()) {
        out.response = error_response(400, "questions must be strings");
        return out;
      }
      questions.push_back(q.get<std::string>());
    }
    std::size_t k = config.default_k;
    if (req.contains("k")) {
      const auto& kv = req["k"];
      if (!kv.is_number_integer()) {
        out.response = error_response(400, "k must be an integer");
        return out;
      }
      std::string err;
      auto parsed = parse_k(std::to_string(kv.get<long long>()), config.max_k, err);
      if (!parsed) {
        out.response = error_response(400, err);
        return out;
      }
      k = *parsed;
    }
    out.k = k;
    try {
      auto slots = batch_search(index.dump, index.ivf, params, questions, search_config(k));
      auto body_json = json::array();
      for (const auto& slot : slots) {
        if (slot.error) {
          body_json.push_back(json{{"error", *slot.error}});
        } else {
          body_json.push_back(results_to_json(slot.results));
          out.results += slot.results.size();
        }
      }
      out.response = {200, body_json.dump()};
    } catch (const std::exception& e) {
      out.response = error_response(500, e.what());
    }
    return out;
  }

  HttpResponse health() const {
    json j{{"status", "ok"},
           {"n", index.dump.size()},
           {"d", index.dump.dim},
           {"quant_mode", to_string(index.dump.mode)},
           {"n_clusters", index.ivf.n_clusters()},
           {"n_probe", index.ivf.n_probe},
           {"documents", index.dump.doc_ids.size()},
           {"paragraphs", index.dump.paragraphs.size()}};
    return {200, j.dump()};
  }

  void log(const std::string& path, const Outcome& o, double ms) {
    if (!config.log) return;
    json j{{"path", path},
           {"status", o.response.status},
           {"k", o.k},
           {"latency_ms", ms},
           {"result_count", o.results}};
    std::lock_guard<std::mutex> lock(log_mutex);
    *config.log << j.dump() << '\n' << std::flush;
  }

  template <typename Fn>
  void respond(const std::string& path, httplib::Response& res, Fn&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o = fn();
    auto t1 = std::chrono::steady_clock::now();
    res.status = o.response.status;
    res.set_content(o.response.body, "application/json");
    log(path, o, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  void install_routes() {
    auto secs = static_cast<time_t>(config.timeout_seconds);
    auto usecs = static_cast<time_t>((config.timeout_seconds - double(secs)) * 1e6);
    server.set_read_timeout(secs, usecs);
    server.set_write_timeout(secs, usecs);
    server.Get("/search", [this](const httplib::Request& req, httplib::Response& res) {
      respond("/search", res, [&] {
        return search(req.get_param_value("q"), req.get_param_value("k"));
      });
    });
    server.Post("/batch-search", [this](const httplib::Request& req, httplib::Response& res) {
      respond("/batch-search", res, [&] { return batch(req.body); });
    });
    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      respond("/healthz", res, [&] { return Outcome{health(), 0, 0}; });
    });
  }
};

SearchService::SearchService(LoadedIndex index, EncoderParams params,
                             ServiceConfig config)
    : impl_(std::make_unique<Impl>()) {
  config.validate();
  if (params.dim != index.dump.dim) {
    throw Error("service: encoder dimension " + std::to_string(params.dim) +
                " does not match index dimension " + std::to_string(index.dump.dim));
  }
  impl_->index = std::move(index);
  impl_->params = std::move(params);
  impl_->config = std::move(config);
  impl_->install_routes();
}

std::unique_ptr<SearchService> SearchService::load(const ServiceConfig& config) {
  auto index = load_index(config.index_path);
  auto params = load_checkpoint(config.encoder_path);
  return std::make_unique<SearchService>(std::move(index), std::move(params), config);
}

SearchService::~SearchService() { stop(); }

HttpResponse SearchService::handle_search(const std::string& q,
                                          const std::string& k) const {
  return impl_->search(q, k).response;
}

HttpResponse SearchService::handle_batch(const std::string& body) const {
  return impl_->batch(body).response;
}

HttpResponse SearchService::handle_health() const { return impl_->health(); }

int SearchService::start() {
  int port = impl_->config.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (!impl_->server.bind_to_port(impl_->config.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw IoError("cannot bind " + impl_->config.host + ":" +
                  std::to_string(impl_->config.port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void SearchService::run() {
  if (!impl_->server.listen(impl_->config.host, impl_->config.port)) {
    throw IoError("cannot bind " + impl_->config.host + ":" +
                  std::to_string(impl_->config.port));
  }
}

void SearchService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace dphrase
