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

#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include "dphrase/encoder.h"
#include "dphrase/index.h"
#include "dphrase/search.h"

namespace dphrase {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::filesystem::path index_path;
  std::filesystem::path encoder_path;
  std::size_t default_k = 10;
  std::size_t max_k = 100;
  std::size_t max_batch = 64;
  double timeout_seconds = 30.0;
  /// Retrieval settings; top_k is raised to the requested k when smaller.
  SearchConfig search;
  /// One JSON line per request; null disables logging.
  std::ostream* log = nullptr;

  /// Applies DPHRASE_BIND ("host:port") and DPHRASE_INDEX when set.
  void apply_environment();
  void validate() const;
};

/// Parses "host:port"; throws RangeError on malformed input.
std::pair<std::string, int> parse_bind_address(const std::string& bind);

struct HttpResponse {
  int status = 200;
  std::string body;
};

/// Read-only HTTP search front end over one loaded index and encoder.
class SearchService {
 public:
  SearchService(LoadedIndex index, EncoderParams params, ServiceConfig config);
  /// Loads the index and checkpoint named in the config.
  static std::unique_ptr<SearchService> load(const ServiceConfig& config);
  ~SearchService();

  SearchService(const SearchService&) = delete;
  SearchService& operator=(const SearchService&) = delete;

  /// Request handlers, usable without a socket.
  HttpResponse handle_search(const std::string& q, const std::string& k) const;
  HttpResponse handle_batch(const std::string& body) const;
  HttpResponse handle_health() const;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dphrase
