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

#include <span>

#include "dphrase/search.h"
#include "json.hpp"

namespace dphrase {

/// {"text", "score", "doc_id", "paragraph", "start_token", "end_token",
///  "char_start", "char_end"}
nlohmann::json result_to_json(const SearchResult& result);
nlohmann::json results_to_json(std::span<const SearchResult> results);

}  // namespace dphrase
