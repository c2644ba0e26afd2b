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

#include "dphrase/json_io.h"

namespace dphrase {

nlohmann::json result_to_json(const SearchResult& r) {
  return {{"text", r.text},
          {"score", r.score},
          {"doc_id", r.span.doc_id},
          {"paragraph", r.span.paragraph},
          {"start_token", r.span.start},
          {"end_token", r.span.end},
          {"char_start", r.char_begin},
          {"char_end", r.char_end}};
}

nlohmann::json results_to_json(std::span<const SearchResult> results) {
  auto out = nlohmann::json::array();
  for (const auto& r : results) out.push_back(result_to_json(r));
  return out;
}

}  // namespace dphrase
