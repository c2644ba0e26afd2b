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

#include <cstdint>
#include <string>
#include <vector>

#include "dphrase/corpus.h"

namespace dphrase {

/// A toy knowledge base rendered as text. Every subject gets one document
/// with a single paragraph of facts "entS relR objO ." and questions ask
/// "what is the relR of entS ?".
struct WorldConfig {
  std::size_t subjects = 200;
  std::size_t relations = 8;
  std::size_t objects = 40;
  std::size_t facts_per_subject = 5;
  std::size_t questions = 500;
  std::uint64_t seed = 0;
};

struct World {
  Corpus corpus;
  /// Natural questions with gold spans.
  std::vector<QAPair> qa;
  /// The same facts asked as "entS [SEP] aliasR" with aliases that never
  /// occur in the corpus; gold spans are kept.
  std::vector<QAPair> slot_qa;
  std::size_t relations = 0;
};

World make_world(const WorldConfig& config);

}  // namespace dphrase
