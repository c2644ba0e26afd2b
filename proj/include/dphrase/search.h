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

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dphrase/corpus.h"
#include "dphrase/encoder.h"
#include "dphrase/index.h"

namespace dphrase {

struct SearchConfig {
  /// Start and end candidates retrieved per query.
  std::size_t top_k = 10;
  /// Spans satisfy end_token - start_token < max_span_len.
  std::size_t max_span_len = 20;
  /// Clusters probed; 0 uses the index default.
  std::size_t n_probe = 0;
  /// Results kept after deduplication.
  std::size_t final_count = 10;

  void validate() const;
};

struct SearchResult {
  PhraseSpan span;
  double score = 0.0;
  std::string text;
  std::size_t start_row = 0;
  std::size_t end_row = 0;
  std::uint32_t char_begin = 0;
  std::uint32_t char_end = 0;

  bool operator==(const SearchResult&) const = default;
};

struct ScoredRow {
  std::size_t row = 0;
  double score = 0.0;

  bool operator==(const ScoredRow&) const = default;
};

/// Inner product of a dump row (search view) with a query, accumulated in
/// double in dimension order. Every score in this module goes through it.
double row_score(const PhraseDump& dump, std::size_t row,
                 std::span<const double> query);

/// Top-k rows by inner product among the lists of the n_probe clusters whose
/// centroids score highest against the query. Descending score, ties by
/// lower row id. Returns every probed row when k exceeds their count.
std::vector<ScoredRow> mips_topk(const PhraseDump& dump, const IvfIndex& ivf,
                                 std::span<const double> query, std::size_t k,
                                 std::size_t n_probe);

/// mips_topk for several queries in one pass over the probed lists.
std::vector<std::vector<ScoredRow>> mips_topk_batch(
    const PhraseDump& dump, const IvfIndex& ivf,
    std::span<const std::vector<double>> queries, std::size_t k,
    std::size_t n_probe);

/// Start/end candidate retrieval followed by partner completion inside each
/// candidate's paragraph. Sorted by score descending, then earlier start,
/// then earlier end. Not deduplicated or truncated.
std::vector<SearchResult> constrained_search(const PhraseDump& dump,
                                             const IvfIndex& ivf,
                                             const QuestionEmbedding& q,
                                             const SearchConfig& config);

/// Keeps the first (best) result per (document, paragraph, normalized text).
std::vector<SearchResult> dedup(std::span<const SearchResult> results);

std::vector<SearchResult> search(const PhraseDump& dump, const IvfIndex& ivf,
                                 const EncoderParams& params,
                                 std::string_view question,
                                 const SearchConfig& config);

struct BatchSlot {
  std::vector<SearchResult> results;
  std::optional<std::string> error;
};

/// Per-question search; a failing question fills its slot's error and the
/// rest of the batch proceeds.
std::vector<BatchSlot> batch_search(const PhraseDump& dump, const IvfIndex& ivf,
                                    const EncoderParams& params,
                                    std::span<const std::string> questions,
                                    const SearchConfig& config);

}  // namespace dphrase
