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

// Shared fixtures and independent reference implementations for the tests.
// Nothing here calls into the code under test for the value it checks.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dphrase/corpus.h"
#include "dphrase/encoder.h"
#include "dphrase/index.h"
#include "dphrase/search.h"
#include "dphrase/training.h"

namespace dphrase::testing {

/// Removes itself on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

Corpus corpus_from_jsonl(const std::string& text);

/// Two documents, two paragraphs each, five tokens per paragraph.
Corpus fixture_corpus();

/// Documents of random words "wN"; paragraph lengths in [min_len, max_len].
Corpus random_corpus(std::mt19937_64& rng, std::size_t docs,
                     std::size_t paragraphs_per_doc, std::size_t min_len,
                     std::size_t max_len, std::size_t vocab_words);

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n,
                                  double scale = 1.0);
MatrixD random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                      double scale = 1.0);

/// Encoder over `vocab` with every tensor, biases included, drawn from
/// N(0, scale^2).
EncoderParams random_params(const Vocabulary& vocab, std::size_t dim,
                            std::size_t window, std::uint64_t seed,
                            double scale = 0.5);

// ---- reference implementations -------------------------------------------

/// Straight-line context(embedding) + neighbour(mean of window embeddings).
MatrixD oracle_encode_passage(const EncoderParams& p,
                              const std::vector<TokenId>& ids);
/// Straight-line mean pooling followed by the two affine heads.
QuestionEmbedding oracle_encode_question(const EncoderParams& p,
                                         const std::vector<TokenId>& ids);

/// Every admissible span of a dump, scored start.q_start + end.q_end with
/// float rows widened to double and summed in dimension order.
struct OracleSpan {
  std::size_t start_row = 0;
  std::size_t end_row = 0;
  double score = 0.0;
};
std::vector<OracleSpan> oracle_all_spans(const PhraseDump& dump,
                                         const QuestionEmbedding& q,
                                         std::size_t max_span_len);

/// Exhaustive top-k by inner product; ties to the lower row.
std::vector<ScoredRow> oracle_topk(const PhraseDump& dump,
                                   const std::vector<double>& query,
                                   std::size_t k);

/// Softmax over the explicit B x (B + cached) score matrix, written out
/// directly.
double oracle_negative_loss(const std::vector<MatrixD>& tokens,
                            const std::vector<QuestionEmbedding>& questions,
                            const std::vector<std::size_t>& gold_start,
                            const std::vector<std::size_t>& gold_end,
                            const std::vector<CachedBatch>& cached);

// ---- finite differences ----------------------------------------------------

/// Central differences of f at x (x is restored afterwards).
std::vector<double> numeric_gradient(const std::function<double()>& f,
                                     std::span<double> x, double step = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-8);

/// All tensors flattened in visit() order.
std::vector<double> flatten(const EncoderWeights& w);

/// Hex digest of a file's bytes (FNV-1a 64).
std::string file_digest(const std::filesystem::path& path);

}  // namespace dphrase::testing
