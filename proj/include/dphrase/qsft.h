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
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dphrase/encoder.h"
#include "dphrase/index.h"
#include "dphrase/search.h"
#include "dphrase/training.h"

namespace dphrase {

/// Query-side fine-tuning settings.
struct QsftConfig {
  std::size_t top_k = 100;
  double lr = 1e-2;
  std::size_t batch_size = 12;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  std::size_t max_span_len = 20;
  std::size_t n_probe = 0;

  /// Reads qsft_top_k, qsft_lr, qsft_batch_size, qsft_epochs, qsft_seed,
  /// clip_norm, max_span_len and n_probe.
  static QsftConfig from_map(const ConfigMap& map);
};

struct QsftLoss {
  double loss = 0.0;
  /// dL/d score for every retrieved result.
  std::vector<double> d_scores;
  std::size_t matches = 0;
};

/// Negative log of the softmax mass on matching results. Empty when nothing
/// matches.
std::optional<QsftLoss> qsft_loss(std::span<const double> scores,
                                  std::span<const std::uint8_t> matches);
/// Matches are results whose normalized text equals the normalized answer.
std::optional<QsftLoss> qsft_loss(std::span<const SearchResult> results,
                                  std::string_view answer);

/// Loss of one question against a fixed retrieved set. Scores are recomputed
/// from the dump's original float32 rows and the gradient flows into the
/// question-side tensors of `grads` (when non-null). Empty when the example
/// is skipped.
std::optional<double> qsft_example_loss(const PhraseDump& dump,
                                        const EncoderParams& params,
                                        std::span<const TokenId> question,
                                        std::span<const SearchResult> retrieved,
                                        std::string_view answer,
                                        EncoderWeights* grads);

struct QsftEpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t examples = 0;
  std::size_t skipped = 0;
};

struct QsftResult {
  EncoderParams params;
  std::vector<QsftEpochStats> epochs;
};

/// Re-retrieves the top-k for every example at every step and updates the
/// question encoder only. The dump is read, never modified.
QsftResult qsft_train(const PhraseDump& dump, const IvfIndex& ivf,
                      EncoderParams params, std::span<const QAPair> qa,
                      const QsftConfig& config);

}  // namespace dphrase
