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
#include <limits>
#include <span>
#include <vector>

#include "dphrase/common.h"
#include "dphrase/corpus.h"
#include "dphrase/encoder.h"
#include "dphrase/index.h"

namespace dphrase {

/// Per-token logistic score; rows whose logit falls below `threshold` are
/// dropped from the index.
struct FilterParams {
  std::vector<double> weight;
  double bias = 0.0;
  double threshold = -std::numeric_limits<double>::infinity();
};

struct FilterTrainConfig {
  std::size_t steps = 300;
  double lr = 0.05;
};

struct BceResult {
  double loss = 0.0;
  std::vector<double> d_weight;
  double d_bias = 0.0;
};

/// Mean binary cross-entropy of sigmoid(w.x + b) against 0/1 labels, with
/// its gradient.
BceResult filter_bce(const FilterParams& filter, const MatrixF& x,
                     std::span<const std::uint8_t> labels);

/// Full-batch Adam on filter_bce. Throws when no label is positive.
FilterParams train_filter(const MatrixF& x, std::span<const std::uint8_t> labels,
                          const FilterTrainConfig& config = {});

/// 1 for every row that is a gold start or end of some QA pair.
std::vector<std::uint8_t> filter_labels(const PhraseDump& dump,
                                        std::span<const QAPair> qa);

/// w.x + b for every row of the search view.
std::vector<float> compute_filter_logits(const PhraseDump& dump,
                                         const FilterParams& filter);

struct ThresholdSelection {
  double threshold = -std::numeric_limits<double>::infinity();
  double unfiltered_accuracy = 0.0;
  double filtered_accuracy = 0.0;
  std::size_t retained_rows = 0;
};

/// Largest threshold, among the distinct logit values, whose top-1 dev
/// accuracy under exhaustive search stays within max_drop (absolute) of the
/// unfiltered accuracy. Throws on an empty dev set.
ThresholdSelection select_filter_threshold(const PhraseDump& dump,
                                           const FilterParams& filter,
                                           std::span<const QAPair> dev,
                                           const EncoderParams& params,
                                           double max_drop = 0.01,
                                           std::size_t max_span_len = 20);

struct FilteredDump {
  PhraseDump dump;
  /// New row id -> original row id, strictly increasing.
  std::vector<std::size_t> original_rows;
};

/// Drops rows with logit < threshold; throws when nothing survives.
FilteredDump apply_filter(const PhraseDump& dump, const FilterParams& filter,
                          double threshold);
/// Same with precomputed logits.
FilteredDump apply_filter(const PhraseDump& dump, std::span<const float> logits,
                          double threshold);

}  // namespace dphrase
