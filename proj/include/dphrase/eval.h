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
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dphrase/corpus.h"
#include "dphrase/encoder.h"
#include "dphrase/index.h"
#include "dphrase/search.h"

namespace dphrase {

/// 1 when the normalized prediction equals some normalized gold.
int exact_match(std::string_view prediction, std::span<const std::string> golds);

/// Token-overlap F1 on normalized text, maximized over golds.
double token_f1(std::string_view prediction, std::span<const std::string> golds);

struct ExampleRecord {
  std::string question;
  std::string answer;
  std::string prediction;
  double score = 0.0;
  int exact_match = 0;
  double f1 = 0.0;
  /// 1-based rank of the first exact-match result; 0 when none.
  std::size_t first_hit = 0;
  bool skipped = false;
  std::string error;
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  /// Top-1 EM and F1 over evaluated questions.
  double exact_match = 0.0;
  double f1 = 0.0;
  /// (k, accuracy@k) in ascending k.
  std::vector<std::pair<std::size_t, double>> topk_accuracy;
  std::vector<ExampleRecord> examples;

  double accuracy_at(std::size_t k) const;
  std::string to_json(bool with_examples = false) const;
  std::string to_table() const;
};

/// Top-k accuracy: the share of questions whose first k results contain an
/// exact match. Questions that fail to encode are counted as skipped and
/// left out of every fraction.
EvalReport retrieval_accuracy(const PhraseDump& dump, const IvfIndex& ivf,
                              const EncoderParams& params,
                              std::span<const QAPair> qa,
                              const SearchConfig& config,
                              std::span<const std::size_t> ks);

struct BenchConfig {
  std::size_t batch_size = 64;
  std::size_t warmup = 5;
  /// Total batches per run; 0 means one pass over the questions but at
  /// least ten measured batches.
  std::size_t batches = 0;
  std::size_t runs = 3;
};

struct BenchResult {
  std::size_t batch_size = 0;
  /// Median over runs.
  double qps = 0.0;
  /// Per-batch latency percentiles of the median run.
  double p50_latency_ms = 0.0;
  double p99_latency_ms = 0.0;
  std::size_t total_batches = 0;
  std::size_t measured_batches = 0;
  std::size_t measured_questions = 0;
  std::vector<double> run_qps;
};

/// Runs batch_search over consecutive batches (questions are reused
/// cyclically) and reports throughput excluding the first `warmup` batches.
BenchResult benchmark_qps(const PhraseDump& dump, const IvfIndex& ivf,
                          const EncoderParams& params,
                          std::span<const std::string> questions,
                          const SearchConfig& search_config,
                          const BenchConfig& config = {});

/// Header line plus one data line.
std::string bench_csv(const BenchResult& result);

}  // namespace dphrase
