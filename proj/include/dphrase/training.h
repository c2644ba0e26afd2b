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
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dphrase/common.h"
#include "dphrase/corpus.h"
#include "dphrase/encoder.h"

namespace dphrase {

// ---------------------------------------------------------------------------
// Distributions

/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);
/// log softmax, computed with log-sum-exp.
std::vector<double> log_softmax(std::span<const double> logits);

/// KL(p || q) = sum p_i log(p_i / q_i) with 0 log(0/q) = 0. Throws when some
/// q_i = 0 while p_i > 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Start/end position distributions from a query-dependent teacher.
struct TeacherDistribution {
  std::vector<double> start;
  std::vector<double> end;
};

/// Teachers keyed by example id (line index in the QA file).
using TeacherSet = std::unordered_map<std::uint32_t, TeacherDistribution>;

/// Teachers are floored at this value before any KL term.
inline constexpr double kTeacherFloor = 1e-12;

/// Softmax of scores that peak at the gold positions; a stand-in for a
/// cross-attention reader. Positions other than gold get `noise`-scaled
/// Gaussian scores.
TeacherDistribution synthetic_teacher(std::size_t m, std::size_t gold_start,
                                      std::size_t gold_end, double temperature,
                                      double noise, std::uint64_t seed);

/// Teacher file: "DPTD", u32 version, u32 count, then per entry u32 id,
/// u32 m, m float64 start probabilities, m float64 end probabilities.
void save_teachers(const TeacherSet& teachers,
                   const std::filesystem::path& path);
TeacherSet load_teachers(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Losses

/// Loss value plus gradients with respect to the token matrix and the two
/// question vectors.
struct PassageLoss {
  double loss = 0.0;
  TokenMatrix d_tokens;
  std::vector<double> d_start;
  std::vector<double> d_end;
  std::vector<double> p_start;
  std::vector<double> p_end;
};

/// Start/end log-likelihood of the gold span within its own passage,
/// averaged over the two positions. Gold indices are 0-based.
PassageLoss single_passage_loss(const TokenMatrix& tokens,
                                const QuestionEmbedding& q,
                                std::size_t gold_start, std::size_t gold_end);

/// (KL(P_start || T_start) + KL(P_end || T_end)) / 2.
double distill_loss(std::span<const double> p_start,
                    std::span<const double> p_end,
                    std::span<const double> teacher_start,
                    std::span<const double> teacher_end);

/// distill_loss on the student's own position distributions, with
/// gradients. Teachers are floored at kTeacherFloor.
PassageLoss distill_passage_loss(const TokenMatrix& tokens,
                                 const QuestionEmbedding& q,
                                 const TeacherDistribution& teacher);

/// Gold start/end vectors of earlier mini-batches. Entries are value copies.
struct CachedBatch {
  MatrixD start;
  MatrixD end;
};

/// FIFO of the last `capacity` mini-batches of gold phrase vectors.
class PrebatchQueue {
 public:
  explicit PrebatchQueue(std::size_t capacity) : capacity_(capacity) {}

  /// Copies the matrices in; evicts the oldest entry beyond capacity. A
  /// zero-capacity queue ignores pushes.
  void push(const MatrixD& g_start, const MatrixD& g_end);
  void clear() { entries_.clear(); }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t cached_rows() const;
  const std::deque<CachedBatch>& entries() const { return entries_; }

 private:
  std::size_t capacity_;
  std::deque<CachedBatch> entries_;
};

struct BatchExample {
  const TokenMatrix* tokens = nullptr;
  const QuestionEmbedding* question = nullptr;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
};

struct BatchLoss {
  double loss = 0.0;
  std::vector<TokenMatrix> d_tokens;
  std::vector<std::vector<double>> d_start;
  std::vector<std::vector<double>> d_end;
  /// Negatives seen by each example: B - 1 + rows cached in the queue.
  std::size_t negatives_per_example = 0;
};

/// Gold start and end rows of every example, stacked B x d.
std::pair<MatrixD, MatrixD> gold_vectors(std::span<const BatchExample> batch);

/// In-batch (and, with a non-empty queue, pre-batch) negative loss. Each
/// example scores its question against the B current gold vectors followed
/// by every cached row; its own gold is the positive. Averaged over the
/// batch. Cached rows receive no gradient.
BatchLoss batch_negative_loss(std::span<const BatchExample> batch,
                              const PrebatchQueue& queue);

struct LossWeights {
  double single = 1.0;
  double distill = 2.0;
  double negative = 4.0;
};

struct LossComponents {
  double single = 0.0;
  double distill = 0.0;
  double negative = 0.0;
};

double total_loss(const LossComponents& components, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// Rescales the gradients in place so their joint L2 norm is at most
/// max_norm. Returns the norm before clipping. Throws on non-finite values.
double clip_global_norm(std::span<const std::span<double>> grads,
                        double max_norm);

/// One bias-corrected Adam update. Gradients are clipped in place first.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, OptimizerState& state);

/// Adam over encoder tensors; when `only` is set, tensors of the other side
/// are neither clipped nor updated.
void adam_step(EncoderWeights& params, EncoderWeights& grads,
               OptimizerState& state,
               std::optional<ParamSide> only = std::nullopt);

// ---------------------------------------------------------------------------
// Training loop

/// Plain "key = value" config. '#' starts a comment.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(std::istream& in);
ConfigMap parse_config_file(const std::filesystem::path& path);
/// Throws ParseError on keys that neither the training nor the query-side
/// fine-tuning config understands.
void validate_config_keys(const ConfigMap& map);

/// Value of `key` parsed as T, or `fallback` when absent. Throws ParseError
/// on trailing garbage.
template <typename T>
T config_value(const ConfigMap& map, const std::string& key, T fallback) {
  auto it = map.find(key);
  if (it == map.end()) return fallback;
  std::istringstream in(it->second);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) {
    throw ParseError("config key " + key + ": cannot parse \"" + it->second +
                     "\"");
  }
  return value;
}

struct TrainConfig {
  std::size_t batch_size = 84;
  std::size_t prebatch = 2;
  std::size_t epochs = 4;
  /// Epochs trained with in-batch negatives only before the queue is used.
  /// from_map defaults it to half the epochs.
  std::size_t warmup_epochs = 2;
  double lr = 1e-2;
  LossWeights weights;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  std::size_t dim = 32;
  std::size_t window = 2;

  static TrainConfig from_map(const ConfigMap& map);
};

/// A QA pair resolved against the corpus and encoder vocabulary.
struct TrainingExample {
  std::uint32_t id = 0;
  std::vector<TokenId> passage;
  std::vector<TokenId> question;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
  const TeacherDistribution* teacher = nullptr;
};

/// Corpus vocabulary extended with every question token.
Vocabulary training_vocabulary(const Corpus& corpus,
                               std::span<const QAPair> qa);

/// Pairs without a gold span are dropped.
std::vector<TrainingExample> make_training_examples(
    const EncoderParams& params, const Corpus& corpus,
    std::span<const QAPair> qa, const TeacherSet* teachers = nullptr);

struct BatchObjective {
  LossComponents components;
  double total = 0.0;
  MatrixD gold_start;
  MatrixD gold_end;
};

/// Forward and backward pass of the weighted objective over one batch.
/// `queue` may be null (no cached negatives). Gradients are added to
/// `grads` when it is non-null.
BatchObjective batch_objective(const EncoderParams& params,
                               std::span<const TrainingExample* const> batch,
                               const PrebatchQueue* queue,
                               const LossWeights& weights,
                               EncoderWeights* grads);

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  LossComponents mean_components;
  std::size_t batches = 0;
  bool prebatch_active = false;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochStats> epochs;
};

TrainResult train_phrase_encoders(const Corpus& corpus,
                                  std::span<const QAPair> qa,
                                  const TrainConfig& config,
                                  const TeacherSet* teachers = nullptr);

/// Continues from the given parameters. Question tokens missing from the
/// vocabulary are treated as unknown.
TrainResult train_phrase_encoders(EncoderParams params, const Corpus& corpus,
                                  std::span<const QAPair> qa,
                                  const TrainConfig& config,
                                  const TeacherSet* teachers = nullptr);

}  // namespace dphrase
