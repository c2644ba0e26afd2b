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
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dphrase/common.h"
#include "dphrase/corpus.h"

namespace dphrase {

/// Which encoder a tensor belongs to. Query-side fine-tuning only touches
/// `question` tensors.
enum class ParamSide { phrase, question };

/// Trainable tensors of the reference phrase and question encoders.
///
/// Phrase side:   h_i = context * e_i + neighbor * mean(e_k, 0 < |k - i| <= w)
/// Question side: b = mean(question_embedding[t]),
///                q_start = start_head * b + start_bias,
///                q_end   = end_head * b + end_bias
///
/// The two sides share no parameters. Biases are stored as 1 x d matrices.
struct EncoderWeights {
  MatrixD embedding;           // |V| x d
  MatrixD context;             // d x d
  MatrixD neighbor;            // d x d
  MatrixD question_embedding;  // |V| x d
  MatrixD start_head;          // d x d
  MatrixD start_bias;          // 1 x d
  MatrixD end_head;            // d x d
  MatrixD end_bias;            // 1 x d

  /// Calls fn(name, side, tensor) for every tensor in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("embedding", ParamSide::phrase, embedding);
    fn("context", ParamSide::phrase, context);
    fn("neighbor", ParamSide::phrase, neighbor);
    fn("question_embedding", ParamSide::question, question_embedding);
    fn("start_head", ParamSide::question, start_head);
    fn("start_bias", ParamSide::question, start_bias);
    fn("end_head", ParamSide::question, end_head);
    fn("end_bias", ParamSide::question, end_bias);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<EncoderWeights*>(this)->visit(
        [&](const char* name, ParamSide side, MatrixD& m) {
          fn(name, side, static_cast<const MatrixD&>(m));
        });
  }

  /// Zero tensors with the same shapes.
  EncoderWeights zeros_like() const;
  std::size_t parameter_count() const;
  bool operator==(const EncoderWeights&) const = default;
};

struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t window = 2;
  std::uint64_t seed = 0;
};

struct EncoderParams {
  std::size_t dim = 0;
  std::size_t window = 0;
  Vocabulary vocab;
  EncoderWeights weights;

  bool operator==(const EncoderParams&) const = default;
};

/// One row per passage token.
using TokenMatrix = MatrixD;

struct QuestionEmbedding {
  std::vector<double> start;
  std::vector<double> end;
};

/// Seeded random initialisation; tensors are drawn from N(0, 1/d), biases
/// start at zero.
EncoderParams init_encoder(Vocabulary vocab, const EncoderConfig& config);

TokenMatrix encode_passage(const EncoderParams& params,
                           std::span<const TokenId> tokens);
TokenMatrix encode_passage(const EncoderParams& params,
                           const Paragraph& paragraph);

/// [h_i, h_j] for 0-based i <= j < m.
std::vector<double> phrase_representation(const TokenMatrix& h, std::size_t i,
                                          std::size_t j);

QuestionEmbedding encode_question(const EncoderParams& params,
                                  std::span<const TokenId> tokens);
/// Tokenizes `question`; tokens missing from the vocabulary map to the
/// unknown id.
std::vector<TokenId> question_token_ids(const EncoderParams& params,
                                        std::string_view question);

/// Backpropagates dL/dH through encode_passage and adds the result to
/// `grads`.
void accumulate_passage_gradients(const EncoderParams& params,
                                  std::span<const TokenId> tokens,
                                  const TokenMatrix& d_tokens,
                                  EncoderWeights& grads);

/// Backpropagates dL/dq_start and dL/dq_end through encode_question.
void accumulate_question_gradients(const EncoderParams& params,
                                   std::span<const TokenId> tokens,
                                   std::span<const double> d_start,
                                   std::span<const double> d_end,
                                   EncoderWeights& grads);

/// Adds any tokens not yet in the vocabulary. New rows are zero in both
/// embedding tables, so existing encodings are unchanged.
std::size_t extend_vocabulary(EncoderParams& params,
                              std::span<const std::string> tokens);

/// Checkpoint layout (little-endian): "DPPM", u32 version, u32 |V|, u32 d,
/// u32 window, the eight tensors as float32 row-major in visit() order,
/// then the vocabulary as u32 length-prefixed strings.
void save_checkpoint(const EncoderParams& params,
                     const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dphrase
