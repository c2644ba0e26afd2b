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

#include "dphrase/encoder.h"

#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.h"

namespace dphrase {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'P', 'P', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_token(const EncoderParams& params, TokenId id) {
  if (id >= params.weights.embedding.rows()) {
    throw RangeError("unknown token id " + std::to_string(id) +
                     " (vocabulary size " +
                     std::to_string(params.weights.embedding.rows()) + ")");
  }
}

// Neighbor window [lo, hi] around i, excluding i itself.
struct Window {
  std::size_t lo, hi, count;
};

Window window_at(std::size_t i, std::size_t m, std::size_t w) {
  std::size_t lo = i >= w ? i - w : 0;
  std::size_t hi = std::min(m - 1, i + w);
  return {lo, hi, hi - lo};
}

void check_shape(const MatrixD& m, std::size_t rows, std::size_t cols,
                 const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(std::string(what) + ": expected " + std::to_string(rows) +
                "x" + std::to_string(cols) + ", got " +
                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void check_grads(const EncoderParams& params, const EncoderWeights& grads) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  params.weights.visit([&](const char*, ParamSide, const MatrixD& m) {
    shapes.emplace_back(m.rows(), m.cols());
  });
  std::size_t k = 0;
  grads.visit([&](const char* name, ParamSide, const MatrixD& m) {
    check_shape(m, shapes[k].first, shapes[k].second, name);
    ++k;
  });
}

}  // namespace

EncoderWeights EncoderWeights::zeros_like() const {
  EncoderWeights out = *this;
  out.visit([](const char*, ParamSide, MatrixD& m) { m.set_zero(); });
  return out;
}

std::size_t EncoderWeights::parameter_count() const {
  std::size_t n = 0;
  visit([&](const char*, ParamSide, const MatrixD& m) { n += m.size(); });
  return n;
}

EncoderParams init_encoder(Vocabulary vocab, const EncoderConfig& config) {
  if (config.dim == 0) throw Error("encoder dimension must be positive");
  const std::size_t d = config.dim;
  const std::size_t v = vocab.size();
  EncoderParams params;
  params.dim = d;
  params.window = config.window;
  params.vocab = std::move(vocab);

  auto& w = params.weights;
  w.embedding = MatrixD(v, d);
  w.context = MatrixD(d, d);
  w.neighbor = MatrixD(d, d);
  w.question_embedding = MatrixD(v, d);
  w.start_head = MatrixD(d, d);
  w.start_bias = MatrixD(1, d);
  w.end_head = MatrixD(d, d);
  w.end_bias = MatrixD(1, d);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(d)));
  w.visit([&](const char*, ParamSide, MatrixD& m) {
    if (m.rows() == 1) return;  // biases
    for (double& x : m.flat()) x = normal(rng);
  });
  return params;
}

TokenMatrix encode_passage(const EncoderParams& params,
                           std::span<const TokenId> tokens) {
  const std::size_t m = tokens.size();
  const std::size_t d = params.dim;
  for (TokenId id : tokens) check_token(params, id);
  const auto& w = params.weights;

  TokenMatrix h(m, d);
  std::vector<double> mean(d);
  for (std::size_t i = 0; i < m; ++i) {
    matvec(w.context, w.embedding.row(tokens[i]), h.row(i));
    Window win = window_at(i, m, params.window);
    if (win.count == 0) continue;
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t k = win.lo; k <= win.hi; ++k) {
      if (k != i) axpy(1.0 / double(win.count), w.embedding.row(tokens[k]), mean);
    }
    std::vector<double> mixed(d);
    matvec(w.neighbor, mean, mixed);
    axpy(1.0, mixed, h.row(i));
  }
  return h;
}

TokenMatrix encode_passage(const EncoderParams& params,
                           const Paragraph& paragraph) {
  return encode_passage(params, paragraph.token_ids());
}

std::vector<double> phrase_representation(const TokenMatrix& h, std::size_t i,
                                          std::size_t j) {
  if (i > j || j >= h.rows()) {
    throw RangeError("phrase (" + std::to_string(i) + ", " +
                     std::to_string(j) + ") outside passage of " +
                     std::to_string(h.rows()) + " tokens");
  }
  std::vector<double> out(h.row(i).begin(), h.row(i).end());
  out.insert(out.end(), h.row(j).begin(), h.row(j).end());
  return out;
}

QuestionEmbedding encode_question(const EncoderParams& params,
                                  std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error("cannot encode an empty question");
  for (TokenId id : tokens) check_token(params, id);
  const auto& w = params.weights;
  const std::size_t d = params.dim;

  std::vector<double> pooled(d, 0.0);
  for (TokenId id : tokens) {
    axpy(1.0 / double(tokens.size()), w.question_embedding.row(id), pooled);
  }
  QuestionEmbedding q{std::vector<double>(d), std::vector<double>(d)};
  matvec(w.start_head, pooled, q.start);
  axpy(1.0, w.start_bias.row(0), q.start);
  matvec(w.end_head, pooled, q.end);
  axpy(1.0, w.end_bias.row(0), q.end);
  return q;
}

std::vector<TokenId> question_token_ids(const EncoderParams& params,
                                        std::string_view question) {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize(question)) {
    ids.push_back(params.vocab.lookup(tok.text));
  }
  return ids;
}

void accumulate_passage_gradients(const EncoderParams& params,
                                  std::span<const TokenId> tokens,
                                  const TokenMatrix& d_tokens,
                                  EncoderWeights& grads) {
  const std::size_t m = tokens.size();
  const std::size_t d = params.dim;
  check_shape(d_tokens, m, d, "passage gradient");
  check_grads(params, grads);
  for (TokenId id : tokens) check_token(params, id);
  const auto& w = params.weights;

  std::vector<double> mean(d), back(d);
  for (std::size_t i = 0; i < m; ++i) {
    auto dh = d_tokens.row(i);
    outer_add(1.0, dh, w.embedding.row(tokens[i]), grads.context);
    matvec_transposed_add(w.context, dh, grads.embedding.row(tokens[i]));

    Window win = window_at(i, m, params.window);
    if (win.count == 0) continue;
    const double inv = 1.0 / double(win.count);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t k = win.lo; k <= win.hi; ++k) {
      if (k != i) axpy(inv, w.embedding.row(tokens[k]), mean);
    }
    outer_add(1.0, dh, mean, grads.neighbor);
    std::fill(back.begin(), back.end(), 0.0);
    matvec_transposed_add(w.neighbor, dh, back);
    for (std::size_t k = win.lo; k <= win.hi; ++k) {
      if (k != i) axpy(inv, back, grads.embedding.row(tokens[k]));
    }
  }
}

void accumulate_question_gradients(const EncoderParams& params,
                                   std::span<const TokenId> tokens,
                                   std::span<const double> d_start,
                                   std::span<const double> d_end,
                                   EncoderWeights& grads) {
  const std::size_t d = params.dim;
  if (tokens.empty()) throw Error("cannot backpropagate an empty question");
  if (d_start.size() != d || d_end.size() != d) {
    throw Error("question gradient: expected dimension " + std::to_string(d));
  }
  check_grads(params, grads);
  for (TokenId id : tokens) check_token(params, id);
  const auto& w = params.weights;

  const double inv = 1.0 / double(tokens.size());
  std::vector<double> pooled(d, 0.0);
  for (TokenId id : tokens) axpy(inv, w.question_embedding.row(id), pooled);

  outer_add(1.0, d_start, pooled, grads.start_head);
  axpy(1.0, d_start, grads.start_bias.row(0));
  outer_add(1.0, d_end, pooled, grads.end_head);
  axpy(1.0, d_end, grads.end_bias.row(0));

  std::vector<double> d_pooled(d, 0.0);
  matvec_transposed_add(w.start_head, d_start, d_pooled);
  matvec_transposed_add(w.end_head, d_end, d_pooled);
  for (TokenId id : tokens) {
    axpy(inv, d_pooled, grads.question_embedding.row(id));
  }
}

std::size_t extend_vocabulary(EncoderParams& params,
                              std::span<const std::string> tokens) {
  std::size_t added = 0;
  std::vector<double> zeros(params.dim, 0.0);
  for (const auto& t : tokens) {
    if (params.vocab.find(t)) continue;
    params.vocab.add(t);
    params.weights.embedding.append_row(zeros);
    params.weights.question_embedding.append_row(zeros);
    ++added;
  }
  return added;
}

void save_checkpoint(const EncoderParams& params,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::Writer w(out);
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.vocab.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.window));
  params.weights.visit([&](const char*, ParamSide, const MatrixD& m) {
    for (double x : m.flat()) w.put<float>(static_cast<float>(x));
  });
  for (const auto& tok : params.vocab.tokens()) w.string(tok);
  w.check();
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  io::Reader r(in, "checkpoint " + path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError(r.what() + ": bad magic");
  }
  auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError(r.what() + ": unsupported version " + std::to_string(version));
  }
  auto v = r.get<std::uint32_t>();
  auto d = r.get<std::uint32_t>();
  auto window = r.get<std::uint32_t>();
  if (d == 0) throw IoError(r.what() + ": zero dimension");

  EncoderParams params;
  params.dim = d;
  params.window = window;
  auto& wt = params.weights;
  wt.embedding = MatrixD(v, d);
  wt.context = MatrixD(d, d);
  wt.neighbor = MatrixD(d, d);
  wt.question_embedding = MatrixD(v, d);
  wt.start_head = MatrixD(d, d);
  wt.start_bias = MatrixD(1, d);
  wt.end_head = MatrixD(d, d);
  wt.end_bias = MatrixD(1, d);
  wt.visit([&](const char*, ParamSide, MatrixD& m) {
    for (double& x : m.flat()) x = static_cast<double>(r.get<float>());
  });
  // The vocabulary always begins with the reserved unknown token.
  if (v == 0) throw IoError(r.what() + ": empty vocabulary");
  if (r.string() != Vocabulary::kUnknownToken) {
    throw IoError(r.what() + ": vocabulary does not start with the unknown token");
  }
  for (std::uint32_t i = 1; i < v; ++i) params.vocab.add(r.string());
  if (params.vocab.size() != v) {
    throw IoError(r.what() + ": duplicate vocabulary entries");
  }
  return params;
}

}  // namespace dphrase
