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

#include "dphrase/qsft.h"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace dphrase {

QsftConfig QsftConfig::from_map(const ConfigMap& map) {
  validate_config_keys(map);
  QsftConfig c;
  c.top_k = config_value(map, "qsft_top_k", c.top_k);
  c.lr = config_value(map, "qsft_lr", c.lr);
  c.batch_size = config_value(map, "qsft_batch_size", c.batch_size);
  c.epochs = config_value(map, "qsft_epochs", c.epochs);
  c.seed = config_value(map, "qsft_seed", c.seed);
  c.clip_norm = config_value(map, "clip_norm", c.clip_norm);
  c.max_span_len = config_value(map, "max_span_len", c.max_span_len);
  c.n_probe = config_value(map, "n_probe", c.n_probe);
  if (c.top_k == 0) throw ParseError("qsft_top_k must be >= 1");
  if (c.batch_size == 0) throw ParseError("qsft_batch_size must be >= 1");
  return c;
}

std::optional<QsftLoss> qsft_loss(std::span<const double> scores,
                                  std::span<const std::uint8_t> matches) {
  if (scores.size() != matches.size()) throw Error("qsft_loss: size mismatch");
  QsftLoss out;
  out.matches = std::size_t(std::count_if(matches.begin(), matches.end(),
                                          [](auto m) { return m != 0; }));
  if (out.matches == 0) return std::nullopt;
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z_all = 0.0, z_match = 0.0;
  std::vector<double> w(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] = std::exp(scores[k] - mx);
    z_all += w[k];
    if (matches[k]) z_match += w[k];
  }
  out.loss = std::log(z_all) - std::log(z_match);
  out.d_scores.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    out.d_scores[k] = w[k] / z_all - (matches[k] ? w[k] / z_match : 0.0);
  }
  return out;
}

std::optional<QsftLoss> qsft_loss(std::span<const SearchResult> results,
                                  std::string_view answer) {
  const auto gold = normalize_answer(answer);
  std::vector<double> scores;
  std::vector<std::uint8_t> matches;
  for (const auto& r : results) {
    scores.push_back(r.score);
    matches.push_back(normalize_answer(r.text) == gold);
  }
  return qsft_loss(scores, matches);
}

std::optional<double> qsft_example_loss(const PhraseDump& dump,
                                        const EncoderParams& params,
                                        std::span<const TokenId> question,
                                        std::span<const SearchResult> retrieved,
                                        std::string_view answer,
                                        EncoderWeights* grads) {
  if (retrieved.empty()) return std::nullopt;
  const auto q = encode_question(params, question);
  const auto gold = normalize_answer(answer);
  std::vector<double> scores;
  std::vector<std::uint8_t> matches;
  for (const auto& r : retrieved) {
    scores.push_back(dot(dump.original_row(r.start_row), q.start) +
                     dot(dump.original_row(r.end_row), q.end));
    matches.push_back(normalize_answer(r.text) == gold);
  }
  auto loss = qsft_loss(scores, matches);
  if (!loss) return std::nullopt;
  if (grads) {
    std::vector<double> d_start(params.dim, 0.0), d_end(params.dim, 0.0);
    for (std::size_t k = 0; k < retrieved.size(); ++k) {
      axpy(loss->d_scores[k], dump.original_row(retrieved[k].start_row), d_start);
      axpy(loss->d_scores[k], dump.original_row(retrieved[k].end_row), d_end);
    }
    accumulate_question_gradients(params, question, d_start, d_end, *grads);
  }
  return loss->loss;
}

QsftResult qsft_train(const PhraseDump& dump, const IvfIndex& ivf,
                      EncoderParams params, std::span<const QAPair> qa,
                      const QsftConfig& config) {
  QsftResult out;
  if (config.epochs == 0) {
    out.params = std::move(params);
    return out;
  }
  if (config.batch_size == 0) throw RangeError("qsft: batch size must be >= 1");
  SearchConfig search_config;
  search_config.top_k = config.top_k;
  search_config.final_count = config.top_k;
  search_config.max_span_len = config.max_span_len;
  search_config.n_probe = config.n_probe;

  std::vector<std::size_t> order(qa.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
  OptimizerState state;
  state.config.lr = config.lr;
  state.config.clip_norm = config.clip_norm;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    QsftEpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      EncoderWeights grads = params.weights.zeros_like();
      std::size_t used = 0;
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k) {
        const auto& pair = qa[order[k]];
        auto ids = question_token_ids(params, pair.question);
        std::optional<double> loss;
        if (!ids.empty()) {
          auto results = search(dump, ivf, params, pair.question, search_config);
          loss = qsft_example_loss(dump, params, ids, results, pair.answer, &grads);
        }
        if (!loss) {
          ++stats.skipped;
          continue;
        }
        loss_sum += *loss;
        ++used;
      }
      stats.examples += used;
      if (used == 0) continue;
      grads.visit([&](const char*, ParamSide side, MatrixD& g) {
        if (side != ParamSide::question) return;
        for (double& v : g.flat()) v /= double(used);
      });
      adam_step(params.weights, grads, state, ParamSide::question);
    }
    stats.mean_loss = stats.examples ? loss_sum / double(stats.examples) : 0.0;
    if (stats.examples == 0) {
      std::clog << "warning: qsft epoch " << epoch << ": all " << stats.skipped
                << " examples skipped (answer not in top-" << config.top_k << ")\n";
    }
    out.epochs.push_back(stats);
  }
  out.params = std::move(params);
  return out;
}

}  // namespace dphrase
