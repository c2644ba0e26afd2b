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

#include "dphrase/filter.h"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dphrase/search.h"
#include "dphrase/training.h"

namespace dphrase {

namespace {

double logit_of(const FilterParams& f, std::span<const float> x) {
  return dot(x, f.weight) + f.bias;
}

}  // namespace

BceResult filter_bce(const FilterParams& filter, const MatrixF& x,
                     std::span<const std::uint8_t> labels) {
  if (labels.size() != x.rows()) throw Error("filter_bce: label count mismatch");
  if (filter.weight.size() != x.cols()) throw Error("filter_bce: weight size mismatch");
  if (x.rows() == 0) throw Error("filter_bce: no rows");
  BceResult out;
  out.d_weight.assign(x.cols(), 0.0);
  const double inv_n = 1.0 / double(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double z = logit_of(filter, x.row(r));
    const double y = labels[r] ? 1.0 : 0.0;
    out.loss += (std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)))) * inv_n;
    const double g = (1.0 / (1.0 + std::exp(-z)) - y) * inv_n;
    axpy(g, x.row(r), out.d_weight);
    out.d_bias += g;
  }
  return out;
}

FilterParams train_filter(const MatrixF& x, std::span<const std::uint8_t> labels,
                          const FilterTrainConfig& config) {
  if (std::none_of(labels.begin(), labels.end(), [](auto v) { return v != 0; })) {
    throw Error("train_filter: no positive rows");
  }
  FilterParams f;
  f.weight.assign(x.cols(), 0.0);
  OptimizerState state;
  state.config.lr = config.lr;
  state.config.clip_norm = 0.0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    auto g = filter_bce(f, x, labels);
    std::span<double> params[2] = {f.weight, {&f.bias, 1}};
    std::span<double> grads[2] = {g.d_weight, {&g.d_bias, 1}};
    adam_step(params, grads, state);
  }
  return f;
}

std::vector<std::uint8_t> filter_labels(const PhraseDump& dump,
                                        std::span<const QAPair> qa) {
  std::vector<std::uint8_t> labels(dump.size(), 0);
  for (const auto& p : qa) {
    if (!p.gold) continue;
    for (auto tok : {p.gold->start, p.gold->end}) {
      if (auto row = find_row(dump, p.gold->doc_id, p.gold->paragraph, tok)) {
        labels[*row] = 1;
      }
    }
  }
  return labels;
}

std::vector<float> compute_filter_logits(const PhraseDump& dump,
                                         const FilterParams& filter) {
  if (filter.weight.size() != dump.dim) {
    throw Error("compute_filter_logits: filter dimension does not match dump");
  }
  std::vector<float> out(dump.size());
  for (std::size_t r = 0; r < dump.size(); ++r) {
    out[r] = static_cast<float>(logit_of(filter, dump.vectors.row(r)));
  }
  return out;
}

ThresholdSelection select_filter_threshold(const PhraseDump& dump,
                                           const FilterParams& filter,
                                           std::span<const QAPair> dev,
                                           const EncoderParams& params,
                                           double max_drop,
                                           std::size_t max_span_len) {
  if (dev.empty()) throw Error("select_filter_threshold: empty dev set");
  const auto logits = compute_filter_logits(dump, filter);
  const std::size_t n = dump.size();

  // For every question, walk its valid spans best-first and keep the
  // "records": spans whose min(logit_start, logit_end) beats every earlier
  // span's. The top-1 answer under threshold t is the first record whose
  // min-logit reaches t.
  struct Record {
    float min_logit;
    bool correct;
  };
  std::vector<std::vector<Record>> records(dev.size());
  struct Cand {
    double score;
    std::uint32_t i;
    std::uint32_t j;
  };
  std::vector<Cand> cands;
  std::vector<double> s(n), e(n);
  for (std::size_t qi = 0; qi < dev.size(); ++qi) {
    auto ids = question_token_ids(params, dev[qi].question);
    if (ids.empty()) continue;
    auto q = encode_question(params, ids);
    for (std::size_t r = 0; r < n; ++r) {
      s[r] = row_score(dump, r, q.start);
      e[r] = row_score(dump, r, q.end);
    }
    cands.clear();
    for (const auto& par : dump.paragraphs) {
      for (std::size_t i = par.row_begin; i < par.row_end; ++i) {
        for (std::size_t j = i; j < par.row_end; ++j) {
          if (dump.offsets[j].token - dump.offsets[i].token >= max_span_len) break;
          cands.push_back({s[i] + e[j], std::uint32_t(i), std::uint32_t(j)});
        }
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.i != b.i) return a.i < b.i;
      return a.j < b.j;
    });
    const auto gold = normalize_answer(dev[qi].answer);
    float best = -std::numeric_limits<float>::infinity();
    bool first = true;
    for (const auto& c : cands) {
      float m = std::min(logits[c.i], logits[c.j]);
      if (first || m > best) {
        records[qi].push_back({m, normalize_answer(dump.span_text(c.i, c.j)) == gold});
        best = m;
        first = false;
      }
    }
  }

  auto accuracy = [&](double t) {
    std::size_t hits = 0;
    for (const auto& rec : records) {
      auto it = std::lower_bound(rec.begin(), rec.end(), t,
                                 [](const Record& r, double v) { return r.min_logit < v; });
      if (it != rec.end() && it->correct) ++hits;
    }
    return double(hits) / double(dev.size());
  };

  ThresholdSelection out;
  out.unfiltered_accuracy = accuracy(-std::numeric_limits<double>::infinity());
  std::vector<float> values(logits);
  std::sort(values.begin(), values.end(), std::greater<>());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  for (float v : values) {
    double acc = accuracy(v);
    if (acc >= out.unfiltered_accuracy - max_drop - 1e-12) {
      out.threshold = v;
      out.filtered_accuracy = acc;
      break;
    }
  }
  out.retained_rows = std::size_t(std::count_if(
      logits.begin(), logits.end(), [&](float l) { return l >= out.threshold; }));
  return out;
}

FilteredDump apply_filter(const PhraseDump& dump, const FilterParams& filter,
                          double threshold) {
  return apply_filter(dump, compute_filter_logits(dump, filter), threshold);
}

FilteredDump apply_filter(const PhraseDump& dump, std::span<const float> logits,
                          double threshold) {
  if (logits.size() != dump.size()) throw Error("apply_filter: logit count mismatch");
  FilteredDump out;
  PhraseDump& d = out.dump;
  d.dim = dump.dim;
  d.mode = dump.mode;
  d.doc_ids = dump.doc_ids;
  d.vectors = MatrixF(0, dump.dim);
  if (dump.raw) d.raw = MatrixF(0, dump.dim);
  if (dump.filter_logits) d.filter_logits.emplace();
  for (const auto& par : dump.paragraphs) {
    ParagraphEntry entry = par;
    entry.row_begin = d.size();
    for (std::size_t r = par.row_begin; r < par.row_end; ++r) {
      if (!(double(logits[r]) >= threshold)) continue;
      out.original_rows.push_back(r);
      d.vectors.append_row(dump.vectors.row(r));
      if (dump.raw) d.raw->append_row(dump.raw->row(r));
      d.offsets.push_back(dump.offsets[r]);
      d.row_paragraph.push_back(std::uint32_t(d.paragraphs.size()));
      if (dump.mode == QuantMode::sq8) {
        d.scales.push_back(dump.scales[r]);
        auto first = dump.codes.begin() + std::ptrdiff_t(r * dump.dim);
        d.codes.insert(d.codes.end(), first, first + std::ptrdiff_t(dump.dim));
      }
      if (dump.filter_logits) d.filter_logits->push_back((*dump.filter_logits)[r]);
    }
    entry.row_end = d.size();
    if (entry.row_end > entry.row_begin) d.paragraphs.push_back(std::move(entry));
  }
  if (d.size() == 0) {
    throw Error("apply_filter: threshold " + std::to_string(threshold) +
                " removes every row");
  }
  return out;
}

}  // namespace dphrase
