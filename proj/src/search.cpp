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

#include "dphrase/search.h"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

namespace dphrase {

namespace {

bool better(const ScoredRow& a, const ScoredRow& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.row < b.row;
}

std::vector<std::uint32_t> probe_clusters(const IvfIndex& ivf,
                                          std::span<const double> query,
                                          std::size_t n_probe) {
  const std::size_t n = ivf.n_clusters();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  if (n_probe >= n) return order;
  std::vector<double> score(n);
  for (std::size_t c = 0; c < n; ++c) score[c] = dot(ivf.centroids.row(c), query);
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(n_probe),
                    order.end(), [&](std::uint32_t a, std::uint32_t b) {
                      if (score[a] != score[b]) return score[a] > score[b];
                      return a < b;
                    });
  order.resize(n_probe);
  return order;
}

std::size_t effective_probe(const IvfIndex& ivf, std::size_t n_probe) {
  std::size_t p = n_probe == 0 ? ivf.n_probe : n_probe;
  return std::clamp<std::size_t>(p, 1, std::max<std::size_t>(1, ivf.n_clusters()));
}

void check_index(const PhraseDump& dump, const IvfIndex& ivf) {
  if (ivf.assignment.size() != dump.size() || ivf.n_clusters() == 0) {
    throw Error("search: IVF index does not match the dump");
  }
}

struct Pair {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
};

}  // namespace

void SearchConfig::validate() const {
  if (top_k == 0) throw RangeError("search: top_k must be >= 1");
  if (max_span_len == 0) throw RangeError("search: max_span_len must be >= 1");
  if (final_count == 0) throw RangeError("search: final result count must be >= 1");
}

double row_score(const PhraseDump& dump, std::size_t row,
                 std::span<const double> query) {
  return dot(dump.vectors.row(row), query);
}

std::vector<ScoredRow> mips_topk(const PhraseDump& dump, const IvfIndex& ivf,
                                 std::span<const double> query, std::size_t k,
                                 std::size_t n_probe) {
  if (query.size() != dump.dim) {
    throw RangeError("mips_topk: query dimension " + std::to_string(query.size()) +
                     " does not match index dimension " + std::to_string(dump.dim));
  }
  check_index(dump, ivf);
  std::vector<ScoredRow> cand;
  for (auto c : probe_clusters(ivf, query, effective_probe(ivf, n_probe))) {
    for (auto row : ivf.lists[c]) cand.push_back({row, row_score(dump, row, query)});
  }
  k = std::min(k, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

std::vector<std::vector<ScoredRow>> mips_topk_batch(
    const PhraseDump& dump, const IvfIndex& ivf,
    std::span<const std::vector<double>> queries, std::size_t k,
    std::size_t n_probe) {
  std::vector<std::vector<ScoredRow>> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(mips_topk(dump, ivf, q, k, n_probe));
  return out;
}

std::vector<SearchResult> constrained_search(const PhraseDump& dump,
                                             const IvfIndex& ivf,
                                             const QuestionEmbedding& q,
                                             const SearchConfig& config) {
  config.validate();
  if (dump.size() == 0) return {};
  const std::vector<double> queries[2] = {q.start, q.end};
  auto hits = mips_topk_batch(dump, ivf, queries, config.top_k, config.n_probe);
  const std::size_t L = config.max_span_len;

  std::vector<Pair> pairs;
  auto add_pair = [&](std::size_t i, std::size_t j) {
    pairs.push_back({i, j, row_score(dump, i, q.start) + row_score(dump, j, q.end)});
  };
  for (const auto& hit : hits[0]) {
    const std::size_t i = hit.row;
    const auto& par = dump.paragraphs[dump.row_paragraph[i]];
    for (std::size_t j = i; j < par.row_end; ++j) {
      if (dump.offsets[j].token - dump.offsets[i].token >= L) break;
      add_pair(i, j);
    }
  }
  for (const auto& hit : hits[1]) {
    const std::size_t j = hit.row;
    const auto& par = dump.paragraphs[dump.row_paragraph[j]];
    for (std::size_t i = j + 1; i-- > par.row_begin;) {
      if (dump.offsets[j].token - dump.offsets[i].token >= L) break;
      add_pair(i, j);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.start, a.end) < std::tie(b.start, b.end);
  });
  pairs.erase(std::unique(pairs.begin(), pairs.end(),
                          [](const Pair& a, const Pair& b) {
                            return a.start == b.start && a.end == b.end;
                          }),
              pairs.end());
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.score > b.score; });

  std::vector<SearchResult> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& so = dump.offsets[p.start];
    const auto& eo = dump.offsets[p.end];
    SearchResult r;
    r.span = {dump.doc_ids[so.doc], so.paragraph, so.token, eo.token};
    r.score = p.score;
    r.text = dump.span_text(p.start, p.end);
    r.start_row = p.start;
    r.end_row = p.end;
    r.char_begin = so.char_begin;
    r.char_end = eo.char_end;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SearchResult> dedup(std::span<const SearchResult> results) {
  std::set<std::tuple<std::string, std::uint32_t, std::string>> seen;
  std::vector<SearchResult> out;
  for (const auto& r : results) {
    if (seen.emplace(r.span.doc_id, r.span.paragraph, normalize_answer(r.text)).second) {
      out.push_back(r);
    }
  }
  return out;
}

std::vector<SearchResult> search(const PhraseDump& dump, const IvfIndex& ivf,
                                 const EncoderParams& params,
                                 std::string_view question,
                                 const SearchConfig& config) {
  auto ids = question_token_ids(params, question);
  if (ids.empty()) throw RangeError("search: empty question");
  if (params.dim != dump.dim) {
    throw Error("search: encoder dimension " + std::to_string(params.dim) +
                " does not match index dimension " + std::to_string(dump.dim));
  }
  auto q = encode_question(params, ids);
  auto results = dedup(constrained_search(dump, ivf, q, config));
  if (results.size() > config.final_count) results.resize(config.final_count);
  return results;
}

std::vector<BatchSlot> batch_search(const PhraseDump& dump, const IvfIndex& ivf,
                                    const EncoderParams& params,
                                    std::span<const std::string> questions,
                                    const SearchConfig& config) {
  std::vector<BatchSlot> out(questions.size());
  for (std::size_t i = 0; i < questions.size(); ++i) {
    try {
      out[i].results = search(dump, ivf, params, questions[i], config);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

}  // namespace dphrase
