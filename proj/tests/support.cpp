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

#include "support.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dphrase::testing {

TempDir::TempDir() {
  static std::uint64_t counter = 0;
  std::random_device rd;
  auto base = std::filesystem::temp_directory_path();
  for (;;) {
    auto candidate = base / ("dphrase-test-" + std::to_string(rd()) + "-" +
                             std::to_string(counter++));
    if (std::filesystem::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Corpus corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  return ingest_jsonl(in);
}

Corpus fixture_corpus() {
  return corpus_from_jsonl(
      R"({"id": "d1", "title": "One", "paragraphs": [{"text": "alpha beta gamma delta epsilon"}, {"text": "zeta eta theta iota kappa"}]})"
      "\n"
      R"({"id": "d2", "title": "Two", "paragraphs": [{"text": "lambda mu nu xi omicron"}, {"text": "pi rho sigma tau upsilon"}]})"
      "\n");
}

Corpus random_corpus(std::mt19937_64& rng, std::size_t docs,
                     std::size_t paragraphs_per_doc, std::size_t min_len,
                     std::size_t max_len, std::size_t vocab_words) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> word(0, vocab_words - 1);
  Corpus corpus;
  for (std::size_t d = 0; d < docs; ++d) {
    std::vector<std::string> texts;
    for (std::size_t p = 0; p < paragraphs_per_doc; ++p) {
      std::string text;
      const std::size_t m = len(rng);
      for (std::size_t t = 0; t < m; ++t) {
        if (t) text += ' ';
        text += "w" + std::to_string(word(rng));
      }
      texts.push_back(text);
    }
    corpus.add_document("doc" + std::to_string(d), "Doc " + std::to_string(d),
                        texts);
  }
  return corpus;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n,
                                  double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

MatrixD random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                      double scale) {
  std::normal_distribution<double> g(0.0, scale);
  MatrixD m(rows, cols);
  for (auto& x : m.flat()) x = g(rng);
  return m;
}

EncoderParams random_params(const Vocabulary& vocab, std::size_t dim,
                            std::size_t window, std::uint64_t seed,
                            double scale) {
  auto p = init_encoder(vocab, EncoderConfig{dim, window, seed});
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> g(0.0, scale);
  p.weights.visit([&](const char*, ParamSide, MatrixD& m) {
    for (auto& x : m.flat()) x = g(rng);
  });
  return p;
}

MatrixD oracle_encode_passage(const EncoderParams& p,
                              const std::vector<TokenId>& ids) {
  const std::size_t m = ids.size(), d = p.dim;
  const long w = long(p.window);
  const auto& W = p.weights;
  MatrixD h(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> mean(d, 0.0);
    int count = 0;
    for (long k = long(i) - w; k <= long(i) + w; ++k) {
      if (k < 0 || k >= long(m) || k == long(i)) continue;
      ++count;
    }
    for (long k = long(i) - w; k <= long(i) + w; ++k) {
      if (k < 0 || k >= long(m) || k == long(i)) continue;
      for (std::size_t c = 0; c < d; ++c) {
        mean[c] += W.embedding(ids[std::size_t(k)], c) / count;
      }
    }
    for (std::size_t r = 0; r < d; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        v += W.context(r, c) * W.embedding(ids[i], c);
        v += W.neighbor(r, c) * mean[c];
      }
      h(i, r) = v;
    }
  }
  return h;
}

QuestionEmbedding oracle_encode_question(const EncoderParams& p,
                                         const std::vector<TokenId>& ids) {
  const std::size_t d = p.dim;
  const auto& W = p.weights;
  std::vector<double> pooled(d, 0.0);
  for (TokenId t : ids) {
    for (std::size_t c = 0; c < d; ++c) pooled[c] += W.question_embedding(t, c);
  }
  for (auto& x : pooled) x /= double(ids.size());
  QuestionEmbedding q{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t r = 0; r < d; ++r) {
    double s = W.start_bias(0, r), e = W.end_bias(0, r);
    for (std::size_t c = 0; c < d; ++c) {
      s += W.start_head(r, c) * pooled[c];
      e += W.end_head(r, c) * pooled[c];
    }
    q.start[r] = s;
    q.end[r] = e;
  }
  return q;
}

namespace {

double widened_dot(std::span<const float> row, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) s += double(row[c]) * q[c];
  return s;
}

}  // namespace

std::vector<OracleSpan> oracle_all_spans(const PhraseDump& dump,
                                         const QuestionEmbedding& q,
                                         std::size_t max_span_len) {
  std::vector<OracleSpan> out;
  for (std::size_t i = 0; i < dump.size(); ++i) {
    for (std::size_t j = i; j < dump.size(); ++j) {
      const auto& a = dump.offsets[i];
      const auto& b = dump.offsets[j];
      if (a.doc != b.doc || a.paragraph != b.paragraph) break;
      if (b.token - a.token >= max_span_len) break;
      out.push_back({i, j,
                     widened_dot(dump.vectors.row(i), q.start) +
                         widened_dot(dump.vectors.row(j), q.end)});
    }
  }
  std::sort(out.begin(), out.end(), [](const OracleSpan& x, const OracleSpan& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.start_row != y.start_row) return x.start_row < y.start_row;
    return x.end_row < y.end_row;
  });
  return out;
}

std::vector<ScoredRow> oracle_topk(const PhraseDump& dump,
                                   const std::vector<double>& query,
                                   std::size_t k) {
  std::vector<ScoredRow> all;
  for (std::size_t r = 0; r < dump.size(); ++r) {
    all.push_back({r, widened_dot(dump.vectors.row(r), query)});
  }
  std::sort(all.begin(), all.end(), [](const ScoredRow& a, const ScoredRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row < b.row;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

double oracle_negative_loss(const std::vector<MatrixD>& tokens,
                            const std::vector<QuestionEmbedding>& questions,
                            const std::vector<std::size_t>& gold_start,
                            const std::vector<std::size_t>& gold_end,
                            const std::vector<CachedBatch>& cached) {
  const std::size_t b = tokens.size();
  double total = 0.0;
  for (int side = 0; side < 2; ++side) {
    std::vector<std::vector<double>> cols;
    for (std::size_t i = 0; i < b; ++i) {
      auto row = tokens[i].row(side == 0 ? gold_start[i] : gold_end[i]);
      cols.emplace_back(row.begin(), row.end());
    }
    for (const auto& c : cached) {
      const MatrixD& m = side == 0 ? c.start : c.end;
      for (std::size_t r = 0; r < m.rows(); ++r) {
        cols.emplace_back(m.row(r).begin(), m.row(r).end());
      }
    }
    for (std::size_t i = 0; i < b; ++i) {
      const auto& q = side == 0 ? questions[i].start : questions[i].end;
      std::vector<double> s;
      for (const auto& col : cols) {
        double v = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) v += q[c] * col[c];
        s.push_back(v);
      }
      double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double v : s) z += std::exp(v - mx);
      total += -(s[i] - mx - std::log(z)) / 2.0;
    }
  }
  return total / double(b);
}

std::vector<double> numeric_gradient(const std::function<double()>& f,
                                     std::span<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

std::vector<double> flatten(const EncoderWeights& w) {
  std::vector<double> out;
  w.visit([&](const char*, ParamSide, const MatrixD& m) {
    out.insert(out.end(), m.flat().begin(), m.flat().end());
  });
  return out;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  for (std::istreambuf_iterator<char> it(in), end; it != end; ++it) {
    h ^= std::uint8_t(*it);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dphrase::testing
