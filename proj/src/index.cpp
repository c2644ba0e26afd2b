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

#include "dphrase/index.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <tuple>

#include "binary_io.h"

namespace dphrase {

namespace {

constexpr char kIndexMagic[4] = {'D', 'P', 'H', 'I'};
constexpr char kRawMagic[4] = {'D', 'P', 'H', 'F'};
constexpr std::uint32_t kIndexVersion = 1;
constexpr std::size_t kHeaderBytes = 64;
constexpr std::size_t kRecordBytes = 40;
constexpr std::size_t kAlign = 64;

float l2_sq(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double t = double(a[i]) - double(b[i]);
    s += t * t;
  }
  return static_cast<float>(s);
}

std::uint32_t nearest_centroid(const MatrixF& centroids,
                               std::span<const float> x) {
  std::uint32_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    float d = l2_sq(centroids.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

void rebuild_row_paragraph(PhraseDump& dump) {
  dump.row_paragraph.assign(dump.offsets.size(), 0);
  for (std::size_t p = 0; p < dump.paragraphs.size(); ++p) {
    for (std::size_t r = dump.paragraphs[p].row_begin;
         r < dump.paragraphs[p].row_end; ++r) {
      dump.row_paragraph[r] = static_cast<std::uint32_t>(p);
    }
  }
}

}  // namespace

const char* to_string(QuantMode mode) {
  switch (mode) {
    case QuantMode::none:
      return "none";
    case QuantMode::sq8:
      return "sq8";
  }
  return "unknown";
}

std::span<const float> PhraseDump::original_row(std::size_t row) const {
  return raw ? raw->row(row) : vectors.row(row);
}

std::string PhraseDump::span_text(std::size_t start_row,
                                  std::size_t end_row) const {
  if (start_row > end_row || end_row >= size() ||
      row_paragraph[start_row] != row_paragraph[end_row]) {
    throw RangeError("span_text: rows " + std::to_string(start_row) + ".." +
                     std::to_string(end_row) + " do not form a paragraph span");
  }
  const auto& text = paragraphs[row_paragraph[start_row]].text;
  std::uint32_t b = offsets[start_row].char_begin;
  std::uint32_t e = offsets[end_row].char_end;
  return text.substr(b, e - b);
}

void PhraseDump::validate() const {
  const std::size_t n = offsets.size();
  if (vectors.rows() != n || (n > 0 && vectors.cols() != dim)) {
    throw Error("dump: vector matrix does not match offsets");
  }
  if (mode == QuantMode::sq8 && (codes.size() != n * dim || scales.size() != n)) {
    throw Error("dump: sq8 codes/scales do not match row count");
  }
  if (raw && (raw->rows() != n || raw->cols() != dim)) {
    throw Error("dump: raw vectors do not match row count");
  }
  if (filter_logits && filter_logits->size() != n) {
    throw Error("dump: filter logits do not match row count");
  }
  if (row_paragraph.size() != n) throw Error("dump: row_paragraph size mismatch");
  std::size_t expected_begin = 0;
  for (std::size_t p = 0; p < paragraphs.size(); ++p) {
    const auto& e = paragraphs[p];
    if (e.row_begin != expected_begin || e.row_end < e.row_begin) {
      throw Error("dump: paragraph rows are not contiguous");
    }
    if (e.doc >= doc_ids.size()) throw Error("dump: doc ordinal out of range");
    for (std::size_t r = e.row_begin; r < e.row_end; ++r) {
      if (row_paragraph[r] != p || offsets[r].doc != e.doc ||
          offsets[r].paragraph != e.paragraph) {
        throw Error("dump: row " + std::to_string(r) +
                    " disagrees with its paragraph entry");
      }
      if (offsets[r].char_end > e.text.size() ||
          offsets[r].char_begin >= offsets[r].char_end) {
        throw Error("dump: row " + std::to_string(r) + " has a bad char span");
      }
    }
    expected_begin = e.row_end;
  }
  if (expected_begin != n) throw Error("dump: paragraphs do not cover all rows");
  for (std::size_t r = 1; r < n; ++r) {
    const auto& a = offsets[r - 1];
    const auto& b = offsets[r];
    if (std::tie(a.doc, a.paragraph, a.token) >=
        std::tie(b.doc, b.paragraph, b.token)) {
      throw Error("dump: offsets not strictly ordered at row " + std::to_string(r));
    }
  }
}

PhraseDump build_phrase_dump(const EncoderParams& params, const Corpus& corpus) {
  if (corpus.documents.empty() || corpus.total_tokens() == 0) {
    throw Error("build_phrase_dump: empty corpus");
  }
  PhraseDump dump;
  dump.dim = params.dim;
  dump.vectors = MatrixF(0, params.dim);
  std::vector<float> row(params.dim);
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const auto& doc = corpus.documents[d];
    dump.doc_ids.push_back(doc.id);
    for (std::size_t p = 0; p < doc.paragraphs.size(); ++p) {
      const auto& par = doc.paragraphs[p];
      std::vector<TokenId> ids;
      ids.reserve(par.tokens.size());
      for (const auto& t : par.tokens) {
        ids.push_back(params.vocab.lookup(corpus.vocab.token(t.id)));
      }
      TokenMatrix h = encode_passage(params, ids);
      ParagraphEntry entry{static_cast<std::uint32_t>(d),
                           static_cast<std::uint32_t>(p), par.text, dump.size(),
                           0};
      for (std::size_t i = 0; i < par.tokens.size(); ++i) {
        for (std::size_t k = 0; k < params.dim; ++k) {
          row[k] = static_cast<float>(h(i, k));
        }
        dump.vectors.append_row(row);
        dump.offsets.push_back({static_cast<std::uint32_t>(d),
                                static_cast<std::uint32_t>(p),
                                static_cast<std::uint32_t>(i),
                                par.tokens[i].begin, par.tokens[i].end});
        dump.row_paragraph.push_back(
            static_cast<std::uint32_t>(dump.paragraphs.size()));
      }
      entry.row_end = dump.size();
      dump.paragraphs.push_back(std::move(entry));
    }
  }
  return dump;
}

std::optional<std::size_t> find_row(const PhraseDump& dump,
                                    std::string_view doc_id,
                                    std::uint32_t paragraph,
                                    std::uint32_t token) {
  for (const auto& e : dump.paragraphs) {
    if (e.paragraph != paragraph || dump.doc_ids[e.doc] != doc_id) continue;
    for (std::size_t r = e.row_begin; r < e.row_end; ++r) {
      if (dump.offsets[r].token == token) return r;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

Sq8Codes quantize_sq8(const MatrixF& vectors) {
  Sq8Codes out;
  out.codes.resize(vectors.size());
  out.scales.resize(vectors.rows());
  for (std::size_t r = 0; r < vectors.rows(); ++r) {
    auto x = vectors.row(r);
    float max_abs = 0.0f;
    for (float v : x) {
      if (!std::isfinite(v)) throw Error("quantize_sq8: non-finite value");
      max_abs = std::max(max_abs, std::abs(v));
    }
    float scale = max_abs > 0.0f ? static_cast<float>(double(max_abs) / 127.0)
                                 : 1.0f;
    out.scales[r] = scale;
    for (std::size_t k = 0; k < x.size(); ++k) {
      double q = std::round(double(x[k]) / double(scale));
      q = std::clamp(q, -127.0, 127.0);
      out.codes[r * vectors.cols() + k] = static_cast<std::int8_t>(q);
    }
  }
  return out;
}

MatrixF dequantize_sq8(std::span<const std::int8_t> codes,
                       std::span<const float> scales, std::size_t dim) {
  if (codes.size() != scales.size() * dim) {
    throw Error("dequantize_sq8: code count does not match scales x dim");
  }
  MatrixF out(scales.size(), dim);
  for (std::size_t r = 0; r < scales.size(); ++r) {
    for (std::size_t k = 0; k < dim; ++k) {
      out(r, k) = static_cast<float>(double(codes[r * dim + k]) * double(scales[r]));
    }
  }
  return out;
}

void quantize_dump(PhraseDump& dump, bool keep_raw) {
  if (dump.mode == QuantMode::sq8) return;
  auto q = quantize_sq8(dump.vectors);
  if (keep_raw) dump.raw = dump.vectors;
  dump.vectors = dequantize_sq8(q.codes, q.scales, dump.dim);
  dump.codes = std::move(q.codes);
  dump.scales = std::move(q.scales);
  dump.mode = QuantMode::sq8;
}

std::size_t payload_bytes(const PhraseDump& dump) {
  std::size_t n = dump.size() * dump.dim;
  return dump.mode == QuantMode::sq8 ? n * sizeof(std::int8_t) : n * sizeof(float);
}

IvfIndex build_ivf(const PhraseDump& dump, std::size_t n_clusters,
                   const KMeansConfig& config) {
  const std::size_t n = dump.size();
  const std::size_t d = dump.dim;
  if (n_clusters == 0) throw Error("build_ivf: n_clusters must be >= 1");
  if (n_clusters > n) {
    throw Error("build_ivf: n_clusters (" + std::to_string(n_clusters) +
                ") exceeds row count (" + std::to_string(n) + ")");
  }
  const MatrixF& x = dump.vectors;
  std::mt19937_64 rng(config.seed);

  // k-means++ seeding.
  MatrixF centroids(0, d);
  std::vector<char> chosen(n, 0);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  auto take = [&](std::size_t r) {
    chosen[r] = 1;
    centroids.append_row(x.row(r));
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], double(l2_sq(x.row(i), x.row(r))));
    }
  };
  take(first);
  while (centroids.rows() < n_clusters) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : min_d[i];
    std::size_t pick = n;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        u -= min_d[i];
        pick = i;
        if (u <= 0.0) break;
      }
    } else {
      // Remaining rows duplicate chosen ones; take the first unused row.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    take(pick);
  }

  std::vector<std::uint32_t> assignment(n, 0);
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      assignment[i] = nearest_centroid(centroids, x.row(i));
    }
    std::vector<double> sums(n_clusters * d, 0.0);
    std::vector<std::size_t> counts(n_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = assignment[i];
      ++counts[c];
      for (std::size_t k = 0; k < d; ++k) sums[c * d + k] += x(i, k);
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (counts[c] == 0) continue;  // keep the previous centroid
      for (std::size_t k = 0; k < d; ++k) {
        centroids(c, k) = static_cast<float>(sums[c * d + k] / double(counts[c]));
      }
    }
  }

  IvfIndex ivf;
  ivf.centroids = std::move(centroids);
  ivf.assignment.resize(n);
  ivf.lists.assign(n_clusters, {});
  for (std::size_t i = 0; i < n; ++i) {
    auto c = nearest_centroid(ivf.centroids, x.row(i));
    ivf.assignment[i] = c;
    ivf.lists[c].push_back(static_cast<std::uint32_t>(i));
  }
  ivf.n_probe = std::max<std::size_t>(1, (n_clusters + 3) / 4);
  return ivf;
}

IvfIndex flat_ivf(const PhraseDump& dump) {
  if (dump.size() == 0) throw Error("flat_ivf: empty dump");
  IvfIndex ivf;
  ivf.centroids = MatrixF(1, dump.dim);
  std::vector<double> mean(dump.dim, 0.0);
  for (std::size_t r = 0; r < dump.size(); ++r) {
    axpy(1.0 / double(dump.size()), dump.vectors.row(r), mean);
  }
  for (std::size_t k = 0; k < dump.dim; ++k) {
    ivf.centroids(0, k) = static_cast<float>(mean[k]);
  }
  ivf.assignment.assign(dump.size(), 0);
  ivf.lists.assign(1, {});
  for (std::size_t r = 0; r < dump.size(); ++r) {
    ivf.lists[0].push_back(static_cast<std::uint32_t>(r));
  }
  ivf.n_probe = 1;
  return ivf;
}

void save_index(const PhraseDump& dump, const IvfIndex& ivf,
                const std::filesystem::path& path) {
  dump.validate();
  const std::size_t n = dump.size();
  if (ivf.assignment.size() != n) {
    throw Error("save_index: IVF assignment does not cover the dump");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::Writer w(out);

  w.bytes(kIndexMagic, 4);
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.dim));
  w.put<std::uint64_t>(n);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dump.mode));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ivf.n_clusters()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ivf.n_probe));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.doc_ids.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.paragraphs.size()));
  w.put<std::uint8_t>(dump.filter_logits ? 1 : 0);
  w.pad_to(kHeaderBytes);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& o = dump.offsets[r];
    w.put<std::uint32_t>(o.doc);
    w.put<std::uint32_t>(o.paragraph);
    w.put<std::uint32_t>(o.token);
    w.put<std::uint32_t>(o.char_begin);
    w.put<std::uint32_t>(o.char_end);
    w.put<std::uint32_t>(ivf.assignment[r]);
    w.put<float>(dump.filter_logits ? (*dump.filter_logits)[r] : 0.0f);
    for (int k = 0; k < 3; ++k) w.put<std::uint32_t>(0);
  }
  w.pad_to(kAlign);
  for (std::size_t r = 0; r < n; ++r) {
    w.put<float>(dump.mode == QuantMode::sq8 ? dump.scales[r] : 1.0f);
  }
  w.pad_to(kAlign);
  if (dump.mode == QuantMode::sq8) {
    w.bytes(dump.codes.data(), dump.codes.size());
  } else {
    w.bytes(dump.vectors.flat().data(), dump.vectors.size() * sizeof(float));
  }
  w.pad_to(kAlign);
  w.bytes(ivf.centroids.flat().data(), ivf.centroids.size() * sizeof(float));
  for (const auto& id : dump.doc_ids) w.string(id);
  for (const auto& p : dump.paragraphs) {
    w.put<std::uint32_t>(p.doc);
    w.put<std::uint32_t>(p.paragraph);
    w.put<std::uint64_t>(p.row_begin);
    w.put<std::uint64_t>(p.row_end);
    w.string(p.text);
  }
  w.check();
}

LoadedIndex load_index(const std::filesystem::path& path) {
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot open index " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open index " + path.string());
  io::Reader r(in, "index " + path.string());

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kIndexMagic, 4) != 0) throw IoError(r.what() + ": bad magic");
  auto version = r.get<std::uint32_t>();
  if (version != kIndexVersion) {
    throw IoError(r.what() + ": unsupported version " + std::to_string(version));
  }
  auto d = r.get<std::uint32_t>();
  auto n = r.get<std::uint64_t>();
  auto mode_byte = r.get<std::uint8_t>();
  auto n_clusters = r.get<std::uint32_t>();
  auto n_probe = r.get<std::uint32_t>();
  auto n_docs = r.get<std::uint32_t>();
  auto n_paragraphs = r.get<std::uint32_t>();
  auto has_filter = r.get<std::uint8_t>();
  r.skip_to(kHeaderBytes);

  if (mode_byte > 1) throw IoError(r.what() + ": unknown quantization mode");
  if (d == 0) throw IoError(r.what() + ": zero dimension");
  const auto mode = static_cast<QuantMode>(mode_byte);
  const std::size_t elem = mode == QuantMode::sq8 ? 1 : sizeof(float);
  // Reject sizes the file cannot possibly hold before allocating.
  if (n > file_size / kRecordBytes || n * d > file_size / elem ||
      std::uint64_t(n_clusters) * d > file_size / sizeof(float)) {
    throw IoError(r.what() + ": truncated file (header claims more data than present)");
  }

  LoadedIndex out;
  PhraseDump& dump = out.dump;
  IvfIndex& ivf = out.ivf;
  dump.dim = d;
  dump.mode = mode;
  dump.offsets.resize(n);
  ivf.assignment.resize(n);
  if (has_filter) dump.filter_logits.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = dump.offsets[i];
    o.doc = r.get<std::uint32_t>();
    o.paragraph = r.get<std::uint32_t>();
    o.token = r.get<std::uint32_t>();
    o.char_begin = r.get<std::uint32_t>();
    o.char_end = r.get<std::uint32_t>();
    ivf.assignment[i] = r.get<std::uint32_t>();
    float logit = r.get<float>();
    if (has_filter) (*dump.filter_logits)[i] = logit;
    for (int k = 0; k < 3; ++k) r.get<std::uint32_t>();
    if (ivf.assignment[i] >= n_clusters) {
      throw IoError(r.what() + ": row " + std::to_string(i) +
                    " assigned to a missing cluster");
    }
  }
  r.skip_to(kAlign);
  std::vector<float> scales(n);
  r.bytes(scales.data(), n * sizeof(float));
  r.skip_to(kAlign);
  if (mode == QuantMode::sq8) {
    dump.codes.resize(n * d);
    r.bytes(dump.codes.data(), dump.codes.size());
    dump.scales = std::move(scales);
    dump.vectors = dequantize_sq8(dump.codes, dump.scales, d);
  } else {
    dump.vectors = MatrixF(n, d);
    r.bytes(dump.vectors.flat().data(), n * d * sizeof(float));
  }
  r.skip_to(kAlign);
  ivf.centroids = MatrixF(n_clusters, d);
  r.bytes(ivf.centroids.flat().data(), ivf.centroids.size() * sizeof(float));
  ivf.n_probe = n_probe;
  ivf.lists.assign(n_clusters, {});
  for (std::size_t i = 0; i < n; ++i) {
    ivf.lists[ivf.assignment[i]].push_back(static_cast<std::uint32_t>(i));
  }

  for (std::uint32_t k = 0; k < n_docs; ++k) dump.doc_ids.push_back(r.string());
  for (std::uint32_t k = 0; k < n_paragraphs; ++k) {
    ParagraphEntry e;
    e.doc = r.get<std::uint32_t>();
    e.paragraph = r.get<std::uint32_t>();
    e.row_begin = r.get<std::uint64_t>();
    e.row_end = r.get<std::uint64_t>();
    e.text = r.string();
    if (e.row_end > n || e.row_begin > e.row_end) {
      throw IoError(r.what() + ": paragraph row range out of bounds");
    }
    dump.paragraphs.push_back(std::move(e));
  }
  rebuild_row_paragraph(dump);
  try {
    dump.validate();
  } catch (const Error& e) {
    throw IoError(r.what() + ": " + e.what());
  }
  return out;
}

void save_raw_vectors(const PhraseDump& dump, const std::filesystem::path& path) {
  const MatrixF& src = dump.raw ? *dump.raw : dump.vectors;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::Writer w(out);
  w.bytes(kRawMagic, 4);
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dump.dim));
  w.put<std::uint64_t>(dump.size());
  w.bytes(src.flat().data(), src.size() * sizeof(float));
  w.check();
}

void load_raw_vectors(PhraseDump& dump, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raw vector file " + path.string());
  io::Reader r(in, "raw vector file " + path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kRawMagic, 4) != 0) throw IoError(r.what() + ": bad magic");
  if (r.get<std::uint32_t>() != kIndexVersion) {
    throw IoError(r.what() + ": unsupported version");
  }
  auto d = r.get<std::uint32_t>();
  auto n = r.get<std::uint64_t>();
  if (d != dump.dim || n != dump.size()) {
    throw IoError(r.what() + ": shape does not match the index");
  }
  MatrixF raw(n, d);
  r.bytes(raw.flat().data(), raw.size() * sizeof(float));
  dump.raw = std::move(raw);
}

std::filesystem::path raw_sidecar_path(const std::filesystem::path& index_path) {
  auto p = index_path;
  p += ".f32";
  return p;
}

PhraseDump restrict_dump(const PhraseDump& dump,
                         const std::set<std::string>& doc_ids) {
  PhraseDump out;
  out.dim = dump.dim;
  out.mode = dump.mode;
  out.doc_ids = dump.doc_ids;
  out.vectors = MatrixF(0, dump.dim);
  if (dump.raw) out.raw = MatrixF(0, dump.dim);
  if (dump.filter_logits) out.filter_logits.emplace();
  for (const auto& e : dump.paragraphs) {
    if (!doc_ids.contains(dump.doc_ids[e.doc])) continue;
    ParagraphEntry copy = e;
    copy.row_begin = out.size();
    for (std::size_t r = e.row_begin; r < e.row_end; ++r) {
      out.vectors.append_row(dump.vectors.row(r));
      if (dump.raw) out.raw->append_row(dump.raw->row(r));
      out.offsets.push_back(dump.offsets[r]);
      if (dump.mode == QuantMode::sq8) {
        out.scales.push_back(dump.scales[r]);
        auto first = dump.codes.begin() + std::ptrdiff_t(r * dump.dim);
        out.codes.insert(out.codes.end(), first, first + std::ptrdiff_t(dump.dim));
      }
      if (dump.filter_logits) out.filter_logits->push_back((*dump.filter_logits)[r]);
    }
    copy.row_end = out.size();
    out.paragraphs.push_back(std::move(copy));
  }
  rebuild_row_paragraph(out);
  return out;
}

}  // namespace dphrase
