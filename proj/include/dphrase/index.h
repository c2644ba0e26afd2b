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
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dphrase/common.h"
#include "dphrase/corpus.h"
#include "dphrase/encoder.h"

namespace dphrase {

enum class QuantMode : std::uint8_t { none = 0, sq8 = 1 };

const char* to_string(QuantMode mode);

/// Provenance of one dump row.
struct RowOffset {
  std::uint32_t doc = 0;        // ordinal into PhraseDump::doc_ids
  std::uint32_t paragraph = 0;  // paragraph index inside the document
  std::uint32_t token = 0;      // token position inside the paragraph
  std::uint32_t char_begin = 0;
  std::uint32_t char_end = 0;

  bool operator==(const RowOffset&) const = default;
};

/// A paragraph and the contiguous row range [row_begin, row_end) it owns.
struct ParagraphEntry {
  std::uint32_t doc = 0;
  std::uint32_t paragraph = 0;
  std::string text;
  std::size_t row_begin = 0;
  std::size_t row_end = 0;

  bool operator==(const ParagraphEntry&) const = default;
};

/// Stacked token vectors of a corpus with enough metadata to map rows back
/// to text.
///
/// `vectors` is always the search view: the float32 vectors themselves, or
/// the dequantized codes when mode == sq8. `raw` optionally keeps the
/// float32 originals of a quantized dump.
struct PhraseDump {
  std::size_t dim = 0;
  QuantMode mode = QuantMode::none;
  MatrixF vectors;
  std::vector<std::int8_t> codes;
  std::vector<float> scales;
  std::optional<MatrixF> raw;
  std::vector<RowOffset> offsets;
  /// Parallel to offsets: index into `paragraphs`.
  std::vector<std::uint32_t> row_paragraph;
  std::vector<ParagraphEntry> paragraphs;
  std::vector<std::string> doc_ids;
  std::optional<std::vector<float>> filter_logits;

  std::size_t size() const { return offsets.size(); }
  /// Original float32 row when available, else the search view.
  std::span<const float> original_row(std::size_t row) const;
  /// Text of the span between two rows of the same paragraph.
  std::string span_text(std::size_t start_row, std::size_t end_row) const;
  /// Checks every structural invariant; throws Error on violation.
  void validate() const;

  bool operator==(const PhraseDump&) const = default;
};

/// Encodes every paragraph and stacks the rows in corpus order.
PhraseDump build_phrase_dump(const EncoderParams& params, const Corpus& corpus);

/// Row of `dump` holding token `token` of (doc_id, paragraph), if retained.
std::optional<std::size_t> find_row(const PhraseDump& dump,
                                    std::string_view doc_id,
                                    std::uint32_t paragraph,
                                    std::uint32_t token);

struct Sq8Codes {
  std::vector<std::int8_t> codes;
  std::vector<float> scales;
};

/// Per-row symmetric int8 quantization: scale = max|x| / 127 (1 for an
/// all-zero row), code = clamp(round(x / scale), -127, 127).
Sq8Codes quantize_sq8(const MatrixF& vectors);
MatrixF dequantize_sq8(std::span<const std::int8_t> codes,
                       std::span<const float> scales, std::size_t dim);

/// Converts the dump to SQ8 in place. With keep_raw the float32 originals
/// stay available in `raw`.
void quantize_dump(PhraseDump& dump, bool keep_raw);

/// Bytes of the vector payload: N*d for sq8, 4*N*d for float32.
std::size_t payload_bytes(const PhraseDump& dump);

/// Inverted file over the dump rows.
struct IvfIndex {
  MatrixF centroids;
  std::vector<std::vector<std::uint32_t>> lists;
  /// Cluster of every row.
  std::vector<std::uint32_t> assignment;
  std::size_t n_probe = 1;

  std::size_t n_clusters() const { return centroids.rows(); }
  bool operator==(const IvfIndex&) const = default;
};

struct KMeansConfig {
  std::size_t iterations = 20;
  std::uint64_t seed = 0;
};

/// Seeded k-means++ followed by a fixed number of Lloyd iterations with
/// Euclidean assignment. Throws when n_clusters is 0 or exceeds the row
/// count.
IvfIndex build_ivf(const PhraseDump& dump, std::size_t n_clusters,
                   const KMeansConfig& config = {});

/// Single-cluster index; probing it is exact search.
IvfIndex flat_ivf(const PhraseDump& dump);

/// Index file layout (little-endian, sections aligned to 64 bytes):
///   header   "DPHI", u32 version, u32 d, u64 N, u8 quant-mode,
///            u32 n_clusters, u32 n_probe, u32 docs, u32 paragraphs,
///            u8 has-filter, zero padding to 64 bytes
///   offsets  N fixed 40-byte records: doc u32, paragraph u32, token u32,
///            char-start u32, char-end u32, cluster u32, filter-logit f32,
///            12 reserved zero bytes
///   scales   N float32
///   payload  N*d int8 (sq8) or N*d float32
///   centroids n_clusters*d float32
///   doc-id string table, then the paragraph table (doc u32, paragraph
///   u32, row-begin u64, row-end u64, text)
void save_index(const PhraseDump& dump, const IvfIndex& ivf,
                const std::filesystem::path& path);

struct LoadedIndex {
  PhraseDump dump;
  IvfIndex ivf;
};

LoadedIndex load_index(const std::filesystem::path& path);

/// float32 originals for a quantized dump: "DPHF", u32 version, u32 d,
/// u64 N, then N*d float32.
void save_raw_vectors(const PhraseDump& dump, const std::filesystem::path& path);
void load_raw_vectors(PhraseDump& dump, const std::filesystem::path& path);
/// Conventional sidecar location next to an index file.
std::filesystem::path raw_sidecar_path(const std::filesystem::path& index_path);

/// Keeps only the paragraphs of the given documents (for gold-passage-only
/// corpora). Quantization state and filter logits carry over.
PhraseDump restrict_dump(const PhraseDump& dump,
                         const std::set<std::string>& doc_ids);

}  // namespace dphrase
