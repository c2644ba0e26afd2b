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
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dphrase/common.h"

namespace dphrase {

using TokenId = std::uint32_t;

/// One token produced by tokenize(): the lowercased vocabulary form and the
/// half-open byte range [begin, end) of its surface form in the source text.
struct Token {
  std::string text;
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  bool operator==(const Token&) const = default;
};

/// Splits on whitespace (ASCII and the common Unicode space code points);
/// every ASCII punctuation character becomes its own token.
std::vector<Token> tokenize(std::string_view text);

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
std::string normalize_answer(std::string_view s);

/// Insertion-ordered token-string -> id map. Id 0 is reserved for unknown
/// tokens.
class Vocabulary {
 public:
  static constexpr TokenId kUnknown = 0;
  static constexpr std::string_view kUnknownToken = "[unk]";

  Vocabulary();

  TokenId add(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  /// Id of `token`, or kUnknown.
  TokenId lookup(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct ParagraphToken {
  TokenId id = 0;
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
};

struct Paragraph {
  std::string text;
  std::vector<ParagraphToken> tokens;

  std::vector<TokenId> token_ids() const;
  /// Surface text covering tokens [start, end] inclusive.
  std::string span_text(std::size_t start, std::size_t end) const;
};

struct Document {
  std::string id;
  std::string title;
  std::vector<Paragraph> paragraphs;
};

struct Corpus {
  std::vector<Document> documents;
  Vocabulary vocab;

  std::size_t total_tokens() const;
  std::size_t total_paragraphs() const;
  /// Ordinal of the document with this id, if any.
  std::optional<std::size_t> find(std::string_view doc_id) const;

  /// Segments `text` on blank lines, tokenizes each paragraph and appends
  /// the document. Throws on duplicate id or when no paragraph survives.
  void add_document(std::string id, std::string title,
                    const std::vector<std::string>& texts);

 private:
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Paragraph-local phrase: tokens [start, end] inclusive, 0-based.
struct PhraseSpan {
  std::string doc_id;
  std::uint32_t paragraph = 0;
  std::uint32_t start = 0;
  std::uint32_t end = 0;

  bool operator==(const PhraseSpan&) const = default;
};

enum class QASource { annotated, augmented };

struct QAPair {
  std::string question;
  std::string answer;
  std::optional<PhraseSpan> gold;
  QASource source = QASource::annotated;
};

/// Splits a text field into paragraphs on blank lines. Whitespace-only
/// segments are dropped.
std::vector<std::string> segment_paragraphs(std::string_view text);

Corpus ingest_jsonl(const std::filesystem::path& path);
Corpus ingest_jsonl(std::istream& in);

/// Loads QA pairs. Character offsets, when present, are mapped onto token
/// spans of the referenced paragraph; the mapped span's text must normalize
/// to the answer.
std::vector<QAPair> load_qa_jsonl(const std::filesystem::path& path,
                                  const Corpus& corpus);
std::vector<QAPair> load_qa_jsonl(std::istream& in, const Corpus& corpus);
/// Questions and answers only; span fields are ignored.
std::vector<QAPair> load_qa_answers(const std::filesystem::path& path);
std::vector<QAPair> load_qa_answers(std::istream& in);

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out);
void write_qa_jsonl(const std::vector<QAPair>& qa, const Corpus& corpus,
                    std::ostream& out);

/// All spans (i, j) with i <= j < i + max_len, ordered by (i, j).
std::vector<PhraseSpan> enumerate_phrases(const Paragraph& paragraph,
                                          std::size_t max_len,
                                          std::string_view doc_id = {},
                                          std::uint32_t paragraph_index = 0);

/// Token span covering the byte range [char_begin, char_end).
std::optional<std::pair<std::uint32_t, std::uint32_t>> char_range_to_tokens(
    const Paragraph& paragraph, std::uint32_t char_begin,
    std::uint32_t char_end);

}  // namespace dphrase
