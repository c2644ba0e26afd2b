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

#include "dphrase/corpus.h"

#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace dphrase {

namespace {

using nlohmann::json;

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) ||
         (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Byte length of the whitespace code point starting at `pos`, or 0.
std::size_t whitespace_len(std::string_view s, std::size_t pos) {
  auto at = [&](std::size_t k) -> unsigned char {
    return pos + k < s.size() ? static_cast<unsigned char>(s[pos + k]) : 0;
  };
  unsigned char c = at(0);
  if (c == ' ' || (c >= 0x09 && c <= 0x0d)) return 1;
  if (c == 0xc2 && (at(1) == 0x85 || at(1) == 0xa0)) return 2;
  if (c == 0xe1 && at(1) == 0x9a && at(2) == 0x80) return 3;
  if (c == 0xe2 && at(1) == 0x80) {
    unsigned char t = at(2);
    if ((t >= 0x80 && t <= 0x8a) || t == 0xa8 || t == 0xa9 || t == 0xaf) {
      return 3;
    }
  }
  if (c == 0xe2 && at(1) == 0x81 && at(2) == 0x9f) return 3;
  if (c == 0xe3 && at(1) == 0x80 && at(2) == 0x80) return 3;
  return 0;
}

std::string lowered(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

const json& require(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError("line " + std::to_string(line) + ": missing field \"" +
                     key + "\"");
  }
  return *it;
}

template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": expected a JSON object");
    }
    try {
      fn(obj, lineno);
    } catch (const json::type_error& e) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": wrong field type: " + e.what());
    }
  }
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t pos = 0;
  std::size_t word_begin = std::string_view::npos;
  auto flush = [&](std::size_t end) {
    if (word_begin != std::string_view::npos) {
      out.push_back({lowered(text.substr(word_begin, end - word_begin)),
                     static_cast<std::uint32_t>(word_begin),
                     static_cast<std::uint32_t>(end)});
      word_begin = std::string_view::npos;
    }
  };
  while (pos < text.size()) {
    if (std::size_t ws = whitespace_len(text, pos); ws > 0) {
      flush(pos);
      pos += ws;
      continue;
    }
    auto c = static_cast<unsigned char>(text[pos]);
    if (is_ascii_punct(c)) {
      flush(pos);
      out.push_back({std::string(1, static_cast<char>(c)),
                     static_cast<std::uint32_t>(pos),
                     static_cast<std::uint32_t>(pos + 1)});
      ++pos;
      continue;
    }
    if (word_begin == std::string_view::npos) word_begin = pos;
    ++pos;
  }
  flush(text.size());
  return out;
}

std::string normalize_answer(std::string_view s) {
  std::string stripped;
  stripped.reserve(s.size());
  for (char c : s) {
    if (!is_ascii_punct(static_cast<unsigned char>(c))) {
      stripped.push_back(ascii_lower(c));
    }
  }
  std::string out;
  std::size_t pos = 0;
  while (pos < stripped.size()) {
    if (std::size_t ws = whitespace_len(stripped, pos); ws > 0) {
      pos += ws;
      continue;
    }
    std::size_t end = pos;
    while (end < stripped.size() && whitespace_len(stripped, end) == 0) ++end;
    std::string_view word(stripped.data() + pos, end - pos);
    if (word != "a" && word != "an" && word != "the") {
      if (!out.empty()) out.push_back(' ');
      out.append(word);
    }
    pos = end;
  }
  return out;
}

Vocabulary::Vocabulary() { add(kUnknownToken); }

TokenId Vocabulary::add(std::string_view token) {
  std::string key(token);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(key);
  ids_.emplace(std::move(key), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::lookup(std::string_view token) const {
  return find(token).value_or(kUnknown);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw RangeError("token id " + std::to_string(id) +
                     " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<TokenId> Paragraph::token_ids() const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(t.id);
  return ids;
}

std::string Paragraph::span_text(std::size_t start, std::size_t end) const {
  if (start > end || end >= tokens.size()) {
    throw RangeError("span [" + std::to_string(start) + ", " +
                     std::to_string(end) + "] outside paragraph of " +
                     std::to_string(tokens.size()) + " tokens");
  }
  std::uint32_t b = tokens[start].begin;
  return text.substr(b, tokens[end].end - b);
}

std::size_t Corpus::total_tokens() const {
  std::size_t n = 0;
  for (const auto& d : documents) {
    for (const auto& p : d.paragraphs) n += p.tokens.size();
  }
  return n;
}

std::size_t Corpus::total_paragraphs() const {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.paragraphs.size();
  return n;
}

std::optional<std::size_t> Corpus::find(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

void Corpus::add_document(std::string id, std::string title,
                          const std::vector<std::string>& texts) {
  if (by_id_.contains(id)) throw Error("duplicate document id \"" + id + "\"");
  Document doc{id, std::move(title), {}};
  for (const auto& text : texts) {
    for (auto& segment : segment_paragraphs(text)) {
      Paragraph p;
      for (auto& tok : tokenize(segment)) {
        p.tokens.push_back({vocab.add(tok.text), tok.begin, tok.end});
      }
      if (p.tokens.empty()) continue;
      p.text = std::move(segment);
      doc.paragraphs.push_back(std::move(p));
    }
  }
  if (doc.paragraphs.empty()) {
    throw Error("document \"" + id + "\" has no non-empty paragraphs");
  }
  by_id_.emplace(id, documents.size());
  documents.push_back(std::move(doc));
}

std::vector<std::string> segment_paragraphs(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  bool has_content = false;
  auto flush = [&] {
    if (has_content) {
      // Trim the trailing newline left over from the last line.
      while (!current.empty() &&
             (current.back() == '\n' || current.back() == '\r')) {
        current.pop_back();
      }
      out.push_back(std::move(current));
    }
    current.clear();
    has_content = false;
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    bool blank = true;
    for (std::size_t k = 0; k < line.size();) {
      std::size_t ws = whitespace_len(line, k);
      if (ws == 0) {
        blank = false;
        break;
      }
      k += ws;
    }
    if (blank) {
      flush();
    } else {
      current.append(line);
      current.push_back('\n');
      has_content = true;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();
  return out;
}

Corpus ingest_jsonl(std::istream& in) {
  Corpus corpus;
  for_each_json_line(in, [&](const json& obj, std::size_t line) {
    std::string id = require(obj, "id", line).get<std::string>();
    std::string title = obj.value("title", std::string());
    const json& paragraphs = require(obj, "paragraphs", line);
    if (!paragraphs.is_array()) {
      throw ParseError("line " + std::to_string(line) +
                       ": \"paragraphs\" must be an array");
    }
    std::vector<std::string> texts;
    for (const auto& p : paragraphs) {
      texts.push_back(require(p, "text", line).get<std::string>());
    }
    try {
      corpus.add_document(std::move(id), std::move(title), texts);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw Error("line " + std::to_string(line) + ": " + e.what());
    }
  });
  return corpus;
}

Corpus ingest_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  return ingest_jsonl(in);
}

std::optional<std::pair<std::uint32_t, std::uint32_t>> char_range_to_tokens(
    const Paragraph& paragraph, std::uint32_t char_begin,
    std::uint32_t char_end) {
  std::optional<std::uint32_t> first, last;
  for (std::uint32_t i = 0; i < paragraph.tokens.size(); ++i) {
    const auto& t = paragraph.tokens[i];
    if (t.end > char_begin && t.begin < char_end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;
  return std::make_pair(*first, *last);
}

namespace {

std::vector<QAPair> read_qa(std::istream& in, const Corpus* corpus) {
  std::vector<QAPair> out;
  for_each_json_line(in, [&](const json& obj, std::size_t line) {
    auto where = [line] { return "line " + std::to_string(line) + ": "; };
    QAPair qa;
    qa.question = require(obj, "question", line).get<std::string>();
    qa.answer = require(obj, "answer", line).get<std::string>();
    std::string source = obj.value("source", std::string("annotated"));
    if (source == "annotated") {
      qa.source = QASource::annotated;
    } else if (source == "augmented") {
      qa.source = QASource::augmented;
    } else {
      throw ParseError(where() + "unknown source \"" + source + "\"");
    }
    if (corpus && obj.contains("doc_id") && obj.contains("char_start")) {
      std::string doc_id = obj.at("doc_id").get<std::string>();
      auto doc = corpus->find(doc_id);
      if (!doc) throw ParseError(where() + "unknown doc_id \"" + doc_id + "\"");
      auto par = obj.value("par_idx", 0u);
      const auto& paragraphs = corpus->documents[*doc].paragraphs;
      if (par >= paragraphs.size()) {
        throw ParseError(where() + "par_idx " + std::to_string(par) +
                         " out of range");
      }
      auto begin = require(obj, "char_start", line).get<std::uint32_t>();
      auto end = require(obj, "char_end", line).get<std::uint32_t>();
      auto span = char_range_to_tokens(paragraphs[par], begin, end);
      if (!span) {
        throw ParseError(where() + "character range covers no token");
      }
      std::string text = paragraphs[par].span_text(span->first, span->second);
      if (normalize_answer(text) != normalize_answer(qa.answer)) {
        throw ParseError(where() + "gold span text \"" + text +
                         "\" does not match answer \"" + qa.answer + "\"");
      }
      qa.gold = PhraseSpan{doc_id, par, span->first, span->second};
    }
    out.push_back(std::move(qa));
  });
  return out;
}

}  // namespace

std::vector<QAPair> load_qa_jsonl(std::istream& in, const Corpus& corpus) {
  return read_qa(in, &corpus);
}

std::vector<QAPair> load_qa_answers(std::istream& in) { return read_qa(in, nullptr); }

std::vector<QAPair> load_qa_answers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open QA file " + path.string());
  return load_qa_answers(in);
}

std::vector<QAPair> load_qa_jsonl(const std::filesystem::path& path,
                                  const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open QA file " + path.string());
  return load_qa_jsonl(in, corpus);
}

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& doc : corpus.documents) {
    json paragraphs = json::array();
    for (const auto& p : doc.paragraphs) paragraphs.push_back({{"text", p.text}});
    json obj = {{"id", doc.id}, {"title", doc.title}, {"paragraphs", paragraphs}};
    out << obj.dump() << '\n';
  }
}

void write_qa_jsonl(const std::vector<QAPair>& qa, const Corpus& corpus,
                    std::ostream& out) {
  for (const auto& pair : qa) {
    json obj = {{"question", pair.question},
                {"answer", pair.answer},
                {"source", pair.source == QASource::annotated ? "annotated"
                                                              : "augmented"}};
    if (pair.gold) {
      auto doc = corpus.find(pair.gold->doc_id);
      if (!doc) throw Error("unknown doc id " + pair.gold->doc_id);
      const auto& p = corpus.documents[*doc].paragraphs.at(pair.gold->paragraph);
      obj["doc_id"] = pair.gold->doc_id;
      obj["par_idx"] = pair.gold->paragraph;
      obj["char_start"] = p.tokens.at(pair.gold->start).begin;
      obj["char_end"] = p.tokens.at(pair.gold->end).end;
    }
    out << obj.dump() << '\n';
  }
}

std::vector<PhraseSpan> enumerate_phrases(const Paragraph& paragraph,
                                          std::size_t max_len,
                                          std::string_view doc_id,
                                          std::uint32_t paragraph_index) {
  if (max_len == 0) throw RangeError("enumerate_phrases: max_len must be >= 1");
  std::vector<PhraseSpan> out;
  const std::size_t m = paragraph.tokens.size();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m && j < i + max_len; ++j) {
      out.push_back({std::string(doc_id), paragraph_index,
                     static_cast<std::uint32_t>(i),
                     static_cast<std::uint32_t>(j)});
    }
  }
  return out;
}

}  // namespace dphrase
