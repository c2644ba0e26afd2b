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

#include "dphrase/eval.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dphrase {

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

constexpr std::size_t kMinMeasuredBatches = 10;

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double pos = p * double(v.size() - 1);
  auto lo = std::size_t(pos);
  auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int exact_match(std::string_view prediction, std::span<const std::string> golds) {
  const auto p = normalize_answer(prediction);
  for (const auto& g : golds) {
    if (normalize_answer(g) == p) return 1;
  }
  return 0;
}

double token_f1(std::string_view prediction, std::span<const std::string> golds) {
  const auto pred = split_words(normalize_answer(prediction));
  double best = 0.0;
  for (const auto& g : golds) {
    const auto gold = split_words(normalize_answer(g));
    if (pred.empty() || gold.empty()) {
      best = std::max(best, pred == gold ? 1.0 : 0.0);
      continue;
    }
    std::map<std::string, int> counts;
    for (const auto& w : gold) ++counts[w];
    int common = 0;
    for (const auto& w : pred) {
      auto it = counts.find(w);
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    }
    if (common == 0) continue;
    double precision = double(common) / double(pred.size());
    double recall = double(common) / double(gold.size());
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

double EvalReport::accuracy_at(std::size_t k) const {
  for (const auto& [kk, acc] : topk_accuracy) {
    if (kk == k) return acc;
  }
  throw RangeError("EvalReport: accuracy@" + std::to_string(k) + " not computed");
}

std::string EvalReport::to_json(bool with_examples) const {
  nlohmann::json j;
  j["total"] = total;
  j["evaluated"] = evaluated;
  j["skipped"] = skipped;
  j["exact_match"] = exact_match;
  j["f1"] = f1;
  auto& acc = j["top_k_accuracy"] = nlohmann::json::object();
  for (const auto& [k, a] : topk_accuracy) acc[std::to_string(k)] = a;
  if (with_examples) {
    auto& ex = j["examples"] = nlohmann::json::array();
    for (const auto& e : examples) {
      ex.push_back({{"question", e.question},
                    {"answer", e.answer},
                    {"prediction", e.prediction},
                    {"score", e.score},
                    {"exact_match", e.exact_match},
                    {"f1", e.f1},
                    {"first_hit", e.first_hit},
                    {"skipped", e.skipped},
                    {"error", e.error}});
    }
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %10s\n", "metric", "value");
  out << line;
  std::snprintf(line, sizeof line, "%-16s %10zu\n", "questions", total);
  out << line;
  std::snprintf(line, sizeof line, "%-16s %10zu\n", "skipped", skipped);
  out << line;
  std::snprintf(line, sizeof line, "%-16s %10.4f\n", "exact_match", exact_match);
  out << line;
  std::snprintf(line, sizeof line, "%-16s %10.4f\n", "f1", f1);
  out << line;
  for (const auto& [k, a] : topk_accuracy) {
    std::string name = "accuracy@" + std::to_string(k);
    std::snprintf(line, sizeof line, "%-16s %10.4f\n", name.c_str(), a);
    out << line;
  }
  return out.str();
}

EvalReport retrieval_accuracy(const PhraseDump& dump, const IvfIndex& ivf,
                              const EncoderParams& params,
                              std::span<const QAPair> qa,
                              const SearchConfig& config,
                              std::span<const std::size_t> ks) {
  if (qa.empty()) throw Error("retrieval_accuracy: empty QA set");
  std::vector<std::size_t> sorted_ks(ks.begin(), ks.end());
  if (sorted_ks.empty()) sorted_ks.push_back(1);
  std::sort(sorted_ks.begin(), sorted_ks.end());
  sorted_ks.erase(std::unique(sorted_ks.begin(), sorted_ks.end()), sorted_ks.end());
  if (sorted_ks.front() == 0) throw RangeError("retrieval_accuracy: k must be >= 1");

  SearchConfig sc = config;
  sc.final_count = std::max(sc.final_count, sorted_ks.back());

  EvalReport report;
  report.total = qa.size();
  std::vector<std::size_t> hits(sorted_ks.size(), 0);
  for (const auto& pair : qa) {
    ExampleRecord rec;
    rec.question = pair.question;
    rec.answer = pair.answer;
    const std::string golds[1] = {pair.answer};
    try {
      auto results = search(dump, ivf, params, pair.question, sc);
      for (std::size_t r = 0; r < results.size(); ++r) {
        if (exact_match(results[r].text, golds)) {
          rec.first_hit = r + 1;
          break;
        }
      }
      if (!results.empty()) {
        rec.prediction = results.front().text;
        rec.score = results.front().score;
      }
      rec.exact_match = exact_match(rec.prediction, golds);
      rec.f1 = token_f1(rec.prediction, golds);
      ++report.evaluated;
      report.exact_match += rec.exact_match;
      report.f1 += rec.f1;
      for (std::size_t i = 0; i < sorted_ks.size(); ++i) {
        if (rec.first_hit != 0 && rec.first_hit <= sorted_ks[i]) ++hits[i];
      }
    } catch (const std::exception& e) {
      rec.skipped = true;
      rec.error = e.what();
      ++report.skipped;
    }
    report.examples.push_back(std::move(rec));
  }
  const double denom = report.evaluated ? double(report.evaluated) : 1.0;
  report.exact_match /= denom;
  report.f1 /= denom;
  for (std::size_t i = 0; i < sorted_ks.size(); ++i) {
    report.topk_accuracy.emplace_back(sorted_ks[i], double(hits[i]) / denom);
  }
  return report;
}

BenchResult benchmark_qps(const PhraseDump& dump, const IvfIndex& ivf,
                          const EncoderParams& params,
                          std::span<const std::string> questions,
                          const SearchConfig& search_config,
                          const BenchConfig& config) {
  if (questions.empty()) throw Error("benchmark: no questions");
  if (config.batch_size == 0 || config.runs == 0) {
    throw RangeError("benchmark: batch size and runs must be >= 1");
  }
  const std::size_t total =
      config.batches ? config.batches
                     : std::max((questions.size() + config.batch_size - 1) / config.batch_size,
                                config.warmup + kMinMeasuredBatches);
  if (total <= config.warmup) {
    throw RangeError("benchmark: " + std::to_string(total) +
                     " batches do not exceed the " + std::to_string(config.warmup) +
                     " warmup batches");
  }
  using clock = std::chrono::steady_clock;

  BenchResult out;
  out.batch_size = config.batch_size;
  out.total_batches = total;
  std::vector<std::vector<double>> latencies(config.runs);
  std::vector<std::string> batch(config.batch_size);
  for (std::size_t run = 0; run < config.runs; ++run) {
    std::size_t cursor = 0;
    double seconds = 0.0;
    std::size_t counted = 0, counted_batches = 0;
    for (std::size_t b = 0; b < total; ++b) {
      for (auto& q : batch) {
        q = questions[cursor];
        cursor = (cursor + 1) % questions.size();
      }
      auto t0 = clock::now();
      auto slots = batch_search(dump, ivf, params, batch, search_config);
      auto t1 = clock::now();
      if (slots.size() != batch.size()) throw Error("benchmark: lost results");
      if (b < config.warmup) continue;
      double dt = std::chrono::duration<double>(t1 - t0).count();
      seconds += dt;
      counted += batch.size();
      ++counted_batches;
      latencies[run].push_back(dt * 1000.0);
    }
    out.measured_batches = counted_batches;
    out.measured_questions = counted;
    out.run_qps.push_back(seconds > 0.0 ? double(counted) / seconds : 0.0);
  }
  std::vector<std::size_t> idx(config.runs);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return out.run_qps[a] < out.run_qps[b]; });
  const std::size_t median = idx[idx.size() / 2];
  out.qps = out.run_qps[median];
  out.p50_latency_ms = percentile(latencies[median], 0.50);
  out.p99_latency_ms = percentile(latencies[median], 0.99);
  return out;
}

std::string bench_csv(const BenchResult& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%zu,%.3f,%.3f,%.3f\n", r.batch_size, r.qps,
                r.p50_latency_ms, r.p99_latency_ms);
  return std::string("batch_size,qps,p50_latency_ms,p99_latency_ms\n") + line;
}

}  // namespace dphrase
