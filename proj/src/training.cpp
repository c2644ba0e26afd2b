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

#include "dphrase/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.h"

namespace dphrase {

namespace {

constexpr char kTeacherMagic[4] = {'D', 'P', 'T', 'D'};
constexpr std::uint32_t kTeacherVersion = 1;

void check_distribution(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw Error(std::string(what) + ": invalid probability");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw Error(std::string(what) + ": probabilities sum to " +
                std::to_string(sum));
  }
}

// Gradient of the position log-likelihood: dL/dz = (P - onehot) * scale.
void add_position_gradient(const TokenMatrix& tokens,
                           std::span<const double> d_logits,
                           std::span<const double> q, TokenMatrix& d_tokens,
                           std::span<double> d_q) {
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    if (d_logits[i] == 0.0) continue;
    axpy(d_logits[i], q, d_tokens.row(i));
    axpy(d_logits[i], tokens.row(i), d_q);
  }
}

std::vector<double> position_logits(const TokenMatrix& tokens,
                                    std::span<const double> q) {
  std::vector<double> z(tokens.rows());
  for (std::size_t i = 0; i < tokens.rows(); ++i) z[i] = dot(tokens.row(i), q);
  return z;
}

std::vector<double> floored(std::span<const double> p) {
  std::vector<double> out(p.begin(), p.end());
  for (double& x : out) x = std::max(x, kTeacherFloor);
  return out;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}


}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw Error("kl_divergence: infinite divergence at position " +
                  std::to_string(i) + " (teacher must be smoothed)");
    }
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

TeacherDistribution synthetic_teacher(std::size_t m, std::size_t gold_start,
                                      std::size_t gold_end, double temperature,
                                      double noise, std::uint64_t seed) {
  if (gold_start >= m || gold_end >= m) {
    throw RangeError("synthetic_teacher: gold position out of range");
  }
  if (!(temperature > 0.0)) throw Error("synthetic_teacher: temperature <= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto make = [&](std::size_t gold) {
    std::vector<double> z(m);
    for (std::size_t i = 0; i < m; ++i) {
      z[i] = (noise * normal(rng) + (i == gold ? 1.0 : 0.0)) / temperature;
    }
    return softmax(z);
  };
  TeacherDistribution t;
  t.start = make(gold_start);
  t.end = make(gold_end);
  return t;
}

void save_teachers(const TeacherSet& teachers,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::Writer w(out);
  w.bytes(kTeacherMagic, 4);
  w.put<std::uint32_t>(kTeacherVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(teachers.size()));
  std::vector<std::uint32_t> ids;
  for (const auto& [id, _] : teachers) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  for (auto id : ids) {
    const auto& t = teachers.at(id);
    if (t.start.size() != t.end.size()) {
      throw Error("teacher " + std::to_string(id) + ": length mismatch");
    }
    w.put<std::uint32_t>(id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.start.size()));
    for (double x : t.start) w.put<double>(x);
    for (double x : t.end) w.put<double>(x);
  }
  w.check();
}

TeacherSet load_teachers(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open teacher file " + path.string());
  io::Reader r(in, "teacher file " + path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kTeacherMagic, 4) != 0) {
    throw IoError(r.what() + ": bad magic");
  }
  if (auto v = r.get<std::uint32_t>(); v != kTeacherVersion) {
    throw IoError(r.what() + ": unsupported version " + std::to_string(v));
  }
  auto count = r.get<std::uint32_t>();
  TeacherSet out;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto id = r.get<std::uint32_t>();
    auto m = r.get<std::uint32_t>();
    TeacherDistribution t{std::vector<double>(m), std::vector<double>(m)};
    r.bytes(t.start.data(), m * sizeof(double));
    r.bytes(t.end.data(), m * sizeof(double));
    out.emplace(id, std::move(t));
  }
  return out;
}

PassageLoss single_passage_loss(const TokenMatrix& tokens,
                                const QuestionEmbedding& q,
                                std::size_t gold_start, std::size_t gold_end) {
  const std::size_t m = tokens.rows();
  if (m == 0) throw Error("single_passage_loss: empty passage");
  if (gold_start >= m || gold_end >= m) {
    throw RangeError("single_passage_loss: gold position out of range");
  }
  PassageLoss out;
  out.d_tokens = TokenMatrix(m, tokens.cols());
  out.d_start.assign(tokens.cols(), 0.0);
  out.d_end.assign(tokens.cols(), 0.0);

  auto z_start = position_logits(tokens, q.start);
  auto z_end = position_logits(tokens, q.end);
  auto log_start = log_softmax(z_start);
  auto log_end = log_softmax(z_end);
  out.loss = -(log_start[gold_start] + log_end[gold_end]) / 2.0;
  out.p_start = softmax(z_start);
  out.p_end = softmax(z_end);

  std::vector<double> g_start(m), g_end(m);
  for (std::size_t i = 0; i < m; ++i) {
    g_start[i] = (out.p_start[i] - (i == gold_start ? 1.0 : 0.0)) / 2.0;
    g_end[i] = (out.p_end[i] - (i == gold_end ? 1.0 : 0.0)) / 2.0;
  }
  add_position_gradient(tokens, g_start, q.start, out.d_tokens, out.d_start);
  add_position_gradient(tokens, g_end, q.end, out.d_tokens, out.d_end);
  return out;
}

double distill_loss(std::span<const double> p_start,
                    std::span<const double> p_end,
                    std::span<const double> teacher_start,
                    std::span<const double> teacher_end) {
  const std::size_t m = p_start.size();
  if (p_end.size() != m || teacher_start.size() != m ||
      teacher_end.size() != m) {
    throw Error("distill_loss: distributions over different position counts");
  }
  check_distribution(p_start, "distill_loss student start");
  check_distribution(p_end, "distill_loss student end");
  check_distribution(teacher_start, "distill_loss teacher start");
  check_distribution(teacher_end, "distill_loss teacher end");
  return (kl_divergence(p_start, teacher_start) +
          kl_divergence(p_end, teacher_end)) /
         2.0;
}

PassageLoss distill_passage_loss(const TokenMatrix& tokens,
                                 const QuestionEmbedding& q,
                                 const TeacherDistribution& teacher) {
  const std::size_t m = tokens.rows();
  if (m == 0) throw Error("distill_passage_loss: empty passage");
  if (teacher.start.size() != m || teacher.end.size() != m) {
    throw Error("distill_passage_loss: teacher covers " +
                std::to_string(teacher.start.size()) + " positions, passage has " +
                std::to_string(m));
  }
  PassageLoss out;
  out.d_tokens = TokenMatrix(m, tokens.cols());
  out.d_start.assign(tokens.cols(), 0.0);
  out.d_end.assign(tokens.cols(), 0.0);

  auto z_start = position_logits(tokens, q.start);
  auto z_end = position_logits(tokens, q.end);
  out.p_start = softmax(z_start);
  out.p_end = softmax(z_end);
  auto log_start = log_softmax(z_start);
  auto log_end = log_softmax(z_end);
  auto t_start = floored(teacher.start);
  auto t_end = floored(teacher.end);

  // KL(P || T) over log-probabilities; d/dz_k = P_k (log P_k - log T_k - KL).
  auto side = [&](std::span<const double> p, std::span<const double> logp,
                  std::span<const double> t, std::span<double> grad) {
    double kl = 0.0;
    for (std::size_t i = 0; i < m; ++i) kl += p[i] * (logp[i] - std::log(t[i]));
    for (std::size_t i = 0; i < m; ++i) {
      grad[i] = p[i] * (logp[i] - std::log(t[i]) - kl) / 2.0;
    }
    return kl;
  };
  std::vector<double> g_start(m), g_end(m);
  double kl_start = side(out.p_start, log_start, t_start, g_start);
  double kl_end = side(out.p_end, log_end, t_end, g_end);
  out.loss = (kl_start + kl_end) / 2.0;
  add_position_gradient(tokens, g_start, q.start, out.d_tokens, out.d_start);
  add_position_gradient(tokens, g_end, q.end, out.d_tokens, out.d_end);
  return out;
}

void PrebatchQueue::push(const MatrixD& g_start, const MatrixD& g_end) {
  if (capacity_ == 0) return;
  if (g_start.rows() != g_end.rows() || g_start.cols() != g_end.cols()) {
    throw Error("PrebatchQueue::push: start/end shapes differ");
  }
  if (!entries_.empty() && entries_.front().start.cols() != g_start.cols()) {
    throw Error("PrebatchQueue::push: dimension differs from cached entries");
  }
  entries_.push_back({g_start, g_end});
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::size_t PrebatchQueue::cached_rows() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.start.rows();
  return n;
}

std::pair<MatrixD, MatrixD> gold_vectors(std::span<const BatchExample> batch) {
  if (batch.empty()) throw Error("gold_vectors: empty batch");
  const std::size_t d = batch.front().tokens->cols();
  MatrixD g_start(0, d), g_end(0, d);
  for (const auto& ex : batch) {
    if (ex.tokens->cols() != d) throw Error("gold_vectors: dimension mismatch");
    if (ex.gold_start >= ex.tokens->rows() || ex.gold_end >= ex.tokens->rows()) {
      throw RangeError("gold_vectors: gold position out of range");
    }
    g_start.append_row(ex.tokens->row(ex.gold_start));
    g_end.append_row(ex.tokens->row(ex.gold_end));
  }
  return {std::move(g_start), std::move(g_end)};
}

BatchLoss batch_negative_loss(std::span<const BatchExample> batch,
                              const PrebatchQueue& queue) {
  if (batch.empty()) throw Error("batch_negative_loss: empty batch");
  const std::size_t b = batch.size();
  auto [g_start, g_end] = gold_vectors(batch);
  const std::size_t d = g_start.cols();
  for (const auto& e : queue.entries()) {
    if (e.start.cols() != d || e.end.cols() != d) {
      throw Error("batch_negative_loss: cached entry has dimension " +
                  std::to_string(e.start.cols()) + ", batch has " +
                  std::to_string(d));
    }
  }
  const std::size_t cached = queue.cached_rows();
  const std::size_t columns = b + cached;

  BatchLoss out;
  out.negatives_per_example = columns - 1;
  for (const auto& ex : batch) {
    out.d_tokens.emplace_back(ex.tokens->rows(), d);
    out.d_start.emplace_back(d, 0.0);
    out.d_end.emplace_back(d, 0.0);
  }

  // Column c < b is the current gold of example c; the rest are cached rows
  // from the oldest queue entry to the newest.
  auto column = [&](const MatrixD& current, bool start,
                    std::size_t c) -> std::span<const double> {
    if (c < b) return current.row(c);
    c -= b;
    for (const auto& e : queue.entries()) {
      const MatrixD& m = start ? e.start : e.end;
      if (c < m.rows()) return m.row(c);
      c -= m.rows();
    }
    throw RangeError("batch_negative_loss: column out of range");
  };

  const double scale = 1.0 / (2.0 * double(b));
  auto side = [&](bool start) {
    const MatrixD& g = start ? g_start : g_end;
    double loss = 0.0;
    std::vector<double> scores(columns);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& q = start ? batch[i].question->start : batch[i].question->end;
      for (std::size_t c = 0; c < columns; ++c) {
        scores[c] = dot(column(g, start, c), q);
      }
      auto logp = log_softmax(scores);
      loss -= logp[i];
      auto& d_q = start ? out.d_start[i] : out.d_end[i];
      for (std::size_t c = 0; c < columns; ++c) {
        double ds = (std::exp(logp[c]) - (c == i ? 1.0 : 0.0)) * scale;
        axpy(ds, column(g, start, c), d_q);
        if (c < b) {
          std::size_t row = start ? batch[c].gold_start : batch[c].gold_end;
          axpy(ds, q, out.d_tokens[c].row(row));
        }
      }
    }
    return loss;
  };
  double loss_start = side(true);
  double loss_end = side(false);
  out.loss = (loss_start + loss_end) * scale;
  return out;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  return w.single * c.single + w.distill * c.distill + w.negative * c.negative;
}

double clip_global_norm(std::span<const std::span<double>> grads,
                        double max_norm) {
  double sq = 0.0;
  for (auto g : grads) {
    for (double x : g) {
      if (!std::isfinite(x)) throw Error("non-finite gradient");
      sq += x * x;
    }
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (auto g : grads) {
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads,
               OptimizerState& state) {
  if (params.size() != grads.size()) throw Error("adam_step: tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size()) {
      throw Error("adam_step: gradient shape mismatch for tensor " +
                  std::to_string(k));
    }
  }
  if (state.first_moment.empty()) {
    for (auto p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw Error("adam_step: optimizer state does not match parameters");
  }
  clip_global_norm(grads, state.config.clip_norm);

  const auto& c = state.config;
  ++state.step;
  const double bias1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != params[k].size()) {
      // Tensors may grow (vocabulary extension); new rows start with zero
      // moments.
      m.resize(params[k].size(), 0.0);
      v.resize(params[k].size(), 0.0);
    }
    auto p = params[k];
    auto g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      double m_hat = m[i] / bias1;
      double v_hat = v[i] / bias2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void adam_step(EncoderWeights& params, EncoderWeights& grads,
               OptimizerState& state, std::optional<ParamSide> only) {
  std::vector<std::span<double>> p, g;
  params.visit([&](const char*, ParamSide side, MatrixD& m) {
    if (!only || side == *only) p.push_back(m.flat());
  });
  grads.visit([&](const char*, ParamSide side, MatrixD& m) {
    if (!only || side == *only) g.push_back(m.flat());
  });
  adam_step(p, g, state);
}

ConfigMap parse_config(std::istream& in) {
  ConfigMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto sep = line.find_first_of("=:");
    if (sep == std::string::npos) sep = line.find_first_of(" \t");
    if (sep == std::string::npos) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    std::string key = trim(line.substr(0, sep));
    std::string value = trim(line.substr(sep + 1));
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (key.empty() || value.empty()) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected key = value");
    }
    map[key] = value;
  }
  return map;
}

ConfigMap parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse_config(in);
}

void validate_config_keys(const ConfigMap& map) {
  static const std::set<std::string> known = {
      "batch_size",   "prebatch_c",     "epochs",          "warmup_epochs",
      "lr",           "lambda1",        "lambda2",         "lambda3",
      "seed",         "clip_norm",      "dim",             "window",
      "qsft_top_k",   "qsft_lr",        "qsft_batch_size", "qsft_epochs",
      "qsft_seed",    "max_span_len",   "n_probe",      "top_k"};
  for (const auto& [key, _] : map) {
    if (!known.contains(key)) throw ParseError("unknown config key \"" + key + "\"");
  }
}

TrainConfig TrainConfig::from_map(const ConfigMap& map) {
  validate_config_keys(map);
  TrainConfig c;
  c.batch_size = config_value(map, "batch_size", c.batch_size);
  c.prebatch = config_value(map, "prebatch_c", c.prebatch);
  c.epochs = config_value(map, "epochs", c.epochs);
  c.warmup_epochs = config_value(map, "warmup_epochs", c.epochs / 2);
  c.lr = config_value(map, "lr", c.lr);
  c.weights.single = config_value(map, "lambda1", c.weights.single);
  c.weights.distill = config_value(map, "lambda2", c.weights.distill);
  c.weights.negative = config_value(map, "lambda3", c.weights.negative);
  c.seed = config_value(map, "seed", c.seed);
  c.clip_norm = config_value(map, "clip_norm", c.clip_norm);
  c.dim = config_value(map, "dim", c.dim);
  c.window = config_value(map, "window", c.window);
  return c;
}

Vocabulary training_vocabulary(const Corpus& corpus,
                               std::span<const QAPair> qa) {
  Vocabulary vocab = corpus.vocab;
  for (const auto& pair : qa) {
    for (const auto& tok : tokenize(pair.question)) vocab.add(tok.text);
  }
  return vocab;
}

std::vector<TrainingExample> make_training_examples(
    const EncoderParams& params, const Corpus& corpus,
    std::span<const QAPair> qa, const TeacherSet* teachers) {
  std::vector<TrainingExample> out;
  for (std::size_t k = 0; k < qa.size(); ++k) {
    const auto& pair = qa[k];
    if (!pair.gold) continue;
    auto doc = corpus.find(pair.gold->doc_id);
    if (!doc) throw Error("QA pair references unknown document " + pair.gold->doc_id);
    const auto& paragraph = corpus.documents[*doc].paragraphs.at(pair.gold->paragraph);
    TrainingExample ex;
    ex.id = static_cast<std::uint32_t>(k);
    for (const auto& t : paragraph.tokens) {
      ex.passage.push_back(params.vocab.lookup(corpus.vocab.token(t.id)));
    }
    ex.question = question_token_ids(params, pair.question);
    if (ex.question.empty()) {
      throw Error("QA pair " + std::to_string(k) + " has an empty question");
    }
    ex.gold_start = pair.gold->start;
    ex.gold_end = pair.gold->end;
    if (ex.gold_start > ex.gold_end || ex.gold_end >= ex.passage.size()) {
      throw RangeError("QA pair " + std::to_string(k) + ": gold span out of range");
    }
    if (teachers) {
      if (auto it = teachers->find(ex.id); it != teachers->end()) {
        if (it->second.start.size() != ex.passage.size() ||
            it->second.end.size() != ex.passage.size()) {
          throw Error("teacher for example " + std::to_string(k) +
                      " does not match its passage length");
        }
        check_distribution(it->second.start, "teacher start");
        check_distribution(it->second.end, "teacher end");
        ex.teacher = &it->second;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

BatchObjective batch_objective(const EncoderParams& params,
                               std::span<const TrainingExample* const> batch,
                               const PrebatchQueue* queue,
                               const LossWeights& weights,
                               EncoderWeights* grads) {
  if (batch.empty()) throw Error("batch_objective: empty batch");
  const std::size_t b = batch.size();
  const std::size_t d = params.dim;

  std::vector<TokenMatrix> tokens;
  std::vector<QuestionEmbedding> questions;
  tokens.reserve(b);
  questions.reserve(b);
  for (const auto* ex : batch) {
    tokens.push_back(encode_passage(params, ex->passage));
    questions.push_back(encode_question(params, ex->question));
  }

  std::vector<TokenMatrix> d_tokens;
  std::vector<std::vector<double>> d_start(b, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> d_end(b, std::vector<double>(d, 0.0));
  for (const auto& t : tokens) d_tokens.emplace_back(t.rows(), d);
  auto accumulate = [&](std::size_t i, double w, const TokenMatrix& dt,
                        std::span<const double> ds, std::span<const double> de) {
    axpy(w, dt.flat(), d_tokens[i].flat());
    axpy(w, ds, d_start[i]);
    axpy(w, de, d_end[i]);
  };

  BatchObjective out;
  if (weights.single != 0.0) {
    for (std::size_t i = 0; i < b; ++i) {
      auto r = single_passage_loss(tokens[i], questions[i], batch[i]->gold_start,
                                   batch[i]->gold_end);
      out.components.single += r.loss / double(b);
      accumulate(i, weights.single / double(b), r.d_tokens, r.d_start, r.d_end);
    }
  }
  if (weights.distill != 0.0) {
    std::size_t with_teacher = 0;
    for (const auto* ex : batch) with_teacher += ex->teacher ? 1 : 0;
    for (std::size_t i = 0; i < b && with_teacher > 0; ++i) {
      if (!batch[i]->teacher) continue;
      auto r = distill_passage_loss(tokens[i], questions[i], *batch[i]->teacher);
      out.components.distill += r.loss / double(with_teacher);
      accumulate(i, weights.distill / double(with_teacher), r.d_tokens, r.d_start,
                 r.d_end);
    }
  }
  std::vector<BatchExample> views(b);
  for (std::size_t i = 0; i < b; ++i) {
    views[i] = {&tokens[i], &questions[i], batch[i]->gold_start,
                batch[i]->gold_end};
  }
  if (weights.negative != 0.0) {
    static const PrebatchQueue kEmpty(0);
    auto r = batch_negative_loss(views, queue ? *queue : kEmpty);
    out.components.negative = r.loss;
    for (std::size_t i = 0; i < b; ++i) {
      accumulate(i, weights.negative, r.d_tokens[i], r.d_start[i], r.d_end[i]);
    }
  }
  out.total = total_loss(out.components, weights);
  std::tie(out.gold_start, out.gold_end) = gold_vectors(views);

  if (grads) {
    for (std::size_t i = 0; i < b; ++i) {
      accumulate_passage_gradients(params, batch[i]->passage, d_tokens[i], *grads);
      accumulate_question_gradients(params, batch[i]->question, d_start[i],
                                    d_end[i], *grads);
    }
  }
  return out;
}

TrainResult train_phrase_encoders(const Corpus& corpus,
                                  std::span<const QAPair> qa,
                                  const TrainConfig& config,
                                  const TeacherSet* teachers) {
  EncoderParams params =
      init_encoder(training_vocabulary(corpus, qa),
                   EncoderConfig{config.dim, config.window, config.seed});
  return train_phrase_encoders(std::move(params), corpus, qa, config, teachers);
}

TrainResult train_phrase_encoders(EncoderParams params, const Corpus& corpus,
                                  std::span<const QAPair> qa,
                                  const TrainConfig& config,
                                  const TeacherSet* teachers) {
  if (config.batch_size == 0) throw Error("batch_size must be positive");
  auto examples = make_training_examples(params, corpus, qa, teachers);
  if (examples.empty()) throw Error("no training examples with gold spans");

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  PrebatchQueue queue(config.prebatch);
  OptimizerState state;
  state.config.lr = config.lr;
  state.config.clip_norm = config.clip_norm;
  EncoderWeights grads = params.weights.zeros_like();

  TrainResult result;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool prebatch_active =
        epoch >= config.warmup_epochs && config.prebatch > 0;
    EpochStats stats;
    stats.epoch = epoch;
    stats.prebatch_active = prebatch_active;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<const TrainingExample*> batch;
      for (std::size_t k = first; k < last; ++k) batch.push_back(&examples[order[k]]);

      grads.visit([](const char*, ParamSide, MatrixD& m) { m.set_zero(); });
      auto obj = batch_objective(params, batch, prebatch_active ? &queue : nullptr,
                                 config.weights, &grads);
      adam_step(params.weights, grads, state);
      if (config.weights.negative != 0.0) queue.push(obj.gold_start, obj.gold_end);

      stats.mean_loss += obj.total;
      stats.mean_components.single += obj.components.single;
      stats.mean_components.distill += obj.components.distill;
      stats.mean_components.negative += obj.components.negative;
      ++stats.batches;
    }
    double n = double(stats.batches);
    stats.mean_loss /= n;
    stats.mean_components.single /= n;
    stats.mean_components.distill /= n;
    stats.mean_components.negative /= n;
    result.epochs.push_back(stats);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace dphrase
