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

#include "dphrase/cli.h"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dphrase/eval.h"
#include "dphrase/filter.h"
#include "dphrase/index.h"
#include "dphrase/json_io.h"
#include "dphrase/qsft.h"
#include "dphrase/search.h"
#include "dphrase/service.h"
#include "dphrase/training.h"
#include "json.hpp"

namespace dphrase {

namespace {

using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Config file values overlaid with whatever flags were given.
struct Settings {
  std::string config_path;
  ConfigMap overrides;

  ConfigMap resolve() const {
    ConfigMap map;
    if (!config_path.empty()) map = parse_config_file(config_path);
    for (const auto& [k, v] : overrides) map[k] = v;
    validate_config_keys(map);
    return map;
  }
};

void add_config(CLI::App* app, Settings& s) {
  app->add_option("--config", s.config_path, "key = value config file")
      ->check(CLI::ExistingFile);
}

void add_override(CLI::App* app, Settings& s, const std::string& flag,
                  const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&s, key](const std::string& v) { s.overrides[key] = v; }, help);
}

SearchConfig search_config_from(const ConfigMap& map, std::size_t k) {
  SearchConfig sc;
  sc.final_count = k;
  sc.top_k = std::max(config_value<std::size_t>(map, "top_k", sc.top_k), k);
  sc.max_span_len = config_value(map, "max_span_len", sc.max_span_len);
  sc.n_probe = config_value(map, "n_probe", sc.n_probe);
  sc.validate();
  return sc;
}

void add_search_overrides(CLI::App* app, Settings& s) {
  add_override(app, s, "--top-k", "top_k", "start/end candidates per query");
  add_override(app, s, "--n-probe", "n_probe", "clusters probed (0 = index default)");
  add_override(app, s, "--max-span-len", "max_span_len", "maximum span length in tokens");
}

LoadedIndex load_with_raw(const std::string& path) {
  auto index = load_index(path);
  auto raw = raw_sidecar_path(path);
  if (std::filesystem::exists(raw)) load_raw_vectors(index.dump, raw);
  return index;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0) {
      throw UsageError("--ks expects comma-separated positive integers");
    }
    ks.push_back(v);
  }
  if (ks.empty()) throw UsageError("--ks is empty");
  return ks;
}

// --- subcommands -----------------------------------------------------------

struct TrainArgs {
  Settings settings;
  std::string corpus, qa, teachers, out;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  auto cfg = TrainConfig::from_map(a.settings.resolve());
  auto corpus = ingest_jsonl(a.corpus);
  auto qa = load_qa_jsonl(a.qa, corpus);
  TeacherSet teachers;
  if (!a.teachers.empty()) teachers = load_teachers(a.teachers);
  auto result = train_phrase_encoders(corpus, qa, cfg, a.teachers.empty() ? nullptr : &teachers);
  save_checkpoint(result.params, a.out);
  for (const auto& e : result.epochs) {
    out << json{{"epoch", e.epoch},
                {"loss", e.mean_loss},
                {"single", e.mean_components.single},
                {"distill", e.mean_components.distill},
                {"negative", e.mean_components.negative},
                {"prebatch", e.prebatch_active}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

struct BuildArgs {
  std::string corpus, encoder, out, quant = "sq8";
  std::size_t clusters = 0, n_probe = 0, iterations = 20;
  std::uint64_t seed = 0;
  bool keep_raw = false;
};

int run_build(const BuildArgs& a, std::ostream& out) {
  auto corpus = ingest_jsonl(a.corpus);
  auto params = load_checkpoint(a.encoder);
  auto dump = build_phrase_dump(params, corpus);
  if (a.quant == "sq8") quantize_dump(dump, a.keep_raw);
  std::size_t clusters = a.clusters;
  if (clusters == 0) {
    clusters = std::max<std::size_t>(1, std::size_t(std::sqrt(double(dump.size()))));
  }
  auto ivf = build_ivf(dump, clusters, {a.iterations, a.seed});
  if (a.n_probe) ivf.n_probe = std::min(a.n_probe, clusters);
  save_index(dump, ivf, a.out);
  if (a.keep_raw) save_raw_vectors(dump, raw_sidecar_path(a.out));
  out << json{{"rows", dump.size()},
              {"dim", dump.dim},
              {"quant_mode", to_string(dump.mode)},
              {"clusters", ivf.n_clusters()},
              {"n_probe", ivf.n_probe},
              {"payload_bytes", payload_bytes(dump)}}
             .dump()
      << '\n';
  return kExitOk;
}

struct FilterArgs {
  Settings settings;
  std::string corpus, index, encoder, qa, dev_qa, out;
  double max_drop = 0.01;
  FilterTrainConfig train;
  std::size_t clusters = 0, iterations = 20;
  std::uint64_t seed = 0;
};

int run_filter(const FilterArgs& a, std::ostream& out) {
  auto map = a.settings.resolve();
  const std::size_t max_span_len = config_value<std::size_t>(map, "max_span_len", 20);
  auto corpus = ingest_jsonl(a.corpus);
  auto train_qa = load_qa_jsonl(a.qa, corpus);
  auto dev_qa = a.dev_qa.empty() ? train_qa : load_qa_jsonl(a.dev_qa, corpus);
  auto index = load_with_raw(a.index);
  auto params = load_checkpoint(a.encoder);

  auto labels = filter_labels(index.dump, train_qa);
  auto filter = train_filter(index.dump.vectors, labels, a.train);
  auto selection =
      select_filter_threshold(index.dump, filter, dev_qa, params, a.max_drop, max_span_len);
  filter.threshold = selection.threshold;
  auto logits = compute_filter_logits(index.dump, filter);
  index.dump.filter_logits = logits;
  auto filtered = apply_filter(index.dump, logits, filter.threshold);

  std::size_t clusters = a.clusters ? a.clusters : index.ivf.n_clusters();
  clusters = std::min(clusters, filtered.dump.size());
  auto ivf = build_ivf(filtered.dump, clusters, {a.iterations, a.seed});
  ivf.n_probe = std::min(index.ivf.n_probe, clusters);
  save_index(filtered.dump, ivf, a.out);
  if (filtered.dump.raw) save_raw_vectors(filtered.dump, raw_sidecar_path(a.out));
  out << json{{"threshold", selection.threshold},
              {"rows_before", index.dump.size()},
              {"rows_after", filtered.dump.size()},
              {"unfiltered_accuracy", selection.unfiltered_accuracy},
              {"filtered_accuracy", selection.filtered_accuracy}}
             .dump()
      << '\n';
  return kExitOk;
}

struct QsftArgs {
  Settings settings;
  std::string index, encoder, qa, out;
  bool no_extend = false;
};

int run_qsft(const QsftArgs& a, std::ostream& out, std::ostream& err) {
  auto cfg = QsftConfig::from_map(a.settings.resolve());
  auto index = load_with_raw(a.index);
  if (index.dump.mode == QuantMode::sq8 && !index.dump.raw) {
    err << "warning: no float32 sidecar next to " << a.index
        << "; fine-tuning against dequantized vectors\n";
  }
  auto params = load_checkpoint(a.encoder);
  auto qa = load_qa_answers(a.qa);
  if (!a.no_extend) {
    std::vector<std::string> words;
    for (const auto& p : qa) {
      for (const auto& t : tokenize(p.question)) words.push_back(t.text);
    }
    extend_vocabulary(params, words);
  }
  auto result = qsft_train(index.dump, index.ivf, std::move(params), qa, cfg);
  save_checkpoint(result.params, a.out);
  for (const auto& e : result.epochs) {
    out << json{{"epoch", e.epoch},
                {"loss", e.mean_loss},
                {"examples", e.examples},
                {"skipped", e.skipped}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

struct SearchArgs {
  Settings settings;
  std::string index, encoder, question;
  std::size_t k = 10;
};

int run_search(const SearchArgs& a, std::ostream& out) {
  auto sc = search_config_from(a.settings.resolve(), a.k);
  auto index = load_index(a.index);
  auto params = load_checkpoint(a.encoder);
  auto results = search(index.dump, index.ivf, params, a.question, sc);
  for (const auto& r : results) out << result_to_json(r).dump() << '\n';
  return kExitOk;
}

struct EvalArgs {
  Settings settings;
  std::string index, encoder, qa, ks = "1,5,10", format = "table";
  bool examples = false;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
  auto ks = parse_ks(a.ks);
  auto sc = search_config_from(a.settings.resolve(), *std::max_element(ks.begin(), ks.end()));
  auto index = load_index(a.index);
  auto params = load_checkpoint(a.encoder);
  auto qa = load_qa_answers(a.qa);
  auto report = retrieval_accuracy(index.dump, index.ivf, params, qa, sc, ks);
  if (a.format == "json") {
    out << report.to_json(a.examples) << '\n';
  } else {
    out << report.to_table();
  }
  return kExitOk;
}

struct BenchArgs {
  Settings settings;
  std::string index, encoder, qa, questions;
  std::size_t k = 10;
  BenchConfig bench;
};

int run_bench(const BenchArgs& a, std::ostream& out) {
  if (a.qa.empty() == a.questions.empty()) {
    throw UsageError("bench needs exactly one of --qa or --questions");
  }
  auto sc = search_config_from(a.settings.resolve(), a.k);
  auto index = load_index(a.index);
  auto params = load_checkpoint(a.encoder);
  std::vector<std::string> questions;
  if (!a.qa.empty()) {
    for (const auto& p : load_qa_answers(a.qa)) questions.push_back(p.question);
  } else {
    questions = read_lines(a.questions);
  }
  auto result = benchmark_qps(index.dump, index.ivf, params, questions, sc, a.bench);
  out << bench_csv(result);
  return kExitOk;
}

struct ServeArgs {
  Settings settings;
  std::string index, encoder, bind;
  std::size_t default_k = 10, max_k = 100, max_batch = 64;
  double timeout = 30.0;
  bool quiet = false;
};

int run_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  ServiceConfig cfg;
  auto map = a.settings.resolve();
  cfg.search = search_config_from(map, 1);
  cfg.apply_environment();
  if (!a.bind.empty()) std::tie(cfg.host, cfg.port) = parse_bind_address(a.bind);
  if (!a.index.empty()) cfg.index_path = a.index;
  if (cfg.index_path.empty()) throw UsageError("serve needs --index or DPHRASE_INDEX");
  cfg.encoder_path = a.encoder;
  cfg.default_k = a.default_k;
  cfg.max_k = a.max_k;
  cfg.max_batch = a.max_batch;
  cfg.timeout_seconds = a.timeout;
  cfg.log = a.quiet ? nullptr : &err;
  auto service = SearchService::load(cfg);
  out << "serving " << cfg.index_path.string() << " on " << cfg.host << ":" << cfg.port
      << std::endl;
  service->run();
  return kExitOk;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out,
                 std::ostream& err) {
  CLI::App app{"Dense phrase retrieval: train, index, search and serve"};
  app.name("dphrase");
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the phrase and question encoders");
  add_config(t, train.settings);
  t->add_option("--corpus", train.corpus, "corpus JSONL")->required();
  t->add_option("--qa", train.qa, "QA JSONL with gold spans")->required();
  t->add_option("--teachers", train.teachers, "teacher distribution file");
  t->add_option("--out", train.out, "checkpoint to write")->required();
  add_override(t, train.settings, "--epochs", "epochs", "training epochs");
  add_override(t, train.settings, "--batch-size", "batch_size", "mini-batch size");
  add_override(t, train.settings, "--prebatch", "prebatch_c", "cached batches (0 disables)");
  add_override(t, train.settings, "--warmup-epochs", "warmup_epochs", "epochs before the queue is used");
  add_override(t, train.settings, "--lr", "lr", "Adam learning rate");
  add_override(t, train.settings, "--seed", "seed", "random seed");
  add_override(t, train.settings, "--dim", "dim", "vector dimension");
  add_override(t, train.settings, "--window", "window", "context window");

  BuildArgs build;
  auto* b = app.add_subcommand("build-index", "encode a corpus into an index file");
  b->add_option("--corpus", build.corpus, "corpus JSONL")->required();
  b->add_option("--encoder", build.encoder, "encoder checkpoint")->required();
  b->add_option("--out", build.out, "index file to write")->required();
  b->add_option("--quant", build.quant, "none or sq8")->check(CLI::IsMember({"none", "sq8"}));
  b->add_option("--clusters", build.clusters, "IVF clusters (0 = sqrt(N))");
  b->add_option("--n-probe", build.n_probe, "default clusters probed (0 = a quarter)");
  b->add_option("--kmeans-iters", build.iterations, "Lloyd iterations");
  b->add_option("--seed", build.seed, "k-means seed");
  b->add_flag("--keep-raw", build.keep_raw, "write float32 originals next to the index");

  FilterArgs filter;
  auto* f = app.add_subcommand("filter", "train a token filter and shrink an index");
  add_config(f, filter.settings);
  f->add_option("--corpus", filter.corpus, "corpus JSONL")->required();
  f->add_option("--index", filter.index, "input index")->required();
  f->add_option("--encoder", filter.encoder, "encoder checkpoint")->required();
  f->add_option("--qa", filter.qa, "training QA JSONL with gold spans")->required();
  f->add_option("--dev-qa", filter.dev_qa, "QA JSONL for threshold selection");
  f->add_option("--out", filter.out, "filtered index to write")->required();
  f->add_option("--max-drop", filter.max_drop, "allowed top-1 accuracy drop");
  f->add_option("--steps", filter.train.steps, "Adam steps");
  f->add_option("--lr", filter.train.lr, "Adam learning rate");
  f->add_option("--clusters", filter.clusters, "IVF clusters of the output (0 = same)");
  f->add_option("--seed", filter.seed, "k-means seed");
  add_override(f, filter.settings, "--max-span-len", "max_span_len", "maximum span length");

  QsftArgs qsft;
  auto* q = app.add_subcommand("qsft", "fine-tune the question encoder on a fixed index");
  add_config(q, qsft.settings);
  q->add_option("--index", qsft.index, "index file")->required();
  q->add_option("--encoder", qsft.encoder, "encoder checkpoint")->required();
  q->add_option("--qa", qsft.qa, "QA JSONL (answers suffice)")->required();
  q->add_option("--out", qsft.out, "checkpoint to write")->required();
  q->add_flag("--no-extend", qsft.no_extend, "do not add unseen question words");
  add_override(q, qsft.settings, "--top-k", "qsft_top_k", "retrieved results per question");
  add_override(q, qsft.settings, "--epochs", "qsft_epochs", "epochs");
  add_override(q, qsft.settings, "--lr", "qsft_lr", "Adam learning rate");
  add_override(q, qsft.settings, "--batch-size", "qsft_batch_size", "questions per step");
  add_override(q, qsft.settings, "--seed", "qsft_seed", "shuffle seed");

  SearchArgs srch;
  auto* s = app.add_subcommand("search", "answer one question");
  add_config(s, srch.settings);
  s->add_option("--index", srch.index, "index file")->required();
  s->add_option("--encoder", srch.encoder, "encoder checkpoint")->required();
  s->add_option("-q,--question", srch.question, "question text")->required();
  s->add_option("-k", srch.k, "results to print")->check(CLI::PositiveNumber);
  add_search_overrides(s, srch.settings);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "top-k retrieval accuracy, EM and F1");
  add_config(e, ev.settings);
  e->add_option("--index", ev.index, "index file")->required();
  e->add_option("--encoder", ev.encoder, "encoder checkpoint")->required();
  e->add_option("--qa", ev.qa, "QA JSONL")->required();
  e->add_option("--ks", ev.ks, "comma-separated cutoffs");
  e->add_option("--format", ev.format, "table or json")->check(CLI::IsMember({"table", "json"}));
  e->add_flag("--examples", ev.examples, "include per-question records in JSON");
  add_search_overrides(e, ev.settings);

  BenchArgs bench;
  auto* be = app.add_subcommand("bench", "throughput benchmark (CSV)");
  add_config(be, bench.settings);
  be->add_option("--index", bench.index, "index file")->required();
  be->add_option("--encoder", bench.encoder, "encoder checkpoint")->required();
  be->add_option("--qa", bench.qa, "QA JSONL supplying questions");
  be->add_option("--questions", bench.questions, "text file, one question per line");
  be->add_option("-k", bench.k, "results per question")->check(CLI::PositiveNumber);
  be->add_option("--batch-size", bench.bench.batch_size, "questions per batch")
      ->check(CLI::PositiveNumber);
  be->add_option("--warmup", bench.bench.warmup, "leading batches excluded");
  be->add_option("--batches", bench.bench.batches, "batches per run (0 = one pass)");
  be->add_option("--runs", bench.bench.runs, "runs; the median is reported")
      ->check(CLI::PositiveNumber);
  add_search_overrides(be, bench.settings);

  ServeArgs serve;
  auto* sv = app.add_subcommand("serve", "HTTP search service");
  add_config(sv, serve.settings);
  sv->add_option("--index", serve.index, "index file (or DPHRASE_INDEX)");
  sv->add_option("--encoder", serve.encoder, "encoder checkpoint")->required();
  sv->add_option("--bind", serve.bind, "host:port (or DPHRASE_BIND)");
  sv->add_option("--default-k", serve.default_k, "k when the request omits it");
  sv->add_option("--max-k", serve.max_k, "largest accepted k");
  sv->add_option("--max-batch", serve.max_batch, "largest accepted batch");
  sv->add_option("--timeout", serve.timeout, "socket timeout in seconds");
  sv->add_flag("--quiet", serve.quiet, "no request logs");
  add_search_overrides(sv, serve.settings);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (t->parsed()) return run_train(train, out);
    if (b->parsed()) return run_build(build, out);
    if (f->parsed()) return run_filter(filter, out);
    if (q->parsed()) return run_qsft(qsft, out, err);
    if (s->parsed()) return run_search(srch, out);
    if (e->parsed()) return run_eval(ev, out);
    if (be->parsed()) return run_bench(bench, out);
    if (sv->parsed()) return run_serve(serve, out, err);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace dphrase
