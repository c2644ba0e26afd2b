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


#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dphrase/cli.h"
#include "dphrase/synthetic.h"
#include "json.hpp"
#include "support.h"

using namespace dphrase;
using namespace dphrase::testing;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "dphrase");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli_dispatch(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  auto r = run({"search", "--encoder", "x.ckpt", "-q", "hi"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--index") != std::string::npos);
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("cli pipeline") {
  TempDir dir;
  WorldConfig wc;
  wc.subjects = 15;
  wc.relations = 4;
  wc.objects = 20;
  wc.facts_per_subject = 3;
  wc.questions = 40;
  auto world = make_world(wc);
  const auto corpus = (dir / "corpus.jsonl").string();
  const auto qa = (dir / "qa.jsonl").string();
  const auto slot = (dir / "slot.jsonl").string();
  {
    std::ofstream c(corpus), q(qa), s(slot);
    write_corpus_jsonl(world.corpus, c);
    write_qa_jsonl(world.qa, world.corpus, q);
    write_qa_jsonl(world.slot_qa, world.corpus, s);
  }
  const auto ckpt = (dir / "enc.ckpt").string();
  const auto index = (dir / "x.idx").string();

  auto train = run({"train", "--corpus", corpus, "--qa", qa, "--out", ckpt, "--epochs", "2",
                    "--batch-size", "8", "--dim", "8"});
  REQUIRE_MESSAGE(train.code == kExitOk, train.err);
  auto epochs = lines(train.out);
  REQUIRE(epochs.size() == 2);
  CHECK(nlohmann::json::parse(epochs[1])["epoch"] == 1);

  auto build = run({"build-index", "--corpus", corpus, "--encoder", ckpt, "--out", index,
                    "--keep-raw"});
  REQUIRE_MESSAGE(build.code == kExitOk, build.err);
  auto info = nlohmann::json::parse(build.out);
  CHECK(info["quant_mode"] == "sq8");
  CHECK(std::filesystem::exists(raw_sidecar_path(index)));

  SUBCASE("search prints one JSON object per result") {
    auto r = run({"search", "--index", index, "--encoder", ckpt, "-q", world.qa[0].question,
                  "-k", "5"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    auto ls = lines(r.out);
    CHECK(ls.size() == 5);
    for (const auto& l : ls) {
      auto j = nlohmann::json::parse(l);
      CHECK(j.contains("text"));
      CHECK(j.contains("score"));
      CHECK(j.contains("doc_id"));
    }
  }
  SUBCASE("eval as json") {
    auto r = run({"eval", "--index", index, "--encoder", ckpt, "--qa", qa, "--ks", "1,5",
                  "--format", "json"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["total"] == 40);
    CHECK(j["top_k_accuracy"]["1"].get<double>() <= j["top_k_accuracy"]["5"].get<double>());
    CHECK(run({"eval", "--index", index, "--encoder", ckpt, "--qa", qa, "--ks", "0"}).code ==
          kExitUsage);
  }
  SUBCASE("bench prints csv") {
    auto r = run({"bench", "--index", index, "--encoder", ckpt, "--qa", qa, "--batch-size", "4",
                  "--warmup", "1", "--batches", "4", "--runs", "1"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    auto ls = lines(r.out);
    REQUIRE(ls.size() == 2);
    CHECK(ls[0] == "batch_size,qps,p50_latency_ms,p99_latency_ms");
    CHECK(ls[1].rfind("4,", 0) == 0);
  }
  SUBCASE("qsft writes a new checkpoint and leaves the index alone") {
    const auto digest = file_digest(index);
    const auto tuned = (dir / "tuned.ckpt").string();
    auto r = run({"qsft", "--index", index, "--encoder", ckpt, "--qa", slot, "--out", tuned,
                  "--epochs", "1", "--top-k", "20"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(std::filesystem::exists(tuned));
    CHECK(file_digest(index) == digest);
  }
  SUBCASE("filter writes a smaller index") {
    const auto small = (dir / "small.idx").string();
    auto r = run({"filter", "--corpus", corpus, "--index", index, "--encoder", ckpt, "--qa", qa,
                  "--out", small, "--max-drop", "0.05"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    auto j = nlohmann::json::parse(lines(r.out).back());
    CHECK(j.contains("threshold"));
    CHECK(std::filesystem::exists(small));
  }
  SUBCASE("runtime failures exit with 2") {
    auto r = run({"search", "--index", (dir / "missing.idx").string(), "--encoder", ckpt, "-q",
                  "x"});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find("error") != std::string::npos);
    auto bad = run({"train", "--corpus", corpus, "--qa", qa, "--out", ckpt, "--lr", "abc"});
    CHECK(bad.code != kExitOk);
  }
}
