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

// Writes a synthetic corpus and QA files for trying the pipeline end to end.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dphrase/synthetic.h"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic corpus (corpus.jsonl, qa.jsonl, slot_qa.jsonl)"};
  std::string out_dir;
  dphrase::WorldConfig cfg;
  app.add_option("--out-dir", out_dir, "output directory")->required();
  app.add_option("--subjects", cfg.subjects, "documents, one per subject");
  app.add_option("--relations", cfg.relations, "relation vocabulary size");
  app.add_option("--objects", cfg.objects, "object vocabulary size");
  app.add_option("--facts", cfg.facts_per_subject, "facts per subject");
  app.add_option("--questions", cfg.questions, "questions to write");
  app.add_option("--seed", cfg.seed, "random seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    auto world = dphrase::make_world(cfg);
    std::filesystem::create_directories(out_dir);
    std::ofstream corpus(std::filesystem::path(out_dir) / "corpus.jsonl");
    dphrase::write_corpus_jsonl(world.corpus, corpus);
    std::ofstream qa(std::filesystem::path(out_dir) / "qa.jsonl");
    dphrase::write_qa_jsonl(world.qa, world.corpus, qa);
    std::ofstream slot(std::filesystem::path(out_dir) / "slot_qa.jsonl");
    dphrase::write_qa_jsonl(world.slot_qa, world.corpus, slot);
    if (!corpus || !qa || !slot) throw dphrase::IoError("write failed in " + out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
