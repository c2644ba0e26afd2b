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

#include "dphrase/synthetic.h"

#include <algorithm>
#include <numeric>
#include <random>

namespace dphrase {

namespace {

std::string name(const char* prefix, std::size_t i) {
  return prefix + std::to_string(i);
}

}  // namespace

World make_world(const WorldConfig& config) {
  if (config.subjects == 0 || config.relations == 0 || config.objects == 0 ||
      config.facts_per_subject == 0) {
    throw RangeError("make_world: all sizes must be positive");
  }
  if (config.facts_per_subject > config.relations) {
    throw RangeError("make_world: more facts per subject than relations");
  }
  std::mt19937_64 rng(config.seed);
  World world;
  world.relations = config.relations;

  struct Fact {
    std::size_t subject, relation, object, position;
  };
  std::vector<Fact> facts;
  std::vector<std::size_t> rels(config.relations);
  std::iota(rels.begin(), rels.end(), 0);
  std::uniform_int_distribution<std::size_t> pick_object(0, config.objects - 1);
  for (std::size_t s = 0; s < config.subjects; ++s) {
    std::shuffle(rels.begin(), rels.end(), rng);
    std::string text;
    for (std::size_t f = 0; f < config.facts_per_subject; ++f) {
      std::size_t obj = pick_object(rng);
      if (!text.empty()) text += ' ';
      text += name("ent", s) + " " + name("rel", rels[f]) + " " + name("obj", obj) + " .";
      facts.push_back({s, rels[f], obj, 4 * f + 2});
    }
    world.corpus.add_document(name("doc", s), name("ent", s), {text});
  }

  std::shuffle(facts.begin(), facts.end(), rng);
  const std::size_t n = std::min(config.questions, facts.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = facts[i];
    PhraseSpan gold{name("doc", f.subject), 0, std::uint32_t(f.position),
                    std::uint32_t(f.position)};
    QAPair qa;
    qa.question = "what is the " + name("rel", f.relation) + " of " +
                  name("ent", f.subject) + " ?";
    qa.answer = name("obj", f.object);
    qa.gold = gold;
    world.qa.push_back(qa);
    qa.question = name("ent", f.subject) + " [SEP] " + name("alias", f.relation);
    world.slot_qa.push_back(qa);
  }
  return world;
}

}  // namespace dphrase
