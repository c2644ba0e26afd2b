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

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dphrase/synthetic.h"
#include "dphrase/training.h"
#include "gradient_suite.h"
#include "support.h"

using namespace dphrase;
using namespace dphrase::testing;

namespace {

std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(m);
  double s = 0.0;
  for (auto& x : p) s += (x = u(rng));
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

TEST_CASE("softmax sums to one") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto z = random_vector(rng, 1 + rng() % 30, 20.0);
    auto p = softmax(z);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9);
    auto lp = log_softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::exp(lp[i]) == doctest::Approx(p[i]));
  }
  std::vector<double> huge = {1000.0, 1000.0};
  CHECK(softmax(huge)[0] == doctest::Approx(0.5));
}

TEST_CASE("single_passage_loss closed forms") {
  QuestionEmbedding q{{0.3, -1.0}, {2.0, 0.5}};
  MatrixD one(1, 2, 0.7);
  CHECK(single_passage_loss(one, q, 0, 0).loss == 0.0);
  MatrixD flat(4, 2, 0.0);
  for (std::size_t g = 0; g < 4; ++g) {
    CHECK(single_passage_loss(flat, q, g, 3 - g).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(single_passage_loss(MatrixD(0, 2), q, 0, 0), Error);
  CHECK_THROWS_AS(single_passage_loss(flat, q, 4, 0), RangeError);
}

TEST_CASE("distill_loss closed forms and oracle") {
  std::vector<double> p = {0.2, 0.3, 0.5};
  CHECK(distill_loss(p, p, p, p) == 0.0);
  std::vector<double> peaked = {1.0, 0.0}, half = {0.5, 0.5};
  CHECK(distill_loss(peaked, peaked, half, half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(distill_loss(half, half, peaked, peaked), Error);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto ps = random_distribution(rng, 6), pe = random_distribution(rng, 6);
    auto ts = random_distribution(rng, 6), te = random_distribution(rng, 6);
    double direct = 0.0;
    for (int i = 0; i < 6; ++i) {
      direct += ps[i] * std::log(ps[i] / ts[i]) / 2.0;
      direct += pe[i] * std::log(pe[i] / te[i]) / 2.0;
    }
    CHECK(std::abs(distill_loss(ps, pe, ts, te) - direct) <= 1e-12);
  }
}

TEST_CASE("KL divergence is non-negative and zero only on equal inputs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng() % 8;
    auto p = random_distribution(rng, m), q = random_distribution(rng, m);
    CHECK(kl_divergence(p, q) > 0.0);
    CHECK(std::abs(kl_divergence(p, p)) <= 1e-9);
  }
}

TEST_CASE("synthetic teacher is a distribution peaked at gold") {
  auto t = synthetic_teacher(10, 3, 7, 0.2, 0.0, 1);
  CHECK(std::accumulate(t.start.begin(), t.start.end(), 0.0) == doctest::Approx(1.0));
  CHECK(std::max_element(t.start.begin(), t.start.end()) - t.start.begin() == 3);
  CHECK(std::max_element(t.end.begin(), t.end.end()) - t.end.begin() == 7);
}

TEST_CASE("teacher files round-trip") {
  TempDir dir;
  TeacherSet set;
  set[4] = synthetic_teacher(5, 1, 2, 0.5, 0.3, 9);
  set[1] = synthetic_teacher(3, 0, 0, 0.5, 0.3, 8);
  save_teachers(set, dir / "t.bin");
  auto back = load_teachers(dir / "t.bin");
  REQUIRE(back.size() == 2);
  CHECK(back.at(4).start == set.at(4).start);
  CHECK(back.at(1).end == set.at(1).end);
}

TEST_CASE("prebatch queue") {
  MatrixD a(2, 3, 1.0), b(2, 3, 2.0), c(2, 3, 3.0);
  SUBCASE("FIFO eviction") {
    PrebatchQueue q(2);
    q.push(a, a);
    q.push(b, b);
    q.push(c, c);
    REQUIRE(q.size() == 2);
    CHECK(q.entries()[0].start == b);
    CHECK(q.entries()[1].start == c);
    CHECK(q.cached_rows() == 4);
  }
  SUBCASE("zero capacity") {
    PrebatchQueue q(0);
    q.push(a, a);
    CHECK(q.empty());
  }
  SUBCASE("snapshots") {
    PrebatchQueue q(1);
    MatrixD src(2, 3, 5.0);
    q.push(src, src);
    src(0, 0) = -1.0;
    CHECK(q.entries()[0].start(0, 0) == 5.0);
  }
  SUBCASE("dimension mismatch") {
    PrebatchQueue q(2);
    q.push(a, a);
    CHECK_THROWS_AS(q.push(MatrixD(2, 4), MatrixD(2, 4)), Error);
  }
}

TEST_CASE("batch_negative_loss closed forms") {
  QuestionEmbedding q{{1.0, 0.0}, {0.0, 1.0}};
  MatrixD h(3, 2, 0.5);
  PrebatchQueue empty(0);
  BatchExample one[] = {{&h, &q, 0, 2}};
  CHECK(batch_negative_loss(one, empty).loss == 0.0);
  CHECK(batch_negative_loss(one, empty).negatives_per_example == 0);
  BatchExample two[] = {{&h, &q, 0, 1}, {&h, &q, 2, 2}};
  auto r = batch_negative_loss(two, empty);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r.negatives_per_example == 1);

  PrebatchQueue bad(1);
  bad.push(MatrixD(2, 5), MatrixD(2, 5));
  CHECK_THROWS_AS(batch_negative_loss(two, bad), Error);
}

TEST_CASE("batch_negative_loss equals the explicit score matrix") {
  std::mt19937_64 rng(4);
  for (std::size_t b = 1; b <= 4; ++b) {
    for (std::size_t c = 0; c <= 3; ++c) {
      std::vector<MatrixD> h;
      std::vector<QuestionEmbedding> q;
      std::vector<std::size_t> gs, ge;
      for (std::size_t i = 0; i < b; ++i) {
        h.push_back(random_matrix(rng, 5, 6));
        q.push_back({random_vector(rng, 6), random_vector(rng, 6)});
        gs.push_back(rng() % 5);
        ge.push_back(rng() % 5);
      }
      PrebatchQueue queue(c);
      std::vector<CachedBatch> cached;
      for (std::size_t k = 0; k < c; ++k) {
        CachedBatch e{random_matrix(rng, b, 6), random_matrix(rng, b, 6)};
        queue.push(e.start, e.end);
        cached.push_back(e);
      }
      std::vector<BatchExample> batch;
      for (std::size_t i = 0; i < b; ++i) batch.push_back({&h[i], &q[i], gs[i], ge[i]});
      auto r = batch_negative_loss(batch, queue);
      CHECK(std::abs(r.loss - oracle_negative_loss(h, q, gs, ge, cached)) <= 1e-12);
      CHECK(r.negatives_per_example == b * c + b - 1);
      // Only gold rows of current examples receive gradient.
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t row = 0; row < 5; ++row) {
          if (row == gs[i] || row == ge[i]) continue;
          for (double v : r.d_tokens[i].row(row)) CHECK(v == 0.0);
        }
      }
    }
  }
}

TEST_CASE("total_loss weighting") {
  LossWeights defaults;
  CHECK(defaults.single == 1.0);
  CHECK(defaults.distill == 2.0);
  CHECK(defaults.negative == 4.0);
  CHECK(total_loss({0.5, 0.25, 0.125}, defaults) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(total_loss({0.7, 9.0, 9.0}, {1.0, 0.0, 0.0}) == 0.7);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient is a fixed point") {
    std::vector<double> x = {1.0, -2.0}, g = {0.0, 0.0};
    std::span<double> ps[] = {x};
    std::span<double> gs[] = {g};
    OptimizerState s;
    adam_step(std::span<const std::span<double>>(ps), gs, s);
    CHECK(x == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("first step moves by lr against the sign") {
    std::vector<double> x = {0.0}, g = {2.0};
    std::span<double> ps[] = {x};
    std::span<double> gs[] = {g};
    OptimizerState s;
    s.config.lr = 0.001;
    s.config.clip_norm = 0.0;
    adam_step(std::span<const std::span<double>>(ps), gs, s);
    CHECK(x[0] == doctest::Approx(-0.001).epsilon(1e-6));
    CHECK(s.step == 1);
  }
  SUBCASE("clipping happens before the moments") {
    std::vector<double> g = {3.0, 4.0};
    std::span<double> gs[] = {g};
    CHECK(clip_global_norm(gs, 1.0) == doctest::Approx(5.0));
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
  }
  SUBCASE("quadratic bowl") {
    std::vector<double> x = {3.0, -2.0, 1.0}, g(3);
    std::span<double> ps[] = {x};
    std::span<double> gs[] = {g};
    OptimizerState s;
    s.config.lr = 0.1;
    auto loss = [&] { return x[0] * x[0] + 2 * x[1] * x[1] + 0.5 * x[2] * x[2]; };
    double prev = loss();
    for (int step = 0; step < 10; ++step) {
      g = {2 * x[0], 4 * x[1], x[2]};
      adam_step(std::span<const std::span<double>>(ps), gs, s);
      double now = loss();
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("non-finite gradient") {
    std::vector<double> x = {0.0}, g = {std::nan("")};
    std::span<double> ps[] = {x};
    std::span<double> gs[] = {g};
    OptimizerState s;
    CHECK_THROWS_AS(adam_step(std::span<const std::span<double>>(ps), gs, s), Error);
  }
}

TEST_CASE("gradient checks on small instances") {
  for (const auto& r : run_gradient_suite(3, 77)) {
    INFO(r.loss);
    CHECK(r.max_error <= 1e-4);
  }
}

TEST_CASE("config parsing") {
  std::istringstream in("# comment\nbatch_size = 16\nprebatch_C: 1\nepochs 6\nlambda3=2.5\n");
  auto map = parse_config(in);
  auto c = TrainConfig::from_map(map);
  CHECK(c.batch_size == 16);
  CHECK(c.prebatch == 1);
  CHECK(c.epochs == 6);
  CHECK(c.warmup_epochs == 3);
  CHECK(c.weights.negative == 2.5);
  std::istringstream unknown("bogus = 1\n");
  CHECK_THROWS_AS(TrainConfig::from_map(parse_config(unknown)), ParseError);
  std::istringstream bad_value("epochs = many\n");
  CHECK_THROWS_AS(TrainConfig::from_map(parse_config(bad_value)), ParseError);
  std::istringstream no_value("epochs\n");
  CHECK_THROWS_AS(parse_config(no_value), ParseError);
}

TEST_CASE("one example, one epoch, single loss only equals a hand-rolled Adam step") {
  auto corpus = fixture_corpus();
  std::vector<QAPair> qa = {{"which letter follows alpha", "beta", PhraseSpan{"d1", 0, 1, 1}, {}}};
  TrainConfig tc;
  tc.batch_size = 1;
  tc.epochs = 1;
  tc.prebatch = 0;
  tc.weights = {1.0, 0.0, 0.0};
  tc.dim = 6;
  tc.seed = 21;
  auto trained = train_phrase_encoders(corpus, qa, tc);

  auto params = init_encoder(training_vocabulary(corpus, qa), {6, tc.window, 21});
  auto examples = make_training_examples(params, corpus, qa);
  REQUIRE(examples.size() == 1);
  const auto& ex = examples[0];
  auto h = encode_passage(params, ex.passage);
  auto q = encode_question(params, ex.question);
  auto loss = single_passage_loss(h, q, ex.gold_start, ex.gold_end);
  auto grads = params.weights.zeros_like();
  accumulate_passage_gradients(params, ex.passage, loss.d_tokens, grads);
  accumulate_question_gradients(params, ex.question, loss.d_start, loss.d_end, grads);
  OptimizerState state;
  state.config.lr = tc.lr;
  adam_step(params.weights, grads, state);
  auto a = flatten(params.weights), b = flatten(trained.params.weights);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  CHECK(trained.epochs[0].mean_components.single == doctest::Approx(loss.loss));
}

TEST_CASE("training with defaults lowers the loss and is deterministic") {
  WorldConfig wc;
  wc.subjects = 60;
  wc.questions = 200;
  auto world = make_world(wc);
  REQUIRE(world.qa.size() == 200);
  TrainConfig tc;
  tc.dim = 16;
  auto first = train_phrase_encoders(world.corpus, world.qa, tc);
  REQUIRE(first.epochs.size() == 4);
  // The objective gains a term once the queue switches on, so each phase
  // is compared with itself.
  CHECK(first.epochs[1].mean_loss < first.epochs[0].mean_loss);
  CHECK(first.epochs[3].mean_loss < first.epochs[2].mean_loss);
  CHECK_FALSE(first.epochs[1].prebatch_active);
  CHECK(first.epochs[2].prebatch_active);
  auto second = train_phrase_encoders(world.corpus, world.qa, tc);
  CHECK(first.params == second.params);

  std::vector<QAPair> none;
  CHECK_THROWS_AS(train_phrase_encoders(world.corpus, none, tc), Error);
}
