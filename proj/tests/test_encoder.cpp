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
#include <fstream>
#include <random>

#include "doctest.h"
#include "dphrase/encoder.h"
#include "support.h"

using namespace dphrase;
using namespace dphrase::testing;

namespace {

Vocabulary words(std::size_t n) {
  Vocabulary v;
  for (std::size_t i = 0; i < n; ++i) v.add("w" + std::to_string(i));
  return v;
}

void set_identity(MatrixD& m) {
  m.set_zero();
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) = 1.0;
}

double max_abs_diff(const MatrixD& a, const MatrixD& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("encode_passage with an empty window is the context map alone") {
  auto p = random_params(words(6), 4, 0, 1);
  std::vector<TokenId> ids = {1, 2, 3};
  auto h = encode_passage(p, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t r = 0; r < 4; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < 4; ++c) v += p.weights.context(r, c) * p.weights.embedding(ids[i], c);
      CHECK(h(i, r) == doctest::Approx(v).epsilon(1e-14));
    }
  }
}

TEST_CASE("identity context and zero neighbour map returns embeddings") {
  auto p = random_params(words(6), 3, 2, 2);
  set_identity(p.weights.context);
  p.weights.neighbor.set_zero();
  std::vector<TokenId> ids = {4, 1, 5, 1};
  auto h = encode_passage(p, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(h(i, c) == p.weights.embedding(ids[i], c));
  }
}

TEST_CASE("encode_passage matches the straight-line oracle") {
  auto p = random_params(words(9), 3, 2, 0);
  std::vector<TokenId> ids = {3, 1, 8, 2};
  CHECK(max_abs_diff(encode_passage(p, ids), oracle_encode_passage(p, ids)) <= 1e-12);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng() % 8, w = rng() % 4, m = 1 + rng() % 15;
    auto q = random_params(words(12), d, w, rng());
    std::vector<TokenId> seq(m);
    for (auto& t : seq) t = TokenId(rng() % 12);
    CHECK(max_abs_diff(encode_passage(q, seq), oracle_encode_passage(q, seq)) <= 1e-12);
  }
}

TEST_CASE("encode_passage rejects unknown token ids") {
  auto p = random_params(words(3), 2, 1, 0);
  std::vector<TokenId> ids = {1, 77};
  CHECK_THROWS_AS(encode_passage(p, ids), Error);
}

TEST_CASE("phrase_representation concatenates start and end rows") {
  MatrixD one(1, 2);
  one(0, 0) = 3;
  one(0, 1) = 4;
  CHECK(phrase_representation(one, 0, 0) == std::vector<double>{3, 4, 3, 4});
  MatrixD two(2, 2);
  two(0, 0) = 1;
  two(1, 1) = 1;
  CHECK(phrase_representation(two, 0, 1) == std::vector<double>{1, 0, 0, 1});
  CHECK_THROWS_AS(phrase_representation(two, 1, 0), RangeError);
  CHECK_THROWS_AS(phrase_representation(two, 0, 2), RangeError);

  std::mt19937_64 rng(4);
  for (std::size_t m = 1; m <= 6; ++m) {
    auto h = random_matrix(rng, m, 3);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i; j < m; ++j) {
        auto v = phrase_representation(h, i, j);
        REQUIRE(v.size() == 6);
        for (std::size_t c = 0; c < 3; ++c) {
          CHECK(v[c] == h(i, c));
          CHECK(v[3 + c] == h(j, c));
        }
      }
    }
  }
}

TEST_CASE("encode_question") {
  auto p = random_params(words(8), 3, 1, 5);
  SUBCASE("identity heads") {
    set_identity(p.weights.start_head);
    set_identity(p.weights.end_head);
    p.weights.start_bias.set_zero();
    p.weights.end_bias.set_zero();
    std::vector<TokenId> ids = {6};
    auto q = encode_question(p, ids);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(q.start[c] == p.weights.question_embedding(6, c));
      CHECK(q.end[c] == p.weights.question_embedding(6, c));
    }
  }
  SUBCASE("bias only") {
    p.weights.start_head.set_zero();
    p.weights.end_head.set_zero();
    std::vector<TokenId> ids = {1, 2};
    auto q = encode_question(p, ids);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(q.start[c] == p.weights.start_bias(0, c));
      CHECK(q.end[c] == p.weights.end_bias(0, c));
    }
  }
  SUBCASE("oracle") {
    auto p0 = random_params(words(8), 3, 1, 0);
    std::vector<TokenId> ids = {2, 7, 2};
    auto q = encode_question(p0, ids);
    auto o = oracle_encode_question(p0, ids);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(q.start[c] - o.start[c]) <= 1e-12);
      CHECK(std::abs(q.end[c] - o.end[c]) <= 1e-12);
    }
  }
  SUBCASE("empty question") {
    std::vector<TokenId> none;
    CHECK_THROWS_AS(encode_question(p, none), Error);
  }
}

TEST_CASE("gradient accumulation") {
  auto p = random_params(words(10), 4, 2, 8);
  std::vector<TokenId> passage = {1, 4, 4, 9, 2};
  std::vector<TokenId> question = {3, 5};
  std::mt19937_64 rng(9);

  SUBCASE("zero upstream gives zero gradient") {
    auto g = p.weights.zeros_like();
    accumulate_passage_gradients(p, passage, MatrixD(5, 4), g);
    std::vector<double> z(4, 0.0);
    accumulate_question_gradients(p, question, z, z, g);
    for (double v : flatten(g)) CHECK(v == 0.0);
  }

  SUBCASE("single-parameter perturbations match central differences") {
    auto dh = random_matrix(rng, 5, 4);
    auto ds = random_vector(rng, 4), de = random_vector(rng, 4);
    auto g = p.weights.zeros_like();
    accumulate_passage_gradients(p, passage, dh, g);
    accumulate_question_gradients(p, question, ds, de, g);
    // Linear probe loss: sum(dh * H) + ds.q_start + de.q_end.
    auto f = [&] {
      auto h = encode_passage(p, passage);
      auto q = encode_question(p, question);
      double s = 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) s += h.flat()[i] * dh.flat()[i];
      for (std::size_t c = 0; c < 4; ++c) s += ds[c] * q.start[c] + de[c] * q.end[c];
      return s;
    };
    std::vector<double> numeric;
    p.weights.visit([&](const char*, ParamSide, MatrixD& m) {
      auto n = numeric_gradient(f, m.flat());
      numeric.insert(numeric.end(), n.begin(), n.end());
    });
    auto analytic = flatten(g);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3});
      CHECK(std::abs(analytic[i] - numeric[i]) / scale <= 1e-6);
    }
  }

  SUBCASE("accumulation is additive and order independent") {
    auto dh1 = random_matrix(rng, 5, 4), dh2 = random_matrix(rng, 5, 4);
    auto g12 = p.weights.zeros_like(), g21 = p.weights.zeros_like();
    auto g1 = p.weights.zeros_like(), g2 = p.weights.zeros_like();
    accumulate_passage_gradients(p, passage, dh1, g12);
    accumulate_passage_gradients(p, passage, dh2, g12);
    accumulate_passage_gradients(p, passage, dh2, g21);
    accumulate_passage_gradients(p, passage, dh1, g21);
    accumulate_passage_gradients(p, passage, dh1, g1);
    accumulate_passage_gradients(p, passage, dh2, g2);
    auto a = flatten(g12), b = flatten(g21), s1 = flatten(g1), s2 = flatten(g2);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) <= 1e-12);
      CHECK(std::abs(a[i] - (s1[i] + s2[i])) <= 1e-12);
    }
  }

  SUBCASE("shape mismatch") {
    auto g = p.weights.zeros_like();
    CHECK_THROWS_AS(accumulate_passage_gradients(p, passage, MatrixD(3, 4), g), Error);
  }
}

TEST_CASE("extend_vocabulary leaves existing encodings unchanged") {
  auto p = random_params(words(5), 3, 1, 3);
  std::vector<TokenId> q = {1, 2};
  auto before = encode_question(p, q);
  const auto size = p.vocab.size();
  std::vector<std::string> extra = {"w1", "fresh", "newer"};
  CHECK(extend_vocabulary(p, extra) == 2);
  CHECK(p.vocab.size() == size + 2);
  CHECK(p.weights.embedding.rows() == size + 2);
  CHECK(p.weights.question_embedding.rows() == size + 2);
  auto after = encode_question(p, q);
  CHECK(before.start == after.start);
  CHECK(before.end == after.end);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  auto p = random_params(words(7), 4, 2, 12);
  // Values representable in float32 survive exactly.
  p.weights.visit([](const char*, ParamSide, MatrixD& m) {
    for (auto& x : m.flat()) x = double(float(x));
  });
  save_checkpoint(p, dir / "enc.bin");
  auto q = load_checkpoint(dir / "enc.bin");
  CHECK(q == p);

  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOPE0000";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
}
