// Copyright 2026 The rinslab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <set>

#include "doctest.h"
#include "rins/compute_ledger.hpp"
#include "rins/model.hpp"

using rins::CostMode;
using rins::expand;
using rins::ModelDims;
using rins::parse;

namespace {

ModelDims dims12() {
  ModelDims d;
  d.d_model = 48;
  d.n_heads = 4;
  d.mlp_dim = 96;
  d.vocab = 100;
  d.seq_len = 1024;
  d.total_layers = 12;
  return d;
}

rins::ExecutionPlan plan(const char* s, int degree = 1) {
  return expand(parse(s, degree));
}

// Every weight tensor of the tiny model, listed by shape.
std::int64_t tiny_param_oracle() {
  const std::int64_t d = 8, mlp = 16, vocab = 11, seq = 5, layers = 4;
  std::vector<std::pair<std::int64_t, std::int64_t>> shapes = {
      {vocab, d},  // token embedding
      {seq, d},    // position embedding
      {1, d},      // final norm scale
      {1, d},      // final norm bias
      {d, vocab},  // head
      {1, vocab},  // head bias
  };
  for (int l = 0; l < layers; ++l) {
    shapes.insert(shapes.end(), {{1, d}, {1, d},                  // norm1
                                 {d, d}, {d, d}, {d, d}, {d, d},  // q k v o
                                 {1, d}, {1, d},                  // norm2
                                 {d, mlp}, {1, mlp},              // fc1
                                 {mlp, d}, {1, d}});              // fc2
  }
  std::int64_t total = 0;
  for (auto [r, c] : shapes) total += r * c;
  return total;
}

}  // namespace

TEST_CASE("dims validation") {
  ModelDims d;
  CHECK_NOTHROW(d.validate());
  d.n_heads = 3;
  d.d_model = 64;
  CHECK_THROWS_WITH_AS(d.validate(), "dims.n_heads: must divide d_model",
                       std::invalid_argument);
}

TEST_CASE("param_count ignores repetition") {
  const ModelDims d = dims12();
  CHECK(rins::param_count(plan("ABBC"), d) == rins::param_count(plan("ABC"), d));
  CHECK(rins::param_count(plan("A^2B"), d) == rins::param_count(plan("AB"), d));
  CHECK(rins::param_count(plan("A^4B"), d) == rins::param_count(plan("AB"), d));
  CHECK_THROWS_AS(rins::param_count(plan("ABBC", 3), d), rins::InfeasibleError);
}

TEST_CASE("param_count matches the tensor-shape oracle on the tiny config") {
  ModelDims d;
  d.d_model = 8;
  d.n_heads = 2;
  d.mlp_dim = 16;
  d.vocab = 11;
  d.seq_len = 5;
  d.total_layers = 4;
  CHECK(rins::param_count(plan("AB"), d) == tiny_param_oracle());
  rins::RecursiveTransformer<double> model(parse("AB", 1), d, {});
  CHECK(model.params().size() == tiny_param_oracle());
}

TEST_CASE("layer-pass step cost ratios") {
  const ModelDims d = dims12();
  CHECK(rins::step_cost(plan("ABBC"), d) / rins::step_cost(plan("ABC"), d) ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(rins::step_cost(plan("ABBC"), d) * 3 == rins::step_cost(plan("ABC"), d) * 4);
  CHECK(rins::step_cost(plan("A^1B"), d) == rins::step_cost(plan("AB"), d));

  ModelDims longer = d;
  longer.seq_len = 1536;
  CHECK(rins::step_cost(plan("AB"), longer) / rins::step_cost(plan("AB"), d) == 1.5);
}

TEST_CASE("step cost increases with r in both modes") {
  const ModelDims d = dims12();
  for (auto mode : {CostMode::kLayerPass, CostMode::kExactFlops}) {
    double prev = 0;
    for (const char* s : {"AB", "A^2B", "A^3B", "A^4B", "A^5B"}) {
      const double c = rins::step_cost(plan(s), d, mode);
      CHECK(c > prev);
      prev = c;
    }
  }
}

TEST_CASE("exact-flops per-layer formula") {
  ModelDims d = dims12();
  const double expected = 12.0 * 48 * 48 + 4.0 * 48 * 512 + 4.0 * 48 * 96;
  CHECK(rins::per_token_layer_flops(d) == expected);
  CHECK(rins::step_cost(plan("AB"), d, CostMode::kExactFlops) ==
        2 * 6 * 1024 * expected);
}

TEST_CASE("matched_steps") {
  const ModelDims d = dims12();
  CHECK(rins::matched_steps(plan("AB"), plan("A^2B"), d, d, 200000) == 133333);
  CHECK(rins::matched_steps(plan("AB"), plan("AB"), d, d, 200000) == 200000);
  CHECK(rins::matched_steps(plan("AB"), plan("ABAB"), d, d, 200000) == 100000);
  CHECK(rins::matched_steps(plan("AB"), plan("A^3B"), d, d, 7) == 3);
  CHECK_THROWS(rins::matched_steps(plan("AB"), plan("AB"), d, d, 0));

  // Both modes agree when per-layer shapes and context match.
  for (const char* s : {"A^2B", "A^3B", "ABAB", "AAB", "ABBB"}) {
    for (std::int64_t steps : {1000, 12345, 200000}) {
      CHECK(rins::matched_steps(plan("AB"), plan(s), d, d, steps,
                                CostMode::kLayerPass) ==
            rins::matched_steps(plan("AB"), plan(s), d, d, steps,
                                CostMode::kExactFlops));
    }
  }

  // The matched run never exceeds the baseline budget.
  for (const char* s : {"A^2B", "A^3B", "ABAB", "AAB", "ABBB", "AABB"}) {
    for (std::int64_t steps = 1; steps < 500; steps += 7) {
      const auto m = rins::matched_steps(plan("AB"), plan(s), d, d, steps);
      CHECK(m * rins::step_cost(plan(s), d) <= steps * rins::step_cost(plan("AB"), d));
      CHECK((m + 1) * rins::step_cost(plan(s), d) > steps * rins::step_cost(plan("AB"), d));
    }
  }
}

TEST_CASE("expected stochastic cost") {
  ModelDims d = dims12();
  d.total_layers = 2;
  d.seq_len = 1;
  const auto a3b = plan("A^3B");  // one layer per block, one token: cost = block passes
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.0) == 4.0);
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.5) == 3.0);
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.8) == doctest::Approx(2.4));
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.5) /
            rins::step_cost(plan("AB"), d) ==
        1.5);
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.0) == rins::step_cost(a3b, d));
  CHECK_THROWS_AS(rins::expected_stochastic_cost(a3b, d, 1.0), std::domain_error);
  CHECK_THROWS_AS(rins::expected_stochastic_cost(a3b, d, -0.1), std::domain_error);

  // Affine with negative slope, approaching the AB cost as p -> 1.
  const double c0 = rins::expected_stochastic_cost(a3b, d, 0.0);
  const double c1 = rins::expected_stochastic_cost(a3b, d, 0.3);
  const double c2 = rins::expected_stochastic_cost(a3b, d, 0.6);
  CHECK(c1 < c0);
  CHECK(c2 - c1 == doctest::Approx(c1 - c0));
  CHECK(rins::expected_stochastic_cost(a3b, d, 0.999999) ==
        doctest::Approx(rins::step_cost(plan("AB"), d)).epsilon(1e-5));
}

TEST_CASE("enumerate_sweep") {
  const auto c12 = rins::enumerate_sweep(12);
  REQUIRE(c12.size() == 31);
  CHECK(c12[0].signature.symbols == "A");
  CHECK(c12[1].signature.symbols == "AA");
  CHECK(c12[3].signature.symbols == "AAAA");
  CHECK(c12[4].signature.symbols == "ABB");
  CHECK(c12[4].signature.degree == 1);
  CHECK(c12[6].signature.degree == 3);
  CHECK(c12[30].signature.symbols == "AABB");
  for (const auto& c : c12) {
    if (c.signature.symbols == "ABBC" && c.signature.degree == 3) {
      CHECK_FALSE(c.feasible);
      CHECK(c.layers_per_block == 0);
    }
  }

  for (const auto& c : rins::enumerate_sweep(1)) {
    CHECK(c.feasible == (c.signature.distinct() == 1));
  }

  // Feasibility against u^degree computed by hand.
  const auto c24 = rins::enumerate_sweep(24);
  REQUIRE(c24.size() == 9 * 3 + 4);
  int feasible = 0;
  for (const auto& c : c24) {
    const int u = static_cast<int>(
        std::set<char>(c.signature.symbols.begin(), c.signature.symbols.end()).size());
    int blocks = 1;
    for (int i = 0; i < c.signature.degree; ++i) blocks *= u;
    CHECK(c.feasible == (blocks <= 24));
    feasible += c.feasible;
  }
  // 4 single-block + 2-symbol sigs (ABB ABA AAB ABBB AAAB AABB) at d1..3
  // (2, 4, 8 blocks) + 3-symbol sigs (ABBC AABC ABCC) at d1..2 (3, 9 blocks).
  CHECK(feasible == 4 + 6 * 3 + 3 * 2);
}

TEST_CASE("sweep records") {
  ModelDims d = dims12();
  const auto rows = rins::sweep_records(d, 1200);
  REQUIRE(rows.size() == 31);
  CHECK(rows[0].steps_matched == 1200);  // baseline A
  CHECK(rows[1].steps_matched == 600);   // AA
  const auto j = rins::to_json(rows[4]);
  CHECK(j["signature"] == "ABB");
  CHECK(j["degree"] == 1);
  CHECK(j["feasible"] == true);
  CHECK(j["layers_per_block"] == 6);
  CHECK(j["steps_matched"] == 800);
  for (const auto& r : rows) {
    if (!r.candidate.feasible) CHECK(r.steps_matched == 0);
  }
}
