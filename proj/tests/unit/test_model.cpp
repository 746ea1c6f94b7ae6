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

#include <array>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "rins/model.hpp"

using namespace rins;
using rins::testing::random_targets;
using rins::testing::random_tokens;
using rins::testing::rins_policy;
using rins::testing::tiny_dims;

namespace {

template <typename T>
bool same_params(const ModelParams<T>& a, const ModelParams<T>& b) {
  const auto sa = a.spans();
  const auto sb = b.spans();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (!std::equal(sa[i].begin(), sa[i].end(), sb[i].begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("policy validation") {
  CHECK_THROWS(RecursiveTransformer<double>(parse("A^3B", 1), tiny_dims(), rins_policy(2)));
  CHECK_THROWS(RecursiveTransformer<double>(parse("ABAB", 1), tiny_dims(), rins_policy(1, true)));
  RecursionPolicy bad = rins_policy(3);
  bad.p_skip = 1.0;
  CHECK_THROWS(bad.validate());
  bad.p_skip = 0.5;
  bad.inference_rounds = 4;
  CHECK_THROWS(bad.validate());
  CHECK_NOTHROW(RecursiveTransformer<double>(parse("ABAB", 1), tiny_dims(), {}));
}

TEST_CASE("execution sequences") {
  RecursiveTransformer<double> a3b(parse("A^3B", 1), tiny_dims(), rins_policy(3));
  CHECK(a3b.execution_sequence(1) == std::vector<int>{0, 1});
  CHECK(a3b.execution_sequence(3) == std::vector<int>{0, 0, 0, 1});
  CHECK_THROWS_AS(a3b.execution_sequence(4), std::out_of_range);
  CHECK_THROWS_AS(a3b.execution_sequence(0), std::out_of_range);
  RecursiveTransformer<double> abab(parse("ABAB", 1), tiny_dims(), {});
  CHECK(abab.execution_sequence(1) == std::vector<int>{0, 1, 0, 1});
  CHECK_THROWS(abab.execution_sequence(2));
}

TEST_CASE("uniform head gives ln V loss") {
  RecursiveTransformer<double> model(parse("AB", 1), tiny_dims(), {});
  model.init(3);
  model.params().head.setZero();
  model.params().head_bias.setZero();
  std::mt19937_64 rng(1);
  const auto tokens = random_tokens(3, 5, 11, rng);
  const auto targets = random_targets(tokens.size(), 11, rng);
  CHECK(model.loss(tokens, targets, 1) == doctest::Approx(std::log(11.0)).epsilon(1e-12));
  CHECK(std::log(11.0) == doctest::Approx(2.3979).epsilon(1e-4));
}

TEST_CASE("token and rounds range errors") {
  RecursiveTransformer<double> model(parse("A^2B", 1), tiny_dims(), rins_policy(2));
  model.init(1);
  TokenBatch bad(1, 3);
  bad.ids = {0, 11, 2};
  CHECK_THROWS_AS(model.forward(bad, 1), std::out_of_range);
  TokenBatch too_long(1, 6);
  CHECK_THROWS_AS(model.forward(too_long, 1), std::out_of_range);
  TokenBatch ok(1, 3);
  CHECK_THROWS_AS(model.forward(ok, 3), std::out_of_range);
  const std::vector<std::int32_t> short_targets = {1, 2};
  CHECK_THROWS_AS(model.loss(ok, short_targets, 1), std::invalid_argument);
}

TEST_CASE("analytic gradients match central differences") {
  struct Case {
    int rounds;
    bool adapters;
    bool kv;
  };
  for (Case c : {Case{1, false, false}, Case{2, true, false}, Case{3, true, true},
                 Case{2, false, true}}) {
    CAPTURE(c.rounds);
    CAPTURE(c.adapters);
    CAPTURE(c.kv);
    RecursiveTransformer<double> model(parse("A^3B", 1), tiny_dims(),
                                       rins_policy(3, c.adapters, c.kv));
    testing::randomize(model, 11);
    std::mt19937_64 rng(5);
    const auto tokens = random_tokens(2, 5, 11, rng);
    const auto targets = random_targets(tokens.size(), 11, rng);
    const auto result = testing::gradient_check(model, tokens, targets, c.rounds);
    INFO(result.worst);
    CHECK(result.max_rel_error < 1e-4);
  }
}

TEST_CASE("segment-restricted attention gradients") {
  RecursiveTransformer<double> model(parse("A^2B", 1), tiny_dims(), rins_policy(2, false, true));
  testing::randomize(model, 4);
  std::mt19937_64 rng(9);
  const auto tokens = random_tokens(1, 5, 11, rng);
  const auto targets = random_targets(tokens.size(), 11, rng);
  const std::vector<int> segments = {0, 0, 1, 1, 1};
  const auto analytic = model.loss_and_grads(tokens, targets, 2, segments);
  auto& w = model.params().blocks[0][0].wq(1, 2);
  const double saved = w;
  w = saved + 1e-5;
  const double up = model.loss(tokens, targets, 2, segments);
  w = saved - 1e-5;
  const double down = model.loss(tokens, targets, 2, segments);
  w = saved;
  CHECK(analytic.grads.blocks[0][0].wq(1, 2) ==
        doctest::Approx((up - down) / 2e-5).epsilon(1e-6));

  // Logits of the second document do not depend on the first one.
  TokenBatch other = tokens;
  other.at(0, 0) = (tokens.at(0, 0) + 1) % 11;
  other.at(0, 1) = (tokens.at(0, 1) + 3) % 11;
  const auto a = model.forward(tokens, 2, segments);
  const auto b = model.forward(other, 2, segments);
  for (int t = 2; t < 5; ++t) {
    CHECK((a.row(t).array() - b.row(t).array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("shared block gradient equals the sum over untied calls") {
  for (int rounds : {2, 3}) {
    CAPTURE(rounds);
    RecursiveTransformer<double> tied(parse("A^3B", 1), tiny_dims(), rins_policy(3));
    testing::randomize(tied, 21);
    // Untied clone: one fresh block per call of A, then B.
    std::string symbols;
    for (int i = 0; i <= rounds; ++i) symbols.push_back(static_cast<char>('A' + i));
    RecursiveTransformer<double> untied(parse(symbols, 1), tiny_dims(rounds + 1), {});
    auto& up = untied.params();
    const auto& tp = tied.params();
    up.token_embedding = tp.token_embedding;
    up.position_embedding = tp.position_embedding;
    for (int i = 0; i < rounds; ++i) up.blocks[i] = tp.blocks[0];
    up.blocks[rounds] = tp.blocks[1];
    up.final_scale = tp.final_scale;
    up.final_bias = tp.final_bias;
    up.head = tp.head;
    up.head_bias = tp.head_bias;

    std::mt19937_64 rng(3);
    const auto tokens = random_tokens(2, 5, 11, rng);
    const auto targets = random_targets(tokens.size(), 11, rng);
    const auto g_tied = tied.loss_and_grads(tokens, targets, rounds);
    const auto g_untied = untied.loss_and_grads(tokens, targets, 1);
    CHECK(g_tied.loss == doctest::Approx(g_untied.loss).epsilon(1e-14));

    double max_diff = 0;
    for (int l = 0; l < 2; ++l) {
      auto sum = LayerParams<double>::zeros(8, 16);
      for (int i = 0; i < rounds; ++i) {
        std::vector<std::span<double>> acc;
        std::vector<std::span<const double>> add;
        LayerParams<double>::for_each(sum, [&](const char*, auto& t) {
          acc.emplace_back(t.data(), t.size());
        });
        LayerParams<double>::for_each(g_untied.grads.blocks[i][l],
                                      [&](const char*, const auto& t) {
                                        add.emplace_back(t.data(), t.size());
                                      });
        for (std::size_t k = 0; k < acc.size(); ++k) {
          for (std::size_t j = 0; j < acc[k].size(); ++j) acc[k][j] += add[k][j];
        }
      }
      std::vector<std::span<const double>> lhs, rhs;
      LayerParams<double>::for_each(g_tied.grads.blocks[0][l], [&](const char*, const auto& t) {
        lhs.emplace_back(t.data(), t.size());
      });
      LayerParams<double>::for_each(sum, [&](const char*, const auto& t) {
        rhs.emplace_back(t.data(), t.size());
      });
      for (std::size_t k = 0; k < lhs.size(); ++k) {
        for (std::size_t j = 0; j < lhs[k].size(); ++j) {
          max_diff = std::max(max_diff, std::abs(lhs[k][j] - rhs[k][j]));
        }
      }
    }
    CHECK(max_diff < 1e-10);
  }
}

TEST_CASE("rounds = 1 is bitwise equal to a plain AB stack") {
  RecursiveTransformer<double> model(parse("A^3B", 1), tiny_dims(), rins_policy(3));
  testing::randomize(model, 8);
  const testing::PlainAB<double> plain{model.params(), 2};
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto tokens = random_tokens(2, 5, 11, rng);
    const auto targets = random_targets(tokens.size(), 11, rng);
    const auto got = model.loss_and_grads(tokens, targets, 1);
    const auto tape = plain.forward(tokens);
    CHECK((model.forward(tokens, 1).array() == tape.logits.array()).all());
    Matrix<double> dlogits;
    const double loss = cross_entropy<double>(tape.logits, targets, &dlogits);
    CHECK(loss == got.loss);
    auto grads = model.zero_grads();
    plain.backward(tokens, tape, dlogits, grads);
    CHECK(same_params(grads, got.grads));
  }
}

TEST_CASE("identity adapters are a no-op at initialization") {
  RecursiveTransformer<double> plain(parse("A^3B", 1), tiny_dims(), rins_policy(3));
  RecursiveTransformer<double> adapted(parse("A^3B", 1), tiny_dims(), rins_policy(3, true));
  plain.init(17, 0.3);
  adapted.init(17, 0.3);
  REQUIRE(adapted.params().adapters.size() == 3);
  CHECK(adapted.params().adapters[1] == Matrix<double>::Identity(8, 8));
  std::mt19937_64 rng(2);
  const auto tokens = random_tokens(2, 5, 11, rng);
  const auto targets = random_targets(tokens.size(), 11, rng);
  for (int rounds = 1; rounds <= 3; ++rounds) {
    CHECK((plain.forward(tokens, rounds).array() ==
           adapted.forward(tokens, rounds).array())
              .all());
    const auto a = plain.loss_and_grads(tokens, targets, rounds);
    const auto b = adapted.loss_and_grads(tokens, targets, rounds);
    CHECK(a.loss == b.loss);
    auto b_grads = b.grads;
    b_grads.adapters.clear();
    CHECK(same_params(a.grads, b_grads));
  }
}

TEST_CASE("causality") {
  RecursiveTransformer<double> model(parse("A^2B", 1), tiny_dims(),
                                     rins_policy(2, true, true));
  testing::randomize(model, 30);
  std::mt19937_64 rng(4);
  const auto tokens = random_tokens(1, 5, 11, rng);
  const auto base = model.forward(tokens, 2);
  for (int j = 0; j < 5; ++j) {
    TokenBatch changed = tokens;
    changed.at(0, j) = (tokens.at(0, j) + 5) % 11;
    const auto out = model.forward(changed, 2);
    for (int t = 0; t < 5; ++t) {
      const bool same = (out.row(t).array() == base.row(t).array()).all();
      CHECK(same == (t < j));
    }
  }
}

TEST_CASE("KV sharing changes outputs but not cache size") {
  RecursiveTransformer<double> shared(parse("A^2B", 1), tiny_dims(), rins_policy(2, false, true));
  RecursiveTransformer<double> fresh(parse("A^2B", 1), tiny_dims(), rins_policy(2));
  testing::randomize(shared, 40);
  fresh.params() = shared.params();
  std::mt19937_64 rng(6);
  const auto tokens = random_tokens(1, 5, 11, rng);
  const auto ts = shared.forward_tape(tokens, 2);
  const auto tf = fresh.forward_tape(tokens, 2);
  CHECK((ts.logits - tf.logits).cwiseAbs().maxCoeff() > 1e-6);
  // Rounds = 1 has nothing to share.
  CHECK((shared.forward(tokens, 1).array() == fresh.forward(tokens, 1).array()).all());

  const auto t1 = shared.forward_tape(tokens, 1);
  CHECK(ts.kv_bytes(0) == t1.kv_bytes(0));
  CHECK(tf.kv_bytes(0) == 2 * t1.kv_bytes(0));
  // Full context, one sequence: matches the accounting formula.
  CHECK(ts.kv_bytes(0) == shared.kv_cache_bytes(2));
  CHECK(tf.kv_bytes(0) == fresh.kv_cache_bytes(2));
}

TEST_CASE("kv_cache_bytes accounting") {
  ModelDims d;
  d.d_model = 2048;
  d.n_heads = 16;
  d.seq_len = 1024;
  RecursionPolicy shared = rins_policy(4, false, true);
  RecursionPolicy fresh = rins_policy(4);
  CHECK(kv_cache_bytes(d, 9, shared, 1, 2) == 9LL * 2 * 1024 * 2048 * 2);
  for (int r = 1; r <= 4; ++r) {
    CHECK(kv_cache_bytes(d, 9, shared, r, 2) == kv_cache_bytes(d, 9, shared, 1, 2));
    CHECK(kv_cache_bytes(d, 9, fresh, r, 2) == r * kv_cache_bytes(d, 9, fresh, 1, 2));
  }
}

TEST_CASE("sample_rounds") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(sample_rounds(rins_policy(4), rng) == 4);
  for (int i = 0; i < 1000; ++i) {
    CHECK(sample_rounds(rins_policy(1, false, false, 0.9), rng) == 1);
  }
  const RecursionPolicy p = rins_policy(3, false, false, 0.5);
  std::array<int, 4> counts{};
  const int n = 100000;
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    const int r = sample_rounds(p, rng);
    REQUIRE(r >= 1);
    REQUIRE(r <= 3);
    ++counts[r];
    sum += r;
  }
  // Chi-square with 2 degrees of freedom; the 0.99 quantile is 9.2103.
  double chi2 = 0;
  for (int k = 0; k < 3; ++k) {
    const double expected = n * oracle::binomial_pmf(2, k, 0.5);
    chi2 += (counts[k + 1] - expected) * (counts[k + 1] - expected) / expected;
  }
  CHECK(chi2 < 9.2103);
  const double sigma = std::sqrt(2 * 0.25 / n);
  CHECK(std::abs(sum / n - 2.0) < 3 * sigma);
}

TEST_CASE("determinism") {
  auto run = [] {
    RecursiveTransformer<float> model(parse("A^2B", 1), tiny_dims(), rins_policy(2, true, true));
    model.init(99);
    std::mt19937_64 rng(5);
    const auto tokens = random_tokens(2, 5, 11, rng);
    const auto targets = random_targets(tokens.size(), 11, rng);
    return model.loss_and_grads(tokens, targets, sample_rounds(model.policy(), rng));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.loss == b.loss);
  CHECK(same_params(a.grads, b.grads));
}

TEST_CASE("adapter parameter fraction") {
  ModelDims d;
  d.d_model = 128;
  d.n_heads = 4;
  d.mlp_dim = 512;
  d.vocab = 257;
  d.seq_len = 128;
  d.total_layers = 8;
  RecursiveTransformer<float> model(parse("A^3B", 1), d, rins_policy(3, true));
  CHECK(model.params().adapter_size() == 3 * 128 * 128);
  CHECK(model.adapter_fraction() > 0);
  CHECK(model.adapter_fraction() < model.adapter_fraction_excluding_embeddings());
}

TEST_CASE("checkpoint round trip") {
  RecursiveTransformer<float> model(parse("A^3B", 1), tiny_dims(), rins_policy(3, true, true, 0.5));
  model.init(123);
  const auto path = (std::filesystem::temp_directory_path() / "rins_ckpt_test.bin").string();
  std::map<std::string, std::vector<float>> extra = {{"adam.m.head.weight", {1.f, 2.f}}};
  save_checkpoint(path, model, 42, extra, {{"adam_count", 42}});

  const auto info = read_checkpoint_info(path);
  CHECK(info.step == 42);
  CHECK(info.signature.symbols == "AAAB");
  CHECK(info.policy == model.policy());
  CHECK(info.dims == model.dims());
  CHECK(info.dtype == "f32");
  CHECK(info.extra["adam_count"] == 42);

  const auto loaded = load_checkpoint<float>(path);
  CHECK(same_params(loaded.model.params(), model.params()));
  CHECK(loaded.extra_tensors.at("adam.m.head.weight") == std::vector<float>{1.f, 2.f});

  const auto widened = load_checkpoint<double>(path);
  CHECK(widened.model.params().head(0, 0) == static_cast<double>(model.params().head(0, 0)));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint<float>(path));
}

TEST_CASE("canonical parameter names") {
  RecursiveTransformer<float> model(parse("A^2B", 1), tiny_dims(), rins_policy(2, true));
  std::vector<std::string> names;
  ModelParams<float>::for_each(model.params(),
                               [&](const std::string& n, const auto&) { names.push_back(n); });
  CHECK(std::find(names.begin(), names.end(), "block.A.layer.0.attn.q") != names.end());
  CHECK(std::find(names.begin(), names.end(), "block.B.layer.1.mlp.fc2.bias") != names.end());
  CHECK(std::find(names.begin(), names.end(), "adapter.2") != names.end());
  CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
}
