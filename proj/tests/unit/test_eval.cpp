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

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "model_fixtures.hpp"
#include "rins/eval.hpp"
#include "rins/train.hpp"

using namespace rins;

namespace {

ModelDims id_dims(int vocab, int seq) {
  ModelDims d;
  d.d_model = 16;
  d.n_heads = 2;
  d.mlp_dim = 32;
  d.vocab = vocab;
  d.seq_len = seq;
  d.total_layers = 2;
  return d;
}

MCQItem boolq_item() {
  MCQItem item;
  item.id = "bq";
  item.style = TemplateStyle::kBoolq;
  item.context = "Cats are mammals.";
  item.prefix = "are cats mammals";
  item.options = {"yes", "no"};
  return item;
}

}  // namespace

TEST_CASE("templates are byte exact") {
  const MCQItem bq = boolq_item();
  CHECK(render_template(TemplateStyle::kBoolq, bq, 0) ==
        "Cats are mammals. Based on this, the answer to the question: are cats mammals, is: yes");
  const auto r = render_option(bq, 1);
  CHECK(r.option == "no");
  CHECK(r.conditioning.back() == ' ');

  MCQItem piqa;
  piqa.style = TemplateStyle::kPiqa;
  piqa.prefix = "Deep clean coffee grinder.";
  piqa.options = {"Scrape with rice", "Scrape with flour"};
  CHECK(render_template(TemplateStyle::kPiqa, piqa, 0) ==
        "The goal is: Deep clean coffee grinder. The solution is: Scrape with rice.");
  CHECK(render_option(piqa, 1).option == "Scrape with flour.");

  MCQItem plain;
  plain.context = "ctx";
  plain.prefix = "pre";
  plain.options = {"opt", "other"};
  CHECK(render_template(TemplateStyle::kPlain, plain, 0) == "ctx pre opt");
  plain.context.clear();
  CHECK(render_template(TemplateStyle::kPlain, plain, 1) == "pre other");
  plain.prefix.clear();
  CHECK(render_template(TemplateStyle::kPlain, plain, 0) == "opt");
}

TEST_CASE("item validation") {
  MCQItem item = boolq_item();
  item.prefix.clear();
  CHECK_THROWS_WITH_AS(item.validate(), "item bq: boolq needs a question (prefix)",
                       std::invalid_argument);
  item = boolq_item();
  item.gold_index = 2;
  CHECK_THROWS_AS(item.validate(), std::invalid_argument);
  item.gold_index = 0;
  item.options = {"yes"};
  CHECK_THROWS_AS(item.validate(), std::invalid_argument);
  MCQItem piqa;
  piqa.style = TemplateStyle::kPiqa;
  piqa.options = {"a", "b"};
  CHECK_THROWS_WITH_AS(piqa.validate(), "item <unnamed>: piqa needs a goal (prefix)",
                       std::invalid_argument);
  CHECK_THROWS(template_style_from_string("hellaswag"));
}

TEST_CASE("id tokenizer") {
  const auto tok = id_tokenizer(9);
  CHECK(tok.encode("3 14  2\n7") == Document{3, 14, 2, 7});
  CHECK(tok.encode("") == Document{});
  CHECK_THROWS(tok.encode("3 x"));
  CHECK(byte_tokenizer().encode("hi") == Document{104, 105});
}

TEST_CASE("scoring only covers the option tokens") {
  RecursiveTransformer<double> model(parse("AB", 1), id_dims(12, 16), {});
  testing::randomize(model, 4);
  const auto tok = id_tokenizer(11);
  MCQItem item;
  item.id = "x";
  item.context = "1 2 3";
  item.prefix = "4";
  item.options = {"5 6", "7 8 9"};

  // Oracle: log-softmax of the unmasked forward. "5" is predicted at
  // position 4 (input 4) and "6" at position 5 (input 5).
  TokenBatch full(1, 6);
  full.ids = {11, 1, 2, 3, 4, 5};
  const Matrix<double> lp = log_softmax<double>(model.forward(full, 1));
  const double oracle = -(lp(4, 5) + lp(5, 6)) / 2.0;
  CHECK(score_option(model, item, 0, 1, tok) == doctest::Approx(oracle).epsilon(1e-12));

  ScoreOptions sum;
  sum.length_normalized = false;
  CHECK(score_option(model, item, 0, 1, tok, sum) ==
        doctest::Approx(2 * score_option(model, item, 0, 1, tok)).epsilon(1e-12));

  ScoreOptions all;
  all.full_sequence = true;
  double total = -lp(0, 1) - lp(1, 2) - lp(2, 3) - lp(3, 4) - lp(4, 5) - lp(5, 6);
  CHECK(score_option(model, item, 0, 1, tok, all) == doctest::Approx(total / 6).epsilon(1e-12));
}

TEST_CASE("ties, independence and permutation invariance") {
  RecursiveTransformer<double> model(parse("AB", 1), id_dims(12, 16), {});
  testing::randomize(model, 5);
  const auto tok = id_tokenizer(11);
  MCQItem item;
  item.context = "3 1 4";
  item.options = {"1 5", "9 2", "1 5", "6 5"};
  const auto res = eval_mcq(model, {item}, 1, tok);
  CHECK(res.scores[0][0] == res.scores[0][2]);
  CHECK(res.predictions[0] != 2);

  MCQItem changed = item;
  changed.options[1] = "8 8";
  changed.options[3] = "0 0";
  CHECK(score_option(model, changed, 0, 1, tok) == score_option(model, item, 0, 1, tok));

  auto items = make_random_task(60, 11, 3, 2);
  const auto base = eval_mcq(model, items, 1, tok);
  std::mt19937_64 rng(1);
  auto permuted = items;
  for (auto& it : permuted) {
    std::vector<int> perm(it.options.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> opts(it.options.size());
    for (std::size_t k = 0; k < perm.size(); ++k) opts[perm[k]] = it.options[k];
    it.gold_index = perm[it.gold_index];
    it.options = opts;
  }
  const auto after = eval_mcq(model, permuted, 1, tok);
  CHECK(after.correct == base.correct);
  CHECK(after.accuracy == base.accuracy);
}

TEST_CASE("untrained model scores at chance") {
  RecursiveTransformer<float> model(parse("AB", 1), id_dims(12, 16), {});
  model.init(3);
  const auto items = make_random_task(1000, 11, 3, 17);
  const auto res = eval_mcq(model, items, 1, id_tokenizer(11));
  const double sigma = std::sqrt(0.25 * 0.75 / 1000);
  MESSAGE("chance accuracy " << res.accuracy);
  CHECK(std::abs(res.accuracy - 0.25) < 2.576 * sigma);
  const auto [lo, hi] = binomial_interval(res.correct, res.n_items, 2.576);
  CHECK(lo < 0.25);
  CHECK(hi > 0.25);
}

TEST_CASE("copy task after memorization") {
  const int vocab = 9, eos = 8, len = 4;
  auto items = make_copy_task(24, eos, len, 4, 5);
  // Training rows are EOS, s, s: exactly the scored sequences.
  PackedRows rows;
  rows.seq_len = 2 * len;
  rows.eos = eos;
  const auto tok = id_tokenizer(eos);
  for (const auto& it : items) {
    const auto s = tok.encode(it.context);
    rows.tokens.push_back(eos);
    rows.tokens.insert(rows.tokens.end(), s.begin(), s.end());
    rows.tokens.insert(rows.tokens.end(), s.begin(), s.end());
  }
  ModelDims d = id_dims(vocab, 2 * len);
  d.d_model = 32;
  d.mlp_dim = 64;
  RecursiveTransformer<float> model(parse("AB", 1), d, {});
  model.init(7);
  const auto before = eval_mcq(model, items, 1, tok);
  TrainConfig cfg;
  cfg.peak_lr = 1e-2;
  cfg.total_steps = 400;
  cfg.batch_size = 24;
  cfg.eval_interval = 1000;
  train(model, rows, {}, cfg);
  const auto after = eval_mcq(model, items, 1, tok);
  MESSAGE("copy accuracy " << before.accuracy << " -> " << after.accuracy);
  CHECK(after.accuracy == 1.0);
}

TEST_CASE("recursive models score at any rounds") {
  RecursiveTransformer<double> model(parse("A^3B", 1), id_dims(12, 16),
                                     testing::rins_policy(3, true, true, 0.5));
  testing::randomize(model, 8);
  const auto items = make_random_task(5, 11, 2, 3);
  for (int r = 1; r <= 3; ++r) {
    const auto res = eval_mcq(model, items, r, id_tokenizer(11));
    CHECK(res.n_items == 5);
  }
  CHECK_THROWS_AS(eval_mcq(model, items, 4, id_tokenizer(11)), std::out_of_range);
}

TEST_CASE("context overflow names the item") {
  RecursiveTransformer<double> model(parse("AB", 1), id_dims(257, 16), {});
  model.init(1);
  const MCQItem item = boolq_item();
  CHECK_THROWS_WITH_AS(score_option(model, item, 0, 1, byte_tokenizer()),
                       doctest::Contains("item bq: option 0 needs"), ContextOverflow);
}

TEST_CASE("byte-level boolq scoring fits a long context") {
  RecursiveTransformer<double> model(parse("AB", 1), id_dims(257, 128), {});
  model.init(1);
  const auto res = eval_mcq(model, {boolq_item()}, 1, byte_tokenizer());
  CHECK(res.scores[0].size() == 2);
}

TEST_CASE("grammar task and jsonl round trip") {
  const auto items = make_grammar_task(default_grammar(0), 20, 6, 3, 4, 9);
  REQUIRE(items.size() == 20);
  for (const auto& it : items) {
    CHECK(it.options.size() == 4);
    CHECK(id_tokenizer(64).encode(it.context).size() == 6);
    CHECK(id_tokenizer(64).encode(it.options[it.gold_index]).size() == 3);
  }
  const auto dir = std::filesystem::temp_directory_path() / "rins_eval_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "t.jsonl").string();
  write_tasks(path, items);
  const auto back = read_tasks(path);
  REQUIRE(back.size() == items.size());
  CHECK(to_json(back[3]) == to_json(items[3]));
  MCQResult r;
  r.accuracy = 0.5;
  r.n_items = 20;
  const auto j = result_json("grammar", 2, r);
  CHECK(j.dump() == R"({"accuracy":0.5,"n_items":20,"rounds":2,"task":"grammar"})");
  std::filesystem::remove_all(dir);
}
