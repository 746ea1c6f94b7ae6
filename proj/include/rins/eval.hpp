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

#ifndef RINS_EVAL_HPP_
#define RINS_EVAL_HPP_

// Zero-shot multiple-choice scoring. Each option is appended to its prompt,
// the sequence is run causally, and the option scores its mean next-token
// loss; the lowest score wins.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rins/corpus.hpp"
#include "rins/model.hpp"

namespace rins {

enum class TemplateStyle { kPlain, kBoolq, kPiqa };

const char* to_string(TemplateStyle style);
TemplateStyle template_style_from_string(const std::string& s);

// For boolq, `context` is the passage and `prefix` the question. For piqa,
// `prefix` is the goal and each option a solution.
struct MCQItem {
  std::string id;
  std::string context;
  std::string prefix;
  std::vector<std::string> options;
  int gold_index = 0;
  TemplateStyle style = TemplateStyle::kPlain;

  // Throws std::invalid_argument for < 2 options, a bad gold index, or a
  // field the style needs being empty.
  void validate() const;
};

nlohmann::json to_json(const MCQItem& item);
MCQItem mcq_from_json(const nlohmann::json& j);

// Text split into the conditioning part and the scored option span.
struct RenderedOption {
  std::string conditioning;
  std::string option;

  std::string text() const { return conditioning + option; }
};

RenderedOption render_option(const MCQItem& item, int option_index);

// Full text of `item` with option `option_index` under `style`.
std::string render_template(TemplateStyle style, const MCQItem& item,
                            int option_index);

struct Tokenizer {
  std::int32_t bos = kByteEos;  // prepended to every scored sequence
  std::function<Document(std::string_view)> encode;
};

Tokenizer byte_tokenizer();
// Whitespace-separated decimal ids, e.g. "12 7 3"; `bos` is usually the
// corpus EOS id.
Tokenizer id_tokenizer(std::int32_t bos);

class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct ScoreOptions {
  bool length_normalized = true;  // mean over scored tokens; else the sum
  bool full_sequence = false;     // score every token, not just the option
  bool mask_reset = false;
};

// Loss of the option tokens given the conditioning. Throws ContextOverflow
// naming the item when the sequence does not fit the model's context.
template <typename T>
double score_option(const RecursiveTransformer<T>& model, const MCQItem& item,
                    int option_index, int rounds, const Tokenizer& tokenizer,
                    const ScoreOptions& options = {});

struct MCQResult {
  double accuracy = 0;
  int n_items = 0;
  int correct = 0;
  std::vector<int> predictions;
  std::vector<std::vector<double>> scores;  // [item][option]
};

// Argmin score per item, ties to the lowest option index.
template <typename T>
MCQResult eval_mcq(const RecursiveTransformer<T>& model,
                   const std::vector<MCQItem>& items, int rounds,
                   const Tokenizer& tokenizer, const ScoreOptions& options = {});

// Wilson 95% interval for k successes out of n.
std::pair<double, double> binomial_interval(int k, int n, double z = 1.96);

// JSONL task files: one {context, prefix, options, gold_index, style, id}
// object per line.
std::vector<MCQItem> read_tasks(const std::string& path);
void write_tasks(const std::string& path, const std::vector<MCQItem>& items);

nlohmann::json result_json(const std::string& task, int rounds,
                           const MCQResult& result);

// Synthetic desk-scale tasks, written with id_tokenizer text.

// Four options of `option_len` random ids from [0, vocab); gold is random.
std::vector<MCQItem> make_random_task(int n_items, int vocab, int option_len,
                                      std::uint64_t seed);

// Context is a random id string; the gold option repeats it, distractors are
// other random strings of the same length.
std::vector<MCQItem> make_copy_task(int n_items, int vocab, int length,
                                    int n_options, std::uint64_t seed);

// Context is the start of a grammar document; the gold option is its true
// continuation, distractors are continuations taken from other documents.
std::vector<MCQItem> make_grammar_task(const GrammarSpec& spec, int n_items,
                                       int context_len, int option_len,
                                       int n_options, std::uint64_t seed);

}  // namespace rins

#endif  // RINS_EVAL_HPP_
