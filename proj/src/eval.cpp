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

#include "rins/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rins {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::string item_name(const MCQItem& item) {
  return item.id.empty() ? std::string("<unnamed>") : item.id;
}

std::string ids_text(const std::vector<std::int32_t>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<std::int32_t> random_ids(int n, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = pick(rng);
  return out;
}

// Places the gold option at a random index among the distractors.
MCQItem assemble(std::string id, std::string context, std::string gold,
                 std::vector<std::string> distractors, std::mt19937_64& rng) {
  MCQItem item;
  item.id = std::move(id);
  item.context = std::move(context);
  std::uniform_int_distribution<int> slot(0, static_cast<int>(distractors.size()));
  item.gold_index = slot(rng);
  item.options = std::move(distractors);
  item.options.insert(item.options.begin() + item.gold_index, std::move(gold));
  return item;
}

}  // namespace

const char* to_string(TemplateStyle style) {
  switch (style) {
    case TemplateStyle::kPlain: return "plain";
    case TemplateStyle::kBoolq: return "boolq";
    case TemplateStyle::kPiqa: return "piqa";
  }
  return "plain";
}

TemplateStyle template_style_from_string(const std::string& s) {
  if (s == "plain") return TemplateStyle::kPlain;
  if (s == "boolq") return TemplateStyle::kBoolq;
  if (s == "piqa") return TemplateStyle::kPiqa;
  throw std::invalid_argument("unknown template style '" + s + "'");
}

void MCQItem::validate() const {
  const std::string where = "item " + item_name(*this);
  require(options.size() >= 2, where + ": needs at least 2 options");
  require(gold_index >= 0 && gold_index < static_cast<int>(options.size()),
          where + ": gold_index out of range");
  if (style == TemplateStyle::kBoolq) {
    require(!context.empty(), where + ": boolq needs a passage (context)");
    require(!prefix.empty(), where + ": boolq needs a question (prefix)");
  }
  if (style == TemplateStyle::kPiqa) {
    require(!prefix.empty(), where + ": piqa needs a goal (prefix)");
  }
}

nlohmann::json to_json(const MCQItem& item) {
  return {{"id", item.id},           {"context", item.context},
          {"prefix", item.prefix},   {"options", item.options},
          {"gold_index", item.gold_index}, {"style", to_string(item.style)}};
}

MCQItem mcq_from_json(const nlohmann::json& j) {
  MCQItem item;
  item.id = j.value("id", std::string());
  item.context = j.value("context", std::string());
  item.prefix = j.value("prefix", std::string());
  item.options = j.at("options").get<std::vector<std::string>>();
  item.gold_index = j.at("gold_index").get<int>();
  item.style = template_style_from_string(j.value("style", std::string("plain")));
  return item;
}

RenderedOption render_option(const MCQItem& item, int option_index) {
  item.validate();
  require(option_index >= 0 && option_index < static_cast<int>(item.options.size()),
          "item " + item_name(item) + ": option index out of range");
  const std::string& option = item.options[option_index];
  RenderedOption out;
  switch (item.style) {
    case TemplateStyle::kPlain: {
      for (const auto* part : {&item.context, &item.prefix}) {
        if (!part->empty()) out.conditioning += *part + " ";
      }
      out.option = option;
      break;
    }
    case TemplateStyle::kBoolq:
      out.conditioning = item.context + " Based on this, the answer to the question: " +
                         item.prefix + ", is: ";
      out.option = option;
      break;
    case TemplateStyle::kPiqa:
      out.conditioning = "The goal is: " + item.prefix + " The solution is: ";
      out.option = option + ".";
      break;
  }
  return out;
}

std::string render_template(TemplateStyle style, const MCQItem& item,
                            int option_index) {
  MCQItem styled = item;
  styled.style = style;
  return render_option(styled, option_index).text();
}

Tokenizer byte_tokenizer() {
  return {kByteEos, [](std::string_view s) { return encode_bytes(s); }};
}

Tokenizer id_tokenizer(std::int32_t bos) {
  return {bos, [](std::string_view s) {
            Document ids;
            std::istringstream in{std::string(s)};
            std::string word;
            while (in >> word) {
              std::size_t used = 0;
              const long v = std::stol(word, &used);
              require(used == word.size(), "id_tokenizer: bad id '" + word + "'");
              ids.push_back(static_cast<std::int32_t>(v));
            }
            return ids;
          }};
}

template <typename T>
double score_option(const RecursiveTransformer<T>& model, const MCQItem& item,
                    int option_index, int rounds, const Tokenizer& tokenizer,
                    const ScoreOptions& options) {
  const RenderedOption r = render_option(item, option_index);
  const Document cond = tokenizer.encode(r.conditioning);
  const Document opt = tokenizer.encode(r.option);
  if (opt.empty()) {
    throw std::invalid_argument("item " + item_name(item) + ": option " +
                                std::to_string(option_index) + " is empty");
  }
  Document seq;
  seq.reserve(cond.size() + opt.size() + 1);
  seq.push_back(tokenizer.bos);
  seq.insert(seq.end(), cond.begin(), cond.end());
  seq.insert(seq.end(), opt.begin(), opt.end());
  const int n = static_cast<int>(seq.size()) - 1;
  if (n > model.dims().seq_len) {
    throw ContextOverflow("item " + item_name(item) + ": option " +
                          std::to_string(option_index) + " needs " + std::to_string(n) +
                          " positions, context is " +
                          std::to_string(model.dims().seq_len));
  }
  TokenBatch tokens(1, n);
  std::vector<std::int32_t> targets(static_cast<std::size_t>(n));
  const int first_scored = options.full_sequence ? 0 : static_cast<int>(cond.size());
  for (int t = 0; t < n; ++t) {
    tokens.ids[t] = seq[t];
    targets[t] = t >= first_scored ? seq[t + 1] : kIgnoreTarget;
  }
  std::vector<int> segments;
  if (options.mask_reset) {
    int s = 0;
    for (int t = 0; t < n; ++t) {
      segments.push_back(s);
      if (t > 0 && seq[t] == tokenizer.bos) ++s;
    }
  }
  const double mean = static_cast<double>(model.loss(tokens, targets, rounds, segments));
  const int scored = n - first_scored;
  return options.length_normalized ? mean : mean * scored;
}

template <typename T>
MCQResult eval_mcq(const RecursiveTransformer<T>& model,
                   const std::vector<MCQItem>& items, int rounds,
                   const Tokenizer& tokenizer, const ScoreOptions& options) {
  require(!items.empty(), "eval_mcq: no items");
  MCQResult result;
  result.n_items = static_cast<int>(items.size());
  for (const auto& item : items) {
    std::vector<double> scores;
    for (int k = 0; k < static_cast<int>(item.options.size()); ++k) {
      scores.push_back(score_option(model, item, k, rounds, tokenizer, options));
    }
    // min_element returns the first minimum: ties go to the lowest index.
    const int pred = static_cast<int>(std::min_element(scores.begin(), scores.end()) -
                                      scores.begin());
    result.predictions.push_back(pred);
    result.correct += pred == item.gold_index;
    result.scores.push_back(std::move(scores));
  }
  result.accuracy = static_cast<double>(result.correct) / result.n_items;
  return result;
}

std::pair<double, double> binomial_interval(int k, int n, double z) {
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {centre - half, centre + half};
}

std::vector<MCQItem> read_tasks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task file " + path);
  std::vector<MCQItem> items;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      MCQItem item = mcq_from_json(nlohmann::json::parse(line));
      if (item.id.empty()) item.id = path + ":" + std::to_string(lineno);
      item.validate();
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

void write_tasks(const std::string& path, const std::vector<MCQItem>& items) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& item : items) out << to_json(item).dump() << "\n";
}

nlohmann::json result_json(const std::string& task, int rounds,
                           const MCQResult& result) {
  return {{"task", task},
          {"rounds", rounds},
          {"accuracy", result.accuracy},
          {"n_items", result.n_items}};
}

std::vector<MCQItem> make_random_task(int n_items, int vocab, int option_len,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<MCQItem> items;
  for (int i = 0; i < n_items; ++i) {
    std::vector<std::string> distractors;
    for (int k = 0; k < 3; ++k) distractors.push_back(ids_text(random_ids(option_len, vocab, rng)));
    const std::string gold = ids_text(random_ids(option_len, vocab, rng));
    items.push_back(assemble("random-" + std::to_string(i), "", gold,
                             std::move(distractors), rng));
  }
  return items;
}

std::vector<MCQItem> make_copy_task(int n_items, int vocab, int length,
                                    int n_options, std::uint64_t seed) {
  require(n_options >= 2, "make_copy_task: n_options must be >= 2");
  std::mt19937_64 rng(seed);
  std::vector<MCQItem> items;
  for (int i = 0; i < n_items; ++i) {
    const auto ids = random_ids(length, vocab, rng);
    std::vector<std::string> distractors;
    while (static_cast<int>(distractors.size()) < n_options - 1) {
      const auto other = random_ids(length, vocab, rng);
      if (other != ids) distractors.push_back(ids_text(other));
    }
    items.push_back(assemble("copy-" + std::to_string(i), ids_text(ids), ids_text(ids),
                             std::move(distractors), rng));
  }
  return items;
}

std::vector<MCQItem> make_grammar_task(const GrammarSpec& spec, int n_items,
                                       int context_len, int option_len,
                                       int n_options, std::uint64_t seed) {
  require(n_options >= 2, "make_grammar_task: n_options must be >= 2");
  GrammarSpec g = spec;
  g.seed = seed;
  g.validate();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t need = static_cast<std::size_t>(context_len + option_len);
  std::vector<Document> docs;
  std::int64_t attempts = 0;
  while (static_cast<int>(docs.size()) < n_items * n_options) {
    Document d = sample_document(g, rng);
    if (d.size() >= need) docs.push_back(std::move(d));
    if (++attempts > 1000000) {
      throw std::runtime_error("make_grammar_task: grammar rarely yields documents of " +
                               std::to_string(need) + " tokens");
    }
  }
  std::vector<MCQItem> items;
  for (int i = 0; i < n_items; ++i) {
    const Document& doc = docs[static_cast<std::size_t>(i) * n_options];
    const Document context(doc.begin(), doc.begin() + context_len);
    const Document gold(doc.begin() + context_len, doc.begin() + need);
    std::vector<std::string> distractors;
    for (int k = 1; k < n_options; ++k) {
      const Document& other = docs[static_cast<std::size_t>(i) * n_options + k];
      std::uniform_int_distribution<std::size_t> start(0, other.size() - option_len);
      const std::size_t s = start(rng);
      distractors.push_back(ids_text(Document(other.begin() + s, other.begin() + s + option_len)));
    }
    items.push_back(assemble("grammar-" + std::to_string(i), ids_text(context), ids_text(gold),
                             std::move(distractors), rng));
  }
  return items;
}

#define RINS_INSTANTIATE_EVAL(T)                                              \
  template double score_option(const RecursiveTransformer<T>&, const MCQItem&, \
                               int, int, const Tokenizer&, const ScoreOptions&); \
  template MCQResult eval_mcq(const RecursiveTransformer<T>&,                 \
                              const std::vector<MCQItem>&, int,               \
                              const Tokenizer&, const ScoreOptions&);

RINS_INSTANTIATE_EVAL(float)
RINS_INSTANTIATE_EVAL(double)

}  // namespace rins
