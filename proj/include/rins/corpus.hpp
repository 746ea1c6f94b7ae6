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

#ifndef RINS_CORPUS_HPP_
#define RINS_CORPUS_HPP_

// Token corpora: a probabilistic grammar generator, a byte-level tokenizer,
// and packing of documents into fixed-length training rows.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rins/tensor.hpp"

namespace rins {

using Document = std::vector<std::int32_t>;

// ---------------------------------------------------------------------------
// Grammar

// One right-hand-side symbol. Nonterminals are numbered from 0; nonterminal
// 0 is the start symbol.
struct GrammarSymbol {
  bool terminal = true;
  int id = 0;

  friend bool operator==(const GrammarSymbol&, const GrammarSymbol&) = default;
};

struct Production {
  std::vector<GrammarSymbol> rhs;
  double prob = 0.0;
};

struct GrammarSpec {
  int terminal_vocab = 64;
  int depth_cap = 8;
  std::uint64_t seed = 0;
  std::vector<std::vector<Production>> rules;  // rules[nonterminal]

  int nonterminals() const { return static_cast<int>(rules.size()); }

  // Checks symbol ranges, that each nonterminal's probabilities sum to 1,
  // and that the expected expansion is finite without the depth cap (the
  // spectral radius of the mean offspring matrix is below 1). Throws
  // std::invalid_argument.
  void validate() const;

  // Spectral radius of M, where M[i][j] is the expected number of
  // nonterminal j in one expansion of nonterminal i.
  double offspring_radius() const;
};

nlohmann::json to_json(const GrammarSpec& spec);
GrammarSpec grammar_from_json(const nlohmann::json& j);

// Four nonterminals with right-hand sides of two or three symbols over a
// 64-terminal vocabulary, depth cap 8. Production shapes, terminals and
// probabilities are drawn from `seed`.
GrammarSpec default_grammar(std::uint64_t seed = 0);

// Samples one document from the start symbol. Nonterminals below the depth
// cap expand; at the cap they are dropped.
Document sample_document(const GrammarSpec& spec, std::mt19937_64& rng);

// Samples documents until at least `n_tokens` terminals have been emitted.
// Empty documents are discarded. Deterministic in spec.seed.
std::vector<Document> generate_corpus(const GrammarSpec& spec,
                                      std::int64_t n_tokens);

// ---------------------------------------------------------------------------
// Byte tokenizer: ids 0-255 are bytes, 256 is end-of-document.

inline constexpr std::int32_t kByteEos = 256;
inline constexpr int kByteVocab = 257;

Document encode_bytes(std::string_view text);
// Throws std::invalid_argument on ids outside 0-255.
std::string decode_bytes(std::span<const std::int32_t> ids);

// ---------------------------------------------------------------------------
// Packing

// Documents joined with an EOS after each one, cut into non-overlapping
// windows of seq_len + 1 tokens. The trailing remainder is dropped.
struct PackedRows {
  int seq_len = 0;
  std::int32_t eos = 0;
  std::vector<std::int32_t> tokens;  // rows() * (seq_len + 1)

  std::size_t rows() const {
    return seq_len > 0 ? tokens.size() / (static_cast<std::size_t>(seq_len) + 1) : 0;
  }
  std::span<const std::int32_t> row(std::size_t i) const {
    const std::size_t w = static_cast<std::size_t>(seq_len) + 1;
    return {tokens.data() + i * w, w};
  }
};

struct PackedBatch {
  TokenBatch tokens;                  // batch x seq_len
  std::vector<std::int32_t> targets;  // tokens shifted by one
  // Document index of each token position within its row; increments after
  // every EOS.
  std::vector<int> segments;
  std::int64_t eos_count = 0;  // EOS tokens among the inputs
};

// Joins documents, appending `eos` after each.
std::vector<std::int32_t> join_documents(const std::vector<Document>& docs,
                                         std::int32_t eos);

// Throws std::invalid_argument when seq_len < 2. A stream shorter than one
// window yields zero rows.
PackedRows pack_stream(std::span<const std::int32_t> stream, int seq_len,
                       std::int32_t eos);
PackedRows pack_documents(const std::vector<Document>& docs, int seq_len,
                          std::int32_t eos);

// Assembles a batch from the listed rows.
PackedBatch make_batch(const PackedRows& rows,
                       std::span<const std::size_t> row_indices);

// Rows (step * batch_size + i) mod rows() for i in [0, batch_size): the data
// repeats cyclically once exhausted.
PackedBatch cyclic_batch(const PackedRows& rows, std::int64_t step,
                         int batch_size);

// Walks the rows in order, batch_size at a time; the last batch may be
// partial.
class BatchIterator {
 public:
  BatchIterator(const PackedRows& rows, int batch_size);
  std::optional<PackedBatch> next();

 private:
  const PackedRows& rows_;
  int batch_size_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence

// Raw little-endian int32 ids at `path`; `path` + ".json" holds metadata.
void write_token_file(const std::string& path,
                      std::span<const std::int32_t> tokens,
                      const nlohmann::json& metadata);

struct TokenFile {
  std::vector<std::int32_t> tokens;
  nlohmann::json metadata;
};

// Sidecar is optional; metadata is an empty object when it is missing.
TokenFile read_token_file(const std::string& path);

// Reads a text file as byte tokens. With `split_paragraphs`, blank lines
// separate documents; otherwise the file is one document.
std::vector<Document> read_text_documents(const std::string& path,
                                          bool split_paragraphs = true);

// Corpus reference used by configs: "grammar:<seed>:<n_tokens>" samples
// default_grammar(seed), and "grammar:<seed>:<n_tokens>:<sample_seed>"
// draws different documents from that same grammar (held-out splits);
// "text:<path>" ingests a text file, anything else is
// a token file path. Returns the joined stream (EOS-terminated documents)
// and its metadata, which includes "vocab" and "eos".
TokenFile load_corpus(const std::string& reference);

}  // namespace rins

#endif  // RINS_CORPUS_HPP_
