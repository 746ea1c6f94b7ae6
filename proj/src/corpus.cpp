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

#include "rins/corpus.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace rins {
namespace {

constexpr double kProbTolerance = 1e-9;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

Eigen::MatrixXd offspring_matrix(const GrammarSpec& spec) {
  const int n = spec.nonterminals();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (const auto& p : spec.rules[i]) {
      for (const auto& s : p.rhs) {
        if (!s.terminal) m(i, s.id) += p.prob;
      }
    }
  }
  return m;
}

void expand_into(const GrammarSpec& spec, int nonterminal, int depth,
                 std::mt19937_64& rng, Document& out) {
  const auto& options = spec.rules[nonterminal];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  std::size_t pick = options.size() - 1;
  for (std::size_t k = 0; k < options.size(); ++k) {
    if (u < options[k].prob) {
      pick = k;
      break;
    }
    u -= options[k].prob;
  }
  for (const auto& s : options[pick].rhs) {
    if (s.terminal) {
      out.push_back(s.id);
    } else if (depth + 1 < spec.depth_cap) {
      expand_into(spec, s.id, depth + 1, rng, out);
    }
  }
}

}  // namespace

void GrammarSpec::validate() const {
  require(terminal_vocab >= 1, "grammar.terminal_vocab: must be >= 1");
  require(depth_cap >= 1, "grammar.depth_cap: must be >= 1");
  require(!rules.empty(), "grammar.rules: need at least one nonterminal");
  for (int i = 0; i < nonterminals(); ++i) {
    const std::string where = "grammar.rules[" + std::to_string(i) + "]";
    require(!rules[i].empty(), where + ": no productions");
    double total = 0.0;
    for (const auto& p : rules[i]) {
      require(p.prob >= 0.0 && std::isfinite(p.prob),
              where + ": probabilities must be finite and non-negative");
      total += p.prob;
      for (const auto& s : p.rhs) {
        if (s.terminal) {
          require(s.id >= 0 && s.id < terminal_vocab,
                  where + ": terminal id out of range");
        } else {
          require(s.id >= 0 && s.id < nonterminals(),
                  where + ": nonterminal id out of range");
        }
      }
    }
    require(std::abs(total - 1.0) < kProbTolerance,
            where + ": probabilities must sum to 1");
  }
  require(offspring_radius() < 1.0,
          "grammar.rules: expected expansion is infinite without the depth cap");
}

double GrammarSpec::offspring_radius() const {
  const Eigen::MatrixXd m = offspring_matrix(*this);
  if (m.size() == 0) return 0.0;
  return Eigen::EigenSolver<Eigen::MatrixXd>(m, false).eigenvalues().cwiseAbs().maxCoeff();
}

nlohmann::json to_json(const GrammarSpec& spec) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& options : spec.rules) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& p : options) {
      nlohmann::json rhs = nlohmann::json::array();
      for (const auto& s : p.rhs) {
        rhs.push_back(s.terminal ? "t" + std::to_string(s.id)
                                 : "N" + std::to_string(s.id));
      }
      list.push_back({{"rhs", rhs}, {"prob", p.prob}});
    }
    rules.push_back(list);
  }
  return {{"terminal_vocab", spec.terminal_vocab},
          {"depth_cap", spec.depth_cap},
          {"seed", spec.seed},
          {"rules", rules}};
}

GrammarSpec grammar_from_json(const nlohmann::json& j) {
  GrammarSpec spec;
  spec.terminal_vocab = j.at("terminal_vocab").get<int>();
  spec.depth_cap = j.at("depth_cap").get<int>();
  spec.seed = j.value("seed", std::uint64_t{0});
  for (const auto& list : j.at("rules")) {
    std::vector<Production> options;
    for (const auto& pj : list) {
      Production p;
      p.prob = pj.at("prob").get<double>();
      for (const auto& sj : pj.at("rhs")) {
        const auto text = sj.get<std::string>();
        require(text.size() >= 2 && (text[0] == 't' || text[0] == 'N'),
                "grammar.rules: bad symbol '" + text + "'");
        p.rhs.push_back({text[0] == 't', std::stoi(text.substr(1))});
      }
      options.push_back(std::move(p));
    }
    spec.rules.push_back(std::move(options));
  }
  return spec;
}

GrammarSpec default_grammar(std::uint64_t seed) {
  constexpr int kNonterminals = 4;
  constexpr int kProductions = 6;
  constexpr int kVocab = 64;
  constexpr int kBand = kVocab / kNonterminals;
  constexpr double kNonterminalSlot = 0.34;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::gamma_distribution<double> weight(1.0, 1.0);
  std::uniform_int_distribution<int> any_nt(0, kNonterminals - 1);
  std::uniform_int_distribution<int> any_t(0, kVocab - 1);
  std::uniform_int_distribution<int> band_t(0, kBand - 1);

  GrammarSpec spec;
  spec.terminal_vocab = kVocab;
  spec.depth_cap = 8;
  spec.seed = seed;
  // Redraw until the grammar is comfortably subcritical but still nests.
  for (;;) {
    spec.rules.assign(kNonterminals, {});
    for (int i = 0; i < kNonterminals; ++i) {
      double total = 0.0;
      for (int k = 0; k < kProductions; ++k) {
        Production p;
        const int length = unit(rng) < 0.5 ? 2 : 3;
        for (int s = 0; s < length; ++s) {
          if (unit(rng) < kNonterminalSlot) {
            p.rhs.push_back({false, any_nt(rng)});
          } else if (unit(rng) < 0.75) {
            p.rhs.push_back({true, i * kBand + band_t(rng)});
          } else {
            p.rhs.push_back({true, any_t(rng)});
          }
        }
        p.prob = weight(rng) + 0.05;
        total += p.prob;
        spec.rules[i].push_back(std::move(p));
      }
      for (auto& p : spec.rules[i]) p.prob /= total;
      // Exact normalization: fold rounding into the last production.
      double head = 0.0;
      for (int k = 0; k + 1 < kProductions; ++k) head += spec.rules[i][k].prob;
      spec.rules[i].back().prob = 1.0 - head;
    }
    const double radius = spec.offspring_radius();
    if (radius > 0.7 && radius < 0.9) break;
  }
  spec.validate();
  return spec;
}

Document sample_document(const GrammarSpec& spec, std::mt19937_64& rng) {
  Document doc;
  expand_into(spec, 0, 0, rng, doc);
  return doc;
}

std::vector<Document> generate_corpus(const GrammarSpec& spec,
                                      std::int64_t n_tokens) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<Document> docs;
  std::int64_t emitted = 0;
  while (emitted < n_tokens) {
    Document doc = sample_document(spec, rng);
    if (doc.empty()) continue;
    emitted += static_cast<std::int64_t>(doc.size());
    docs.push_back(std::move(doc));
  }
  return docs;
}

Document encode_bytes(std::string_view text) {
  Document ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string decode_bytes(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids) {
    require(id >= 0 && id < 256, "decode_bytes: id " + std::to_string(id) +
                                     " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

std::vector<std::int32_t> join_documents(const std::vector<Document>& docs,
                                         std::int32_t eos) {
  std::vector<std::int32_t> stream;
  std::size_t total = docs.size();
  for (const auto& d : docs) total += d.size();
  stream.reserve(total);
  for (const auto& d : docs) {
    stream.insert(stream.end(), d.begin(), d.end());
    stream.push_back(eos);
  }
  return stream;
}

PackedRows pack_stream(std::span<const std::int32_t> stream, int seq_len,
                       std::int32_t eos) {
  require(seq_len >= 2, "pack: seq_len must be >= 2");
  PackedRows rows;
  rows.seq_len = seq_len;
  rows.eos = eos;
  const std::size_t w = static_cast<std::size_t>(seq_len) + 1;
  const std::size_t n = stream.size() / w;
  rows.tokens.assign(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(n * w));
  return rows;
}

PackedRows pack_documents(const std::vector<Document>& docs, int seq_len,
                          std::int32_t eos) {
  const auto stream = join_documents(docs, eos);
  return pack_stream(stream, seq_len, eos);
}

PackedBatch make_batch(const PackedRows& rows,
                       std::span<const std::size_t> row_indices) {
  const int seq = rows.seq_len;
  PackedBatch out;
  out.tokens = TokenBatch(static_cast<int>(row_indices.size()), seq);
  out.targets.resize(out.tokens.size());
  out.segments.resize(out.tokens.size());
  for (std::size_t b = 0; b < row_indices.size(); ++b) {
    const auto row = rows.row(row_indices[b]);
    int segment = 0;
    for (int t = 0; t < seq; ++t) {
      const std::size_t k = b * seq + t;
      out.tokens.ids[k] = row[t];
      out.targets[k] = row[t + 1];
      out.segments[k] = segment;
      if (row[t] == rows.eos) {
        ++segment;
        ++out.eos_count;
      }
    }
  }
  return out;
}

PackedBatch cyclic_batch(const PackedRows& rows, std::int64_t step,
                         int batch_size) {
  const std::size_t n = rows.rows();
  require(n > 0, "cyclic_batch: no packed rows");
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  const auto base = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size);
  for (int i = 0; i < batch_size; ++i) idx[i] = static_cast<std::size_t>((base + i) % n);
  return make_batch(rows, idx);
}

BatchIterator::BatchIterator(const PackedRows& rows, int batch_size)
    : rows_(rows), batch_size_(batch_size) {
  require(batch_size >= 1, "batch_size must be >= 1");
}

std::optional<PackedBatch> BatchIterator::next() {
  if (cursor_ >= rows_.rows()) return std::nullopt;
  const std::size_t end = std::min(rows_.rows(), cursor_ + batch_size_);
  std::vector<std::size_t> idx;
  for (std::size_t i = cursor_; i < end; ++i) idx.push_back(i);
  cursor_ = end;
  return make_batch(rows_, idx);
}

void write_token_file(const std::string& path,
                      std::span<const std::int32_t> tokens,
                      const nlohmann::json& metadata) {
  static_assert(std::endian::native == std::endian::little,
                "token files are little-endian");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(tokens.data()),
              static_cast<std::streamsize>(tokens.size_bytes()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
  nlohmann::json meta = metadata;
  meta["count"] = tokens.size();
  meta["dtype"] = "int32le";
  std::ofstream side(path + ".json");
  side << meta.dump(2) << "\n";
}

TokenFile read_token_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open token file " + path);
  const auto bytes = std::filesystem::file_size(path);
  if (bytes % sizeof(std::int32_t) != 0) {
    throw std::runtime_error(path + ": size is not a multiple of 4 bytes");
  }
  TokenFile file;
  file.tokens.resize(bytes / sizeof(std::int32_t));
  in.read(reinterpret_cast<char*>(file.tokens.data()),
          static_cast<std::streamsize>(bytes));
  file.metadata = nlohmann::json::object();
  std::ifstream side(path + ".json");
  if (side) file.metadata = nlohmann::json::parse(side);
  return file;
}

std::vector<Document> read_text_documents(const std::string& path,
                                          bool split_paragraphs) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open text file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<Document> docs;
  if (!split_paragraphs) {
    if (!text.empty()) docs.push_back(encode_bytes(text));
    return docs;
  }
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find("\n\n", start);
    if (end == std::string::npos) end = text.size();
    std::string_view para(text.data() + start, end - start);
    while (!para.empty() && para.front() == '\n') para.remove_prefix(1);
    if (!para.empty()) docs.push_back(encode_bytes(para));
    start = end + 2;
  }
  return docs;
}

TokenFile load_corpus(const std::string& reference) {
  TokenFile out;
  if (reference.rfind("grammar:", 0) == 0) {
    const auto rest = reference.substr(8);
    const auto colon = rest.find(':');
    require(colon != std::string::npos,
            "corpus: expected grammar:<seed>:<n_tokens>[:<sample_seed>], got '" + reference + "'");
    const auto seed = std::stoull(rest.substr(0, colon));
    auto tail = rest.substr(colon + 1);
    const auto colon2 = tail.find(':');
    const auto n = std::stoll(tail.substr(0, colon2));
    GrammarSpec spec = default_grammar(seed);
    // An optional fourth field reseeds sampling: same grammar, fresh documents.
    if (colon2 != std::string::npos) spec.seed = std::stoull(tail.substr(colon2 + 1));
    const std::int32_t eos = spec.terminal_vocab;
    out.tokens = join_documents(generate_corpus(spec, n), eos);
    out.metadata = {{"tokenizer", "grammar"}, {"grammar", to_json(spec)},
                    {"seed", seed}, {"sample_seed", spec.seed}, {"vocab", eos + 1}, {"eos", eos}};
    return out;
  }
  if (reference.rfind("text:", 0) == 0) {
    const auto path = reference.substr(5);
    out.tokens = join_documents(read_text_documents(path), kByteEos);
    out.metadata = {{"tokenizer", "bytes"}, {"source", path},
                    {"vocab", kByteVocab}, {"eos", kByteEos}};
    return out;
  }
  out = read_token_file(reference);
  require(out.metadata.contains("vocab") && out.metadata.contains("eos"),
          "corpus: " + reference + ".json must define vocab and eos");
  return out;
}

}  // namespace rins
