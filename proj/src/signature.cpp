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

#include "rins/signature.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <limits>
#include <set>

namespace rins {
namespace {

// Upper bound on the flattened plan length; keeps degree explosions from
// exhausting memory.
constexpr std::int64_t kMaxPlanLength = std::int64_t{1} << 22;
constexpr int kMaxExponent = 4096;

std::int64_t checked_pow(std::int64_t base, int exp) {
  std::int64_t out = 1;
  for (int i = 0; i < exp; ++i) {
    if (out > kMaxPlanLength * 64 / std::max<std::int64_t>(base, 1)) {
      throw std::length_error("signature expansion too large");
    }
    out *= base;
  }
  return out;
}

}  // namespace

int Signature::distinct() const {
  std::set<char> seen(symbols.begin(), symbols.end());
  return static_cast<int>(seen.size());
}

std::string Signature::render_spec() const {
  return symbols + "@d" + std::to_string(degree);
}

std::string canonicalize(std::string_view symbols) {
  std::array<char, 256> rename{};
  char next = 'A';
  std::string out;
  out.reserve(symbols.size());
  for (char c : symbols) {
    auto& slot = rename[static_cast<unsigned char>(c)];
    if (slot == 0) slot = next++;
    out.push_back(slot);
  }
  return out;
}

Signature parse(std::string_view text, int degree) {
  if (degree < 1) {
    throw std::domain_error("signature degree must be >= 1, got " +
                            std::to_string(degree));
  }
  if (text.empty()) throw SignatureParseError("empty signature", 0);
  std::string flat;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (!std::isalpha(static_cast<unsigned char>(c))) {
      throw SignatureParseError(
          std::string("expected a block letter at position ") +
              std::to_string(i) + ", got '" + c + "'",
          i);
    }
    const char label =
        static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    ++i;
    int count = 1;
    if (i < text.size() && text[i] == '^') {
      const std::size_t exp_pos = i + 1;
      std::size_t j = exp_pos;
      long value = 0;
      while (j < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[j]))) {
        value = value * 10 + (text[j] - '0');
        if (value > kMaxExponent) {
          throw SignatureParseError("exponent too large", exp_pos);
        }
        ++j;
      }
      if (j == exp_pos) {
        throw SignatureParseError(
            "expected an integer exponent at position " +
                std::to_string(exp_pos),
            exp_pos);
      }
      if (value < 1) {
        throw SignatureParseError(
            "exponent must be >= 1 at position " + std::to_string(exp_pos),
            exp_pos);
      }
      count = static_cast<int>(value);
      i = j;
    }
    flat.append(static_cast<std::size_t>(count), label);
  }
  Signature sig{canonicalize(flat), degree};
  if (sig.distinct() > 26) {
    throw SignatureParseError("more than 26 distinct blocks", 0);
  }
  return sig;
}

Signature parse_spec(std::string_view text) {
  const auto at = text.find('@');
  if (at == std::string_view::npos) return parse(text, 1);
  const std::string_view tail = text.substr(at + 1);
  if (tail.size() < 2 || (tail[0] != 'd' && tail[0] != 'D')) {
    throw SignatureParseError("expected '@d<degree>' suffix", at);
  }
  int degree = 0;
  for (std::size_t k = 1; k < tail.size(); ++k) {
    if (!std::isdigit(static_cast<unsigned char>(tail[k]))) {
      throw SignatureParseError("degree must be an integer", at + 1 + k);
    }
    degree = degree * 10 + (tail[k] - '0');
    if (degree > 64) throw SignatureParseError("degree too large", at + 1);
  }
  return parse(text.substr(0, at), degree);
}

std::string leaf_label(int id) {
  std::string out;
  int n = id + 1;
  while (n > 0) {
    const int rem = (n - 1) % 26;
    out.insert(out.begin(), static_cast<char>('A' + rem));
    n = (n - 1) / 26;
  }
  return out;
}

std::string ExecutionPlan::render() const {
  std::string out;
  for (int id : leaf_sequence) out += leaf_label(id);
  return out;
}

std::int64_t unique_leaf_count(const Signature& sig) {
  return checked_pow(sig.distinct(), sig.degree);
}

namespace {

// Leaf ids for one copy of the signature at `degree`, using leaf ids
// [0, u^degree). Symbol k at the outer level owns the id range
// [k * u^(degree-1), (k+1) * u^(degree-1)).
void expand_into(const std::vector<int>& symbol_index, int u, int degree,
                 int offset, std::vector<int>& out) {
  if (degree == 1) {
    for (int s : symbol_index) out.push_back(offset + s);
    return;
  }
  int span = 1;
  for (int d = 1; d < degree; ++d) span *= u;
  for (int s : symbol_index) {
    expand_into(symbol_index, u, degree - 1, offset + s * span, out);
  }
}

}  // namespace

ExecutionPlan expand(const Signature& sig) {
  if (sig.symbols.empty() || sig.degree < 1) {
    throw std::invalid_argument("invalid signature");
  }
  const std::string canonical = canonicalize(sig.symbols);
  const int u = sig.distinct();
  const std::int64_t length =
      checked_pow(static_cast<std::int64_t>(canonical.size()), sig.degree);
  const std::int64_t unique = checked_pow(u, sig.degree);
  if (length > kMaxPlanLength) {
    throw std::length_error("signature expansion too large");
  }

  std::vector<int> symbol_index;
  symbol_index.reserve(canonical.size());
  for (char c : canonical) symbol_index.push_back(c - 'A');

  ExecutionPlan plan;
  plan.source = Signature{canonical, sig.degree};
  plan.leaf_sequence.reserve(static_cast<std::size_t>(length));
  expand_into(symbol_index, u, sig.degree, 0, plan.leaf_sequence);

  // Rename leaves by first occurrence.
  std::vector<int> rename(static_cast<std::size_t>(unique), -1);
  int next = 0;
  for (int& id : plan.leaf_sequence) {
    auto& slot = rename[static_cast<std::size_t>(id)];
    if (slot < 0) slot = next++;
    id = slot;
  }
  plan.unique_leaf_count = static_cast<int>(unique);

  plan.skip_eligible.assign(plan.leaf_sequence.size(), false);
  if (is_rins(plan.source)) {
    const int r = rins_rounds(plan.source);
    for (int i = 1; i < r; ++i) plan.skip_eligible[static_cast<std::size_t>(i)] = true;
  }
  return plan;
}

int rins_rounds(const Signature& sig) {
  if (sig.degree != 1) return 0;
  const std::string& s = sig.symbols;
  if (s.size() < 2 || s.back() != 'B') return 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] != 'A') return 0;
  }
  return static_cast<int>(s.size()) - 1;
}

bool is_rins(const Signature& sig) { return rins_rounds(sig) >= 2; }

int layers_per_block(const Signature& sig, int total_layers) {
  if (total_layers < 1) {
    throw std::domain_error("total_layers must be >= 1");
  }
  std::int64_t unique = 0;
  try {
    unique = unique_leaf_count(sig);
  } catch (const std::length_error&) {
    return 0;
  }
  return static_cast<int>(total_layers / unique);
}

std::vector<double> rins_skip_tuple(const ExecutionPlan& plan, double p_skip) {
  std::vector<double> probs(plan.size(), 0.0);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan.skip_eligible[i]) probs[i] = p_skip;
  }
  return probs;
}

ExecutionPlan with_skip_tuple(ExecutionPlan plan,
                              std::span<const double> probs) {
  if (probs.size() != plan.size()) {
    throw std::invalid_argument("skip tuple length " +
                                std::to_string(probs.size()) +
                                " does not match plan length " +
                                std::to_string(plan.size()));
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] < 1.0)) {
      throw std::domain_error("skip probability must lie in [0, 1)");
    }
    plan.skip_eligible[i] = probs[i] > 0.0;
  }
  return plan;
}

std::vector<int> sample_execution(const ExecutionPlan& plan,
                                  std::span<const double> probs,
                                  std::mt19937_64& rng) {
  if (probs.size() != plan.size()) {
    throw std::invalid_argument("skip tuple length mismatch");
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<int> kept;
  kept.reserve(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (uniform(rng) >= probs[i]) kept.push_back(plan.leaf_sequence[i]);
  }
  return kept;
}

nlohmann::json to_json(const ExecutionPlan& plan) {
  nlohmann::json mask = nlohmann::json::array();
  for (bool b : plan.skip_eligible) mask.push_back(b);
  return {{"leaf_sequence", plan.leaf_sequence},
          {"unique_leaf_count", plan.unique_leaf_count},
          {"skip_eligible", mask}};
}

}  // namespace rins
