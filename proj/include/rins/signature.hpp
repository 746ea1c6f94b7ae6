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

#ifndef RINS_SIGNATURE_HPP_
#define RINS_SIGNATURE_HPP_

// Parameter-sharing signatures ("A^3B", "ABB" at degree 2, ...) and their
// expansion into flat sequences of leaf-block calls.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rins {

// Thrown for malformed signature text. `position()` is the byte offset of the
// offending character in the input.
class SignatureParseError : public std::invalid_argument {
 public:
  SignatureParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// A canonical signature: labels are renamed so that the first new label is
// 'A', the second new label 'B', and so on.
struct Signature {
  std::string symbols;
  int degree = 1;

  // Number of distinct labels in `symbols`.
  int distinct() const;
  // Flat rendering without exponents, e.g. "AAAB".
  std::string render() const { return symbols; }
  // "AAAB@d1" form used in config files and CLI flags.
  std::string render_spec() const;

  friend bool operator==(const Signature&, const Signature&) = default;
};

// Relabels `symbols` by first occurrence. Idempotent.
std::string canonicalize(std::string_view symbols);

// Accepts exponent form ("A^3B") and flat form ("AAAB"). Lowercase letters are
// accepted and canonicalized like uppercase ones.
Signature parse(std::string_view text, int degree);

// Parses "A^3B@d2". A missing "@d" suffix means degree 1.
Signature parse_spec(std::string_view text);

struct ExecutionPlan {
  std::vector<int> leaf_sequence;
  int unique_leaf_count = 0;
  std::vector<bool> skip_eligible;
  Signature source;

  std::size_t size() const { return leaf_sequence.size(); }
  // Leaf ids rendered as letters, e.g. "ABBCDDCDD". Ids >= 26 use
  // spreadsheet-style names ("AA", "AB", ...).
  std::string render() const;
};

// Spreadsheet-style label for leaf id `id` (0 -> "A", 26 -> "AA").
std::string leaf_label(int id);

ExecutionPlan expand(const Signature& sig);

// Degree 1 and symbols A^r B with r >= 2.
bool is_rins(const Signature& sig);

// r if `sig` has degree 1 and the shape A^r B with r >= 1, else 0. The
// baseline "AB" returns 1.
int rins_rounds(const Signature& sig);

// Floor of total_layers over the number of unique leaf blocks. Zero marks an
// architecture that does not fit in the layer budget.
int layers_per_block(const Signature& sig, int total_layers);

// Leaf count u^degree without materializing the plan.
std::int64_t unique_leaf_count(const Signature& sig);

// The (0, p, ..., p, 0) skip tuple for RINS plans; all zeros otherwise.
std::vector<double> rins_skip_tuple(const ExecutionPlan& plan, double p_skip);

// Replaces the plan's skip mask with `probs[i] > 0`. Throws if the sizes
// differ or a probability is outside [0, 1).
ExecutionPlan with_skip_tuple(ExecutionPlan plan, std::span<const double> probs);

// Samples which positions execute under a per-position skip tuple; position
// i is skipped when a uniform draw falls below probs[i]. Returns the kept
// leaf ids.
std::vector<int> sample_execution(const ExecutionPlan& plan,
                                  std::span<const double> probs,
                                  std::mt19937_64& rng);

nlohmann::json to_json(const ExecutionPlan& plan);

}  // namespace rins

#endif  // RINS_SIGNATURE_HPP_
