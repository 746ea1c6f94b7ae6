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

#ifndef RINS_TESTS_ORACLES_HPP_
#define RINS_TESTS_ORACLES_HPP_

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the code it checks.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rins::oracle {

struct ExpandedPlan {
  std::vector<int> sequence;
  int unique = 0;
  std::vector<bool> skip;
};

// Top-down expansion: every call is a path of symbols from the root, one
// symbol per nesting level. Two calls share weights iff their paths match.
inline ExpandedPlan brute_force_expand(const std::string& symbols, int degree) {
  std::vector<std::string> paths = {""};
  for (int level = 0; level < degree; ++level) {
    std::vector<std::string> next;
    for (const auto& p : paths) {
      for (char c : symbols) next.push_back(p + c);
    }
    paths = std::move(next);
  }
  std::map<std::string, int> ids;
  ExpandedPlan out;
  for (const auto& p : paths) {
    auto it = ids.find(p);
    if (it == ids.end()) it = ids.emplace(p, static_cast<int>(ids.size())).first;
    out.sequence.push_back(it->second);
  }
  out.unique = static_cast<int>(ids.size());
  out.skip.assign(out.sequence.size(), false);
  // A^r B with r >= 2 at degree 1 (symbols are canonical here).
  bool rins = degree == 1 && symbols.size() >= 3 && symbols.back() == 'B';
  for (std::size_t i = 0; rins && i + 1 < symbols.size(); ++i) {
    rins = symbols[i] == 'A';
  }
  if (rins) {
    for (std::size_t i = 1; i + 1 < symbols.size(); ++i) out.skip[i] = true;
  }
  return out;
}

// Relabels by first occurrence using a lookup table built from scratch.
inline std::string first_occurrence_rename(const std::string& s) {
  std::map<char, char> m;
  std::string out;
  for (char c : s) {
    if (!m.count(c)) {
      const char next = static_cast<char>('A' + m.size());
      m[c] = next;
    }
    out.push_back(m[c]);
  }
  return out;
}

// All strings of length 1..max_len over the first `alphabet` letters.
inline std::vector<std::string> all_strings(int max_len, int alphabet) {
  std::vector<std::string> out;
  std::vector<std::string> layer = {""};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& s : layer) {
      for (int a = 0; a < alphabet; ++a) next.push_back(s + static_cast<char>('A' + a));
    }
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

// Root of f on [lo, hi] by bisection; f(lo) and f(hi) must differ in sign.
inline double bisect(const std::function<double(double)>& f, double lo,
                     double hi, int iterations = 200) {
  double flo = f(lo);
  for (int i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Binomial(n, p) pmf.
inline double binomial_pmf(int n, int k, double p) {
  double c = 1;
  for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
  return c * std::pow(p, k) * std::pow(1 - p, n - k);
}

}  // namespace rins::oracle

#endif  // RINS_TESTS_ORACLES_HPP_
