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
#include "oracles.hpp"
#include "rins/signature.hpp"

using rins::expand;
using rins::parse;
using rins::Signature;

TEST_CASE("parse accepts exponent and flat forms") {
  CHECK(parse("A^3B", 1).symbols == "AAAB");
  CHECK(parse("AAAB", 1) == parse("A^3B", 1));
  CHECK(parse("A", 1).symbols == "A");
  CHECK(parse("BBA", 1).symbols == "AAB");
  CHECK(parse("AB^2C", 2).symbols == "ABBC");
  CHECK(parse("AB^2C", 2).degree == 2);
  CHECK(parse("a^2b", 1).symbols == "AAB");
}

TEST_CASE("parse reports the failing position") {
  auto position_of = [](const char* text) -> long {
    try {
      parse(text, 1);
    } catch (const rins::SignatureParseError& e) {
      return static_cast<long>(e.position());
    }
    return -1;
  };
  CHECK(position_of("") == 0);
  CHECK(position_of("AB3") == 2);
  CHECK(position_of("A^0B") == 2);
  CHECK(position_of("A^") == 2);
  CHECK(position_of("A-B") == 1);
  CHECK_THROWS_AS(parse("AB", 0), std::domain_error);
}

TEST_CASE("parse_spec reads signature@degree") {
  const Signature s = rins::parse_spec("A^3B@d1");
  CHECK(s.symbols == "AAAB");
  CHECK(s.degree == 1);
  CHECK(rins::parse_spec("ABB@d2").degree == 2);
  CHECK(rins::parse_spec("AB").degree == 1);
  CHECK(s.render_spec() == "AAAB@d1");
  CHECK_THROWS_AS(rins::parse_spec("AB@x2"), rins::SignatureParseError);
}

TEST_CASE("canonicalization matches first-occurrence renaming and is idempotent") {
  for (const auto& s : rins::oracle::all_strings(5, 4)) {
    const std::string once = rins::canonicalize(s);
    CHECK(once == rins::oracle::first_occurrence_rename(s));
    CHECK(rins::canonicalize(once) == once);
    CHECK(parse(parse(s, 1).render(), 1) == parse(s, 1));
  }
}

TEST_CASE("expand reproduces the nested ABB example") {
  const auto plan = expand(parse("ABB", 2));
  CHECK(plan.render() == "ABBCDDCDD");
  CHECK(plan.unique_leaf_count == 4);
}

TEST_CASE("expand marks the middle rounds of A^r B as skippable") {
  const auto plan = expand(parse("AAB", 1));
  CHECK(plan.leaf_sequence == std::vector<int>{0, 0, 1});
  CHECK(plan.unique_leaf_count == 2);
  CHECK(plan.skip_eligible == std::vector<bool>{false, true, false});

  const auto a4b = expand(parse("A^4B", 1));
  CHECK(a4b.skip_eligible == std::vector<bool>{false, true, true, true, false});

  for (const char* s : {"AB", "ABAB", "ABBC", "A"}) {
    const auto p = expand(parse(s, 1));
    CHECK(std::none_of(p.skip_eligible.begin(), p.skip_eligible.end(),
                       [](bool b) { return b; }));
  }
  // Degree > 1 never gets a default skip policy.
  const auto nested = expand(parse("AAB", 2));
  CHECK(std::none_of(nested.skip_eligible.begin(), nested.skip_eligible.end(),
                     [](bool b) { return b; }));
}

TEST_CASE("expand agrees with the brute-force path expansion") {
  std::set<std::string> seen;
  for (const auto& raw : rins::oracle::all_strings(4, 3)) {
    const std::string s = rins::canonicalize(raw);
    if (!seen.insert(s).second) continue;
    for (int degree = 1; degree <= 3; ++degree) {
      CAPTURE(s);
      CAPTURE(degree);
      const auto plan = expand(parse(s, degree));
      const auto ref = rins::oracle::brute_force_expand(s, degree);
      CHECK(plan.leaf_sequence == ref.sequence);
      CHECK(plan.unique_leaf_count == ref.unique);
      CHECK(plan.skip_eligible == ref.skip);
      const auto u = std::set<char>(s.begin(), s.end()).size();
      CHECK(plan.size() == static_cast<std::size_t>(std::pow(s.size(), degree)));
      CHECK(plan.unique_leaf_count == static_cast<int>(std::pow(u, degree)));
      for (int id : plan.leaf_sequence) CHECK(id < plan.unique_leaf_count);
      if (degree == 1) CHECK(plan.render() == s);
    }
  }
}

TEST_CASE("AB at degree 3") {
  const auto plan = expand(parse("AB", 3));
  CHECK(plan.size() == 8);
  CHECK(plan.unique_leaf_count == 8);
}

TEST_CASE("is_rins") {
  CHECK(rins::is_rins(parse("AAAB", 1)));
  CHECK(rins::is_rins(parse("A^2B", 1)));
  CHECK_FALSE(rins::is_rins(parse("AB", 1)));
  CHECK_FALSE(rins::is_rins(parse("ABAB", 1)));
  CHECK_FALSE(rins::is_rins(parse("AAB", 2)));
  CHECK_FALSE(rins::is_rins(parse("AAA", 1)));
  CHECK(rins::rins_rounds(parse("AB", 1)) == 1);
  CHECK(rins::rins_rounds(parse("ABA", 1)) == 0);
}

TEST_CASE("layers_per_block") {
  CHECK(rins::layers_per_block(parse("ABBC", 3), 12) == 0);
  CHECK(rins::layers_per_block(parse("AB", 1), 12) == 6);
  CHECK(rins::layers_per_block(parse("AABB", 3), 16) == 2);
  CHECK(rins::layers_per_block(parse("A", 1), 1) == 1);
}

TEST_CASE("skip tuples") {
  const auto plan = expand(parse("A^3B", 1));
  const auto probs = rins::rins_skip_tuple(plan, 0.25);
  CHECK(probs == std::vector<double>{0.0, 0.25, 0.25, 0.0});

  const auto manual = rins::with_skip_tuple(expand(parse("ABAB", 1)),
                                            std::vector<double>{0, 0.5, 0.5, 0});
  CHECK(manual.skip_eligible == std::vector<bool>{false, true, true, false});
  CHECK_THROWS(rins::with_skip_tuple(plan, std::vector<double>{0, 0}));
  CHECK_THROWS(rins::with_skip_tuple(plan, std::vector<double>{0, 1.0, 0, 0}));

  std::mt19937_64 rng(7);
  const std::vector<double> none(plan.size(), 0.0);
  CHECK(rins::sample_execution(plan, none, rng) == plan.leaf_sequence);
  for (int i = 0; i < 100; ++i) {
    const auto kept = rins::sample_execution(plan, probs, rng);
    REQUIRE(kept.size() >= 2);
    CHECK(kept.front() == 0);
    CHECK(kept.back() == 1);
  }
}

TEST_CASE("plan JSON") {
  const auto j = rins::to_json(expand(parse("AAB", 1)));
  CHECK(j["leaf_sequence"] == nlohmann::json({0, 0, 1}));
  CHECK(j["unique_leaf_count"] == 2);
  CHECK(j["skip_eligible"] == nlohmann::json({false, true, false}));
}
