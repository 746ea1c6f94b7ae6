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

#include "rins/compute_ledger.hpp"

#include <cmath>
#include <limits>

namespace rins {

void ModelDims::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) {
      throw std::invalid_argument(std::string("dims.") + field + ": " + what);
    }
  };
  require(d_model > 0, "d_model", "must be positive");
  require(n_heads > 0, "n_heads", "must be positive");
  require(mlp_dim > 0, "mlp_dim", "must be positive");
  require(vocab > 0, "vocab", "must be positive");
  require(seq_len > 0, "seq_len", "must be positive");
  require(total_layers > 0, "total_layers", "must be positive");
  require(d_model % n_heads == 0, "n_heads", "must divide d_model");
}

nlohmann::json to_json(const ModelDims& dims) {
  return {{"d_model", dims.d_model}, {"n_heads", dims.n_heads},
          {"mlp_dim", dims.mlp_dim}, {"vocab", dims.vocab},
          {"seq_len", dims.seq_len}, {"total_layers", dims.total_layers}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims dims;
  dims.d_model = j.at("d_model").get<int>();
  dims.n_heads = j.at("n_heads").get<int>();
  dims.mlp_dim = j.at("mlp_dim").get<int>();
  dims.vocab = j.at("vocab").get<int>();
  dims.seq_len = j.at("seq_len").get<int>();
  dims.total_layers = j.at("total_layers").get<int>();
  dims.validate();
  return dims;
}

const char* to_string(CostMode mode) {
  return mode == CostMode::kLayerPass ? "layer-pass" : "exact-flops";
}

CostMode cost_mode_from_string(const std::string& s) {
  if (s == "layer-pass") return CostMode::kLayerPass;
  if (s == "exact-flops") return CostMode::kExactFlops;
  throw std::invalid_argument("unknown cost mode '" + s + "'");
}

std::int64_t per_layer_param_count(const ModelDims& dims) {
  const std::int64_t d = dims.d_model;
  const std::int64_t m = dims.mlp_dim;
  const std::int64_t norms = 2 * (2 * d);
  const std::int64_t attention = 4 * d * d;
  const std::int64_t mlp = d * m + m + m * d + d;
  return norms + attention + mlp;
}

std::int64_t embedding_param_count(const ModelDims& dims) {
  const std::int64_t d = dims.d_model;
  const std::int64_t v = dims.vocab;
  return v * d + std::int64_t{dims.seq_len} * d + 2 * d + d * v + v;
}

int feasible_layers_per_block(const ExecutionPlan& plan,
                              const ModelDims& dims) {
  const int lpb = layers_per_block(plan.source, dims.total_layers);
  if (lpb < 1) {
    throw InfeasibleError("signature " + plan.source.render_spec() +
                          " needs " + std::to_string(plan.unique_leaf_count) +
                          " unique blocks but only " +
                          std::to_string(dims.total_layers) +
                          " layers are available (layers_per_block = 0)");
  }
  return lpb;
}

std::int64_t param_count(const ExecutionPlan& plan, const ModelDims& dims) {
  const int lpb = feasible_layers_per_block(plan, dims);
  return embedding_param_count(dims) +
         std::int64_t{plan.unique_leaf_count} * lpb *
             per_layer_param_count(dims);
}

double per_token_layer_flops(const ModelDims& dims) {
  const double d = dims.d_model;
  return 12.0 * d * d + 4.0 * d * (dims.seq_len / 2.0) +
         4.0 * d * dims.mlp_dim;
}

double cost_of_calls(double leaf_calls, const ExecutionPlan& plan,
                     const ModelDims& dims, CostMode mode) {
  const int lpb = feasible_layers_per_block(plan, dims);
  const double layer_tokens = leaf_calls * lpb * dims.seq_len;
  if (mode == CostMode::kLayerPass) return layer_tokens;
  return layer_tokens * per_token_layer_flops(dims);
}

double step_cost(const ExecutionPlan& plan, const ModelDims& dims,
                 CostMode mode) {
  return cost_of_calls(static_cast<double>(plan.size()), plan, dims, mode);
}

CostLedger make_ledger(const ExecutionPlan& plan, const ModelDims& dims,
                       CostMode mode) {
  return {mode, step_cost(plan, dims, mode), param_count(plan, dims)};
}

std::int64_t matched_steps(const ExecutionPlan& baseline,
                           const ExecutionPlan& variant,
                           const ModelDims& dims_baseline,
                           const ModelDims& dims_variant,
                           std::int64_t baseline_steps, CostMode mode) {
  if (baseline_steps < 1) {
    throw std::domain_error("baseline_steps must be >= 1");
  }
  const double cost_b = step_cost(baseline, dims_baseline, mode);
  const double cost_v = step_cost(variant, dims_variant, mode);
  // Layer-pass costs are integers; divide exactly so that e.g. 2/3 of
  // 200000 floors to 133333 rather than a rounding artifact.
  constexpr double kExact = 9.0e15;
  if (cost_b == std::floor(cost_b) && cost_v == std::floor(cost_v) &&
      cost_b < kExact && cost_v < kExact) {
    const auto num = static_cast<__int128>(baseline_steps) *
                     static_cast<__int128>(cost_b);
    return static_cast<std::int64_t>(num / static_cast<__int128>(cost_v));
  }
  const long double ratio = static_cast<long double>(cost_b) / cost_v;
  return static_cast<std::int64_t>(
      std::floor(static_cast<long double>(baseline_steps) * ratio));
}

double expected_leaf_calls(const ExecutionPlan& plan, double p_skip) {
  if (!(p_skip >= 0.0 && p_skip < 1.0)) {
    throw std::domain_error("p_skip must lie in [0, 1), got " +
                            std::to_string(p_skip));
  }
  double calls = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    calls += plan.skip_eligible[i] ? (1.0 - p_skip) : 1.0;
  }
  return calls;
}

double expected_stochastic_cost(const ExecutionPlan& plan,
                                const ModelDims& dims, double p_skip,
                                CostMode mode) {
  return cost_of_calls(expected_leaf_calls(plan, p_skip), plan, dims, mode);
}

std::vector<SweepCandidate> enumerate_sweep(int total_layers) {
  if (total_layers < 1) {
    throw std::domain_error("total_layers must be >= 1");
  }
  std::vector<SweepCandidate> out;
  auto add = [&](const char* symbols, int degree) {
    Signature sig = parse(symbols, degree);
    const int lpb = layers_per_block(sig, total_layers);
    out.push_back({std::move(sig), lpb > 0, lpb});
  };
  add("A", 1);
  add("AA", 1);
  add("AAA", 1);
  add("AAAA", 1);
  for (const char* symbols : {"ABB", "ABA", "AAB", "ABBC", "AABC", "ABCC",
                              "ABBB", "AAAB", "AABB"}) {
    for (int degree = 1; degree <= 3; ++degree) add(symbols, degree);
  }
  return out;
}

std::vector<SweepRecord> sweep_records(const ModelDims& dims,
                                       std::int64_t baseline_steps,
                                       CostMode mode) {
  const ExecutionPlan baseline = expand(parse("A", 1));
  std::vector<SweepRecord> out;
  for (auto& candidate : enumerate_sweep(dims.total_layers)) {
    SweepRecord record{candidate, 0, 0};
    if (candidate.feasible) {
      const ExecutionPlan plan = expand(candidate.signature);
      record.params = param_count(plan, dims);
      record.steps_matched =
          matched_steps(baseline, plan, dims, dims, baseline_steps, mode);
    }
    out.push_back(std::move(record));
  }
  return out;
}

nlohmann::json to_json(const SweepRecord& record) {
  return {{"signature", record.candidate.signature.symbols},
          {"degree", record.candidate.signature.degree},
          {"feasible", record.candidate.feasible},
          {"layers_per_block", record.candidate.layers_per_block},
          {"params", record.params},
          {"steps_matched", record.steps_matched}};
}

}  // namespace rins
