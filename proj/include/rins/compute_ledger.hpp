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

#ifndef RINS_COMPUTE_LEDGER_HPP_
#define RINS_COMPUTE_LEDGER_HPP_

// Parameter counts, per-step compute cost and compute-matched step budgets.
//
// Costs are forward-pass only. The layer-pass unit counts executed decoder
// layers times tokens per sequence; the exact-flops unit multiplies that by
// the per-token forward FLOPs of one decoder layer.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rins/signature.hpp"

namespace rins {

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelDims {
  int d_model = 64;
  int n_heads = 4;
  int mlp_dim = 256;
  int vocab = 65;
  int seq_len = 64;
  int total_layers = 4;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

nlohmann::json to_json(const ModelDims& dims);
ModelDims dims_from_json(const nlohmann::json& j);

enum class CostMode { kLayerPass, kExactFlops };

const char* to_string(CostMode mode);
CostMode cost_mode_from_string(const std::string& s);

struct CostLedger {
  CostMode mode = CostMode::kLayerPass;
  double per_step_cost = 0.0;
  std::int64_t param_count = 0;
};

// Pre-LN decoder layer: two norms (scale and bias), bias-free Q/K/V/O
// projections, and a two-matrix MLP with biases.
std::int64_t per_layer_param_count(const ModelDims& dims);

// Token and position embeddings, final norm, and output head with bias.
std::int64_t embedding_param_count(const ModelDims& dims);

// Throws InfeasibleError when the plan gets zero layers per block.
int feasible_layers_per_block(const ExecutionPlan& plan, const ModelDims& dims);

// Excludes recursion adapters, which belong to the recursion policy.
std::int64_t param_count(const ExecutionPlan& plan, const ModelDims& dims);

// Per-token forward FLOPs of one decoder layer, counting a multiply-add as
// two FLOPs: 12 d^2 + 4 d (seq / 2) + 4 d mlp.
double per_token_layer_flops(const ModelDims& dims);

// Cost of a forward pass that executes `leaf_calls` leaf blocks of the plan.
double cost_of_calls(double leaf_calls, const ExecutionPlan& plan,
                     const ModelDims& dims, CostMode mode);

double step_cost(const ExecutionPlan& plan, const ModelDims& dims,
                 CostMode mode = CostMode::kLayerPass);

CostLedger make_ledger(const ExecutionPlan& plan, const ModelDims& dims,
                       CostMode mode = CostMode::kLayerPass);

// floor(baseline_steps * cost(baseline) / cost(variant)).
std::int64_t matched_steps(const ExecutionPlan& baseline,
                           const ExecutionPlan& variant,
                           const ModelDims& dims_baseline,
                           const ModelDims& dims_variant,
                           std::int64_t baseline_steps,
                           CostMode mode = CostMode::kLayerPass);

// Expected number of leaf calls when each skip-eligible position is dropped
// with probability p_skip.
double expected_leaf_calls(const ExecutionPlan& plan, double p_skip);

double expected_stochastic_cost(const ExecutionPlan& plan,
                                const ModelDims& dims, double p_skip,
                                CostMode mode = CostMode::kLayerPass);

struct SweepCandidate {
  Signature signature;
  bool feasible = false;
  int layers_per_block = 0;
};

// Baseline "A", the repeat-all-over family AA/AAA/AAAA, then nine signatures
// at degrees 1-3, in that order.
std::vector<SweepCandidate> enumerate_sweep(int total_layers);

struct SweepRecord {
  SweepCandidate candidate;
  std::int64_t params = 0;
  std::int64_t steps_matched = 0;
};

// Sweep manifest rows, with steps matched against the "A" baseline trained
// for `baseline_steps`. Infeasible rows carry zero params and steps.
std::vector<SweepRecord> sweep_records(const ModelDims& dims,
                                       std::int64_t baseline_steps,
                                       CostMode mode = CostMode::kLayerPass);

nlohmann::json to_json(const SweepRecord& record);

}  // namespace rins

#endif  // RINS_COMPUTE_LEDGER_HPP_
