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

#ifndef RINS_TRAIN_HPP_
#define RINS_TRAIN_HPP_

// Adam with decoupled weight decay, an inverse-square-root learning-rate
// schedule with linear warmup and cooldown, and the training loop.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rins/compute_ledger.hpp"
#include "rins/corpus.hpp"
#include "rins/model.hpp"

namespace rins {

struct TrainConfig {
  double peak_lr = 5e-4;
  double weight_decay = 5e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t cooldown_steps = 0;
  std::int64_t total_steps = 1000;
  int batch_size = 8;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t eval_interval = 200;
  int eval_batches = 4;             // 0 evaluates every held-out row
  double divergence_factor = 10.0;  // abort when loss exceeds this x initial
  bool mask_reset = false;          // restrict attention to the same document
  std::int64_t checkpoint_interval = 0;
  CostMode cost_mode = CostMode::kLayerPass;

  // Throws std::invalid_argument naming the field.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Learning rate used for the update that ends at `step` (1-based):
//   step <= warmup:  peak * step / warmup
//   middle:          peak * sqrt(max(warmup, 1) / step)
//   cooldown:        linear from the middle value at total - cooldown to 0.
// Throws std::out_of_range outside [0, total_steps].
double lr_at(const TrainConfig& cfg, std::int64_t step);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;  // one entry per parameter tensor
  std::int64_t step = 0;             // completed updates

  static AdamState like(const std::vector<std::span<T>>& params);
};

struct AdamStats {
  double grad_norm = 0;  // before clipping
  double clip_scale = 1;
  double lr = 0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One Adam update with learning rate `lr`: global-norm clipping, moment
// updates with bias correction, then p -= lr * (m_hat / (sqrt(v_hat) + eps)
// + weight_decay * p). Throws NonFiniteGradient (leaving everything
// untouched) when a gradient is NaN or infinite. `names` is used for the
// diagnostic and may be empty.
template <typename T>
AdamStats adam_step(const std::vector<std::span<T>>& params,
                    const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, const TrainConfig& cfg, double lr,
                    std::span<const std::string> names = {});

// Same, with lr_at(cfg, state.step + 1).
template <typename T>
AdamStats adam_step(const std::vector<std::span<T>>& params,
                    const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, const TrainConfig& cfg);

struct TraceRecord {
  std::int64_t step = 0;           // completed updates
  double compute = 0;              // cumulative realized cost
  double expected_compute = 0;     // cumulative ledger expectation
  int rounds = 0;                  // recursion rounds used by this step
  double train_loss = 0;
  double lr = 0;
  std::vector<double> eval_loss;   // per eval corpus; empty between evals
};

struct LossTrace {
  std::vector<std::string> eval_names;
  std::vector<TraceRecord> records;

  // Records carrying eval losses.
  std::vector<const TraceRecord*> eval_points() const;
  // Columns: step, compute, expected_compute, rounds, lr, train_loss, then
  // eval_<name> per corpus (blank between evals).
  std::string to_csv() const;
  std::string to_jsonl() const;
  static LossTrace from_jsonl(const std::string& text);
  // FNV-1a 64 over the JSONL form, as 16 hex digits.
  std::string digest() const;
};

struct EvalSet {
  std::string name;
  const PackedRows* rows = nullptr;
};

// Mean next-token loss over the rows of `set` (all rows when max_batches is
// 0), in batches of `batch_size`.
template <typename T>
double evaluate_loss(const RecursiveTransformer<T>& model, const PackedRows& rows,
                     int rounds, int batch_size, int max_batches = 0,
                     bool mask_reset = false);

struct TrainResult {
  LossTrace trace;
  bool diverged = false;
  std::string stop_reason;
  std::int64_t steps_done = 0;
  double compute = 0;
  double expected_compute = 0;
  std::int64_t wraps = 0;  // times the training rows were cycled through
};

template <typename T>
struct TrainState {
  AdamState<T> adam;
  std::int64_t step = 0;
  double compute = 0;
  double expected_compute = 0;
  LossTrace trace;
};

struct TrainHooks {
  // Called after each record; returning false stops training.
  std::function<bool(const TraceRecord&)> on_record;
  // Checkpoint path written every checkpoint_interval steps and at the end.
  std::string checkpoint_path;
};

// Trains `model` for cfg.total_steps updates on cyclic batches of `data`.
// Step s (0-based) uses rows (s * batch + i) mod rows and recursion rounds
// drawn from a generator seeded by (cfg.seed, s), so a run resumed from
// `resume` reproduces the uninterrupted one.
template <typename T>
TrainResult train(RecursiveTransformer<T>& model, const PackedRows& data,
                  const std::vector<EvalSet>& evals, const TrainConfig& cfg,
                  const TrainHooks& hooks = {},
                  TrainState<T>* resume = nullptr);

// Per-step generator for recursion rounds.
std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step);

// Model, Adam moments ("adam.m.<name>", "adam.v.<name>") and counters.
template <typename T>
void save_train_checkpoint(const std::string& path,
                           const RecursiveTransformer<T>& model,
                           const TrainState<T>& state);

template <typename T>
struct LoadedTrainCheckpoint {
  RecursiveTransformer<T> model;
  TrainState<T> state;
};

template <typename T>
LoadedTrainCheckpoint<T> load_train_checkpoint(const std::string& path);

}  // namespace rins

#endif  // RINS_TRAIN_HPP_
