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

#ifndef RINS_MODEL_HPP_
#define RINS_MODEL_HPP_

// Decoder-only transformer whose depth is driven by an ExecutionPlan.
//
// Each unique leaf block of the plan owns `layers_per_block` decoder layers.
// For signatures of the form A^r B the model runs block A `rounds` times
// (rounds <= r), optionally applies the rounds-th linear adapter, then runs
// block B. Other signatures run the full plan.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rins/compute_ledger.hpp"
#include "rins/layers.hpp"
#include "rins/signature.hpp"
#include "rins/tensor.hpp"

namespace rins {

struct RecursionPolicy {
  int r_max = 1;
  double p_skip = 0.0;
  bool kv_share = false;
  bool adapters = false;
  std::optional<int> inference_rounds;

  void validate() const;
  // inference_rounds if set, else r_max.
  int eval_rounds() const { return inference_rounds.value_or(r_max); }

  friend bool operator==(const RecursionPolicy&, const RecursionPolicy&) = default;
};

nlohmann::json to_json(const RecursionPolicy& policy);
RecursionPolicy policy_from_json(const nlohmann::json& j);

// 1 + Binomial(r_max - 1, 1 - p_skip): the first call of A always runs.
int sample_rounds(const RecursionPolicy& policy, std::mt19937_64& rng);

// Bytes of K and V held for block A's layers at full context. With KV
// sharing only the first call's tensors are kept; without it every call
// keeps its own.
std::int64_t kv_cache_bytes(const ModelDims& dims, int layers_of_a,
                            const RecursionPolicy& policy, int rounds,
                            std::size_t element_size);

template <typename T>
struct ModelParams {
  Matrix<T> token_embedding;     // vocab x d
  Matrix<T> position_embedding;  // seq_len x d
  std::vector<std::vector<LayerParams<T>>> blocks;  // [leaf][layer]
  RowVector<T> final_scale, final_bias;
  Matrix<T> head;  // d x vocab
  RowVector<T> head_bias;
  std::vector<Matrix<T>> adapters;  // adapters[k - 1] follows k rounds

  static ModelParams zeros(const ModelDims& dims, int unique_leaves,
                           int layers_per_block, int adapter_count);

  // Calls f(name, tensor) for every tensor with its canonical name, e.g.
  // "block.A.layer.0.attn.q" or "adapter.2".
  template <typename Self, typename F>
  static void for_each(Self& self, F&& f) {
    f(std::string("embed.token"), self.token_embedding);
    f(std::string("embed.position"), self.position_embedding);
    for (std::size_t leaf = 0; leaf < self.blocks.size(); ++leaf) {
      const std::string block = "block." + leaf_label(static_cast<int>(leaf));
      for (std::size_t l = 0; l < self.blocks[leaf].size(); ++l) {
        const std::string prefix = block + ".layer." + std::to_string(l) + ".";
        LayerParams<T>::for_each(self.blocks[leaf][l],
                                 [&](const char* suffix, auto& tensor) {
                                   f(prefix + suffix, tensor);
                                 });
      }
    }
    f(std::string("final_norm.scale"), self.final_scale);
    f(std::string("final_norm.bias"), self.final_bias);
    f(std::string("head.weight"), self.head);
    f(std::string("head.bias"), self.head_bias);
    for (std::size_t k = 0; k < self.adapters.size(); ++k) {
      f("adapter." + std::to_string(k + 1), self.adapters[k]);
    }
  }

  // Flat views over every tensor in for_each order.
  std::vector<std::span<T>> spans();
  std::vector<std::span<const T>> spans() const;
  std::int64_t size() const;
  std::int64_t adapter_size() const;
  std::int64_t embedding_size() const;
};

// Everything a backward pass needs from one forward pass.
template <typename T>
struct ForwardTape {
  TokenBatch tokens;
  AttentionShape shape;
  std::vector<int> leaves;        // executed leaf ids
  std::vector<int> kv_owner;      // per call: call index owning K/V
  int adapter_after = -1;         // call index whose output feeds the adapter
  int adapter_index = -1;         // 0-based index into adapters
  std::vector<std::vector<LayerCache<T>>> calls;  // [call][layer]
  Matrix<T> adapter_input;
  Matrix<T> final_xhat;
  ColVector<T> final_rstd;
  Matrix<T> final_hidden;
  Matrix<T> logits;  // (batch * seq) x vocab

  // Bytes of K/V tensors held for the layers of leaf `leaf`.
  std::int64_t kv_bytes(int leaf) const;
};

template <typename T>
struct LossAndGrads {
  T loss = 0;
  ModelParams<T> grads;
};

// Mean cross entropy (natural log) over targets != kIgnoreTarget. When
// `dlogits` is set it receives the gradient of the mean loss.
template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const std::int32_t> targets,
                Matrix<T>* dlogits);

// Row-wise log-softmax.
template <typename T>
Matrix<T> log_softmax(const Matrix<T>& logits);

template <typename T>
class RecursiveTransformer {
 public:
  RecursiveTransformer(const Signature& signature, const ModelDims& dims,
                       const RecursionPolicy& policy);

  // Normal(0, init_std) weights, unit norm scales, zero biases, identity
  // adapters. Deterministic in `seed`.
  void init(std::uint64_t seed, double init_std = 0.02);

  const Signature& signature() const { return plan_.source; }
  const ExecutionPlan& plan() const { return plan_; }
  const ModelDims& dims() const { return dims_; }
  const RecursionPolicy& policy() const { return policy_; }
  int layers_per_block() const { return layers_per_block_; }
  // r of A^r B, or 0 when the signature does not have that shape.
  int rins_r() const { return rins_r_; }

  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // Leaf ids executed for `rounds` recursion rounds.
  std::vector<int> execution_sequence(int rounds) const;

  // Runs an explicit leaf sequence. `adapter_rounds` > 0 applies that
  // adapter after the last call of leaf 0 that precedes the first other leaf.
  ForwardTape<T> forward_sequence(const TokenBatch& tokens,
                                  std::span<const int> leaves,
                                  int adapter_rounds,
                                  std::span<const int> segments = {}) const;

  ForwardTape<T> forward_tape(const TokenBatch& tokens, int rounds,
                              std::span<const int> segments = {}) const;

  // Logits, (batch * seq) x vocab.
  Matrix<T> forward(const TokenBatch& tokens, int rounds,
                    std::span<const int> segments = {}) const;

  T loss(const TokenBatch& tokens, std::span<const std::int32_t> targets,
         int rounds, std::span<const int> segments = {}) const;

  LossAndGrads<T> loss_and_grads(const TokenBatch& tokens,
                                 std::span<const std::int32_t> targets,
                                 int rounds,
                                 std::span<const int> segments = {}) const;

  // Backward pass from dlogits; accumulates into `grads`.
  void backward(const ForwardTape<T>& tape, const Matrix<T>& dlogits,
                ModelParams<T>& grads) const;

  ModelParams<T> zero_grads() const;

  std::int64_t kv_cache_bytes(int rounds) const;

  // Adapter parameters over all parameters, and over non-embedding ones.
  double adapter_fraction() const;
  double adapter_fraction_excluding_embeddings() const;

  template <typename U>
  RecursiveTransformer<U> cast() const;

 private:
  void check_tokens(const TokenBatch& tokens) const;

  ExecutionPlan plan_;
  ModelDims dims_;
  RecursionPolicy policy_;
  int layers_per_block_ = 0;
  int rins_r_ = 0;
  ModelParams<T> params_;
};

struct CheckpointInfo {
  Signature signature;
  ModelDims dims;
  RecursionPolicy policy;
  std::int64_t step = 0;
  std::string dtype;
  nlohmann::json extra;  // caller metadata (optimizer counters, ...)
};

// Single-file checkpoint: magic "RINSCKPT", little-endian u64 manifest
// length, JSON manifest, then raw little-endian arrays in manifest order.
// `extra_tensors` are stored after the model tensors under their own names.
template <typename T>
void save_checkpoint(const std::string& path,
                     const RecursiveTransformer<T>& model, std::int64_t step,
                     const std::map<std::string, std::vector<T>>& extra_tensors = {},
                     const nlohmann::json& extra = nlohmann::json::object());

template <typename T>
struct LoadedCheckpoint {
  RecursiveTransformer<T> model;
  CheckpointInfo info;
  std::map<std::string, std::vector<T>> extra_tensors;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace rins

#endif  // RINS_MODEL_HPP_
