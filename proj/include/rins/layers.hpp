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

#ifndef RINS_LAYERS_HPP_
#define RINS_LAYERS_HPP_

// Forward and backward kernels for one pre-norm decoder layer:
//
//   h1 = norm1(x);  a = causal_attention(h1 Wq, h1 Wk, h1 Wv) Wo;  x2 = x + a
//   h2 = norm2(x2); y = x2 + gelu(h2 W1 + b1) W2 + b2
//
// Activations are (batch * seq) x d_model, row-major, one sequence after
// another. A layer call may borrow K and V from an earlier call of the same
// layer ("KV sharing"); the borrowed call then only computes queries.

#include <span>
#include <vector>

#include "rins/tensor.hpp"

namespace rins {

template <typename T>
struct LayerParams {
  RowVector<T> norm1_scale, norm1_bias;
  Matrix<T> wq, wk, wv, wo;
  RowVector<T> norm2_scale, norm2_bias;
  Matrix<T> fc1;
  RowVector<T> fc1_bias;
  Matrix<T> fc2;
  RowVector<T> fc2_bias;

  static LayerParams zeros(int d_model, int mlp_dim);

  // Calls f(suffix, tensor) for every tensor, in a fixed order.
  template <typename Self, typename F>
  static void for_each(Self& self, F&& f) {
    f("norm1.scale", self.norm1_scale);
    f("norm1.bias", self.norm1_bias);
    f("attn.q", self.wq);
    f("attn.k", self.wk);
    f("attn.v", self.wv);
    f("attn.o", self.wo);
    f("norm2.scale", self.norm2_scale);
    f("norm2.bias", self.norm2_bias);
    f("mlp.fc1.weight", self.fc1);
    f("mlp.fc1.bias", self.fc1_bias);
    f("mlp.fc2.weight", self.fc2);
    f("mlp.fc2.bias", self.fc2_bias);
  }
};

struct AttentionShape {
  int batch = 1;
  int seq = 1;
  int heads = 1;
};

// Causal mask, optionally restricted to positions within the same document.
// `segments` holds one id per (batch, position) row when set.
struct AttentionMask {
  std::span<const int> segments;

  bool allowed(int batch, int seq, int query, int key) const {
    if (key > query) return false;
    if (segments.empty()) return true;
    const auto base = static_cast<std::size_t>(batch) * seq;
    return segments[base + query] == segments[base + key];
  }
};

template <typename T>
struct LayerCache {
  Matrix<T> xhat1;
  ColVector<T> rstd1;
  Matrix<T> h1, q, k, v;
  std::vector<Matrix<T>> probs;  // one (seq x seq) matrix per (batch, head)
  Matrix<T> attn;
  Matrix<T> xhat2;
  ColVector<T> rstd2;
  Matrix<T> h2, pre_act, act;
  // Set when K and V are borrowed from another call's cache.
  const LayerCache* kv_owner = nullptr;

  const Matrix<T>& keys() const { return kv_owner ? kv_owner->k : k; }
  const Matrix<T>& values() const { return kv_owner ? kv_owner->v : v; }
};

// Gradient flowing into a call's K and V from later calls that borrowed them.
template <typename T>
struct KvGrad {
  Matrix<T> dk, dv;
  bool empty() const { return dk.size() == 0; }
};

inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const RowVector<T>& scale,
                             const RowVector<T>& bias, Matrix<T>& xhat,
                             ColVector<T>& rstd);

// Accumulates into dscale/dbias; returns dx.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat,
                              const ColVector<T>& rstd,
                              const RowVector<T>& scale, RowVector<T>& dscale,
                              RowVector<T>& dbias);

// Token plus position embeddings, one row per (batch, position).
template <typename T>
Matrix<T> embed_tokens(const Matrix<T>& token_embedding,
                       const Matrix<T>& position_embedding,
                       const TokenBatch& tokens);

template <typename T>
void embed_backward(const Matrix<T>& dx, const TokenBatch& tokens,
                    Matrix<T>& dtoken, Matrix<T>& dposition);

// x W + b.
template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w,
                         const RowVector<T>& b);

// Accumulates dW and db; returns dx.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w,
                          const Matrix<T>& dy, Matrix<T>& dw, RowVector<T>& db);

template <typename T>
Matrix<T> layer_forward(const LayerParams<T>& p, const Matrix<T>& x,
                        const AttentionShape& shape, const AttentionMask& mask,
                        LayerCache<T>& cache,
                        const LayerCache<T>* kv_owner = nullptr);

// Accumulates parameter gradients into `grads` and returns dx.
//
// `kv_in` carries dK/dV contributed by later calls that borrowed this call's
// K and V; it may be null. When this call borrowed K and V itself, their
// gradients are added to `kv_out` (the owner's accumulator) instead of
// flowing through Wk and Wv.
template <typename T>
Matrix<T> layer_backward(const LayerParams<T>& p, const LayerCache<T>& cache,
                         const Matrix<T>& dy, const AttentionShape& shape,
                         LayerParams<T>& grads, const KvGrad<T>* kv_in,
                         KvGrad<T>* kv_out);

}  // namespace rins

#endif  // RINS_LAYERS_HPP_
