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

#ifndef RINS_TESTS_MODEL_FIXTURES_HPP_
#define RINS_TESTS_MODEL_FIXTURES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "rins/layers.hpp"
#include "rins/model.hpp"

namespace rins::testing {

// d=8, 2 heads, 2 layers per block, vocab 11, context 5.
inline ModelDims tiny_dims(int unique_blocks = 2) {
  ModelDims d;
  d.d_model = 8;
  d.n_heads = 2;
  d.mlp_dim = 16;
  d.vocab = 11;
  d.seq_len = 5;
  d.total_layers = 2 * unique_blocks;
  return d;
}

inline RecursionPolicy rins_policy(int r, bool adapters = false,
                                   bool kv_share = false, double p_skip = 0.0) {
  RecursionPolicy p;
  p.r_max = r;
  p.adapters = adapters;
  p.kv_share = kv_share;
  p.p_skip = p_skip;
  return p;
}

inline TokenBatch random_tokens(int batch, int seq, int vocab,
                                std::mt19937_64& rng) {
  TokenBatch t(batch, seq);
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  for (auto& id : t.ids) id = pick(rng);
  return t;
}

inline std::vector<std::int32_t> random_targets(std::size_t n, int vocab,
                                                std::mt19937_64& rng) {
  std::vector<std::int32_t> out(n);
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  for (auto& id : out) id = pick(rng);
  return out;
}

// Overwrites every parameter with random values so that no gradient path is
// trivially zero: scales near 1, everything else N(0, 0.3), adapters near
// the identity.
template <typename T>
void randomize(RecursiveTransformer<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.3);
  ModelParams<T>::for_each(model.params(), [&](const std::string& name, auto& t) {
    const bool scale = name.find(".scale") != std::string::npos;
    const bool adapter = name.rfind("adapter.", 0) == 0;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(normal(rng));
    if (scale) t.array() += T(1);
    if (adapter) t += std::decay_t<decltype(t)>::Identity(t.rows(), t.cols());
  });
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;
  std::int64_t checked = 0;
};

// Five-point central differences against the analytic gradient. The
// relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheckResult gradient_check(RecursiveTransformer<double>& model,
                                      const TokenBatch& tokens,
                                      const std::vector<std::int32_t>& targets,
                                      int rounds, double step = 1e-3,
                                      double floor = 1e-7) {
  const auto analytic = model.loss_and_grads(tokens, targets, rounds);
  const auto grad_spans = analytic.grads.spans();
  auto param_spans = model.params().spans();
  std::vector<std::string> names;
  ModelParams<double>::for_each(model.params(),
                                [&](const std::string& n, auto&) { names.push_back(n); });
  GradCheckResult result;
  for (std::size_t s = 0; s < param_spans.size(); ++s) {
    for (std::size_t i = 0; i < param_spans[s].size(); ++i) {
      double& w = param_spans[s][i];
      const double saved = w;
      const auto at = [&](double offset) {
        w = saved + offset;
        return model.loss(tokens, targets, rounds);
      };
      const double numeric =
          (at(-2 * step) - 8 * at(-step) + 8 * at(step) - at(2 * step)) / (12 * step);
      w = saved;
      const double a = grad_spans[s][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        char buf[96];
        std::snprintf(buf, sizeof buf, "] analytic=%.6e numeric=%.6e", a, numeric);
        result.worst = names[s] + "[" + std::to_string(i) + buf;
      }
    }
  }
  return result;
}

// Non-recursive AB forward written directly against the layer kernels:
// embeddings, block A's layers, block B's layers, final norm, head.
template <typename T>
struct PlainAB {
  const ModelParams<T>& p;
  int heads;

  struct Tape {
    std::vector<LayerCache<T>> caches;
    Matrix<T> xhat;
    ColVector<T> rstd;
    Matrix<T> hidden;
    Matrix<T> logits;
  };

  Tape forward(const TokenBatch& tokens) const {
    Tape tape;
    const AttentionShape shape{tokens.batch, tokens.seq, heads};
    Matrix<T> x = embed_tokens(p.token_embedding, p.position_embedding, tokens);
    const std::size_t layers = p.blocks[0].size() + p.blocks[1].size();
    tape.caches.resize(layers);
    std::size_t k = 0;
    for (const auto& block : {std::cref(p.blocks[0]), std::cref(p.blocks[1])}) {
      for (const auto& layer : block.get()) {
        x = layer_forward(layer, x, shape, AttentionMask{}, tape.caches[k++]);
      }
    }
    tape.hidden = layer_norm_forward(x, p.final_scale, p.final_bias, tape.xhat, tape.rstd);
    tape.logits = linear_forward(tape.hidden, p.head, p.head_bias);
    return tape;
  }

  void backward(const TokenBatch& tokens, const Tape& tape,
                const Matrix<T>& dlogits, ModelParams<T>& g) const {
    const AttentionShape shape{tokens.batch, tokens.seq, heads};
    const Matrix<T> dh = linear_backward(tape.hidden, p.head, dlogits, g.head, g.head_bias);
    Matrix<T> dx = layer_norm_backward(dh, tape.xhat, tape.rstd, p.final_scale,
                                       g.final_scale, g.final_bias);
    std::size_t k = tape.caches.size();
    for (int leaf = 1; leaf >= 0; --leaf) {
      for (int l = static_cast<int>(p.blocks[leaf].size()) - 1; l >= 0; --l) {
        --k;
        dx = layer_backward<T>(p.blocks[leaf][l], tape.caches[k], dx, shape,
                               g.blocks[leaf][l], nullptr, nullptr);
      }
    }
    embed_backward(dx, tokens, g.token_embedding, g.position_embedding);
  }
};

}  // namespace rins::testing

#endif  // RINS_TESTS_MODEL_FIXTURES_HPP_
