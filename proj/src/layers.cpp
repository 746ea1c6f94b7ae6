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

#include "rins/layers.hpp"

#include <cmath>
#include <limits>

namespace rins {
namespace {

template <typename T>
constexpr T kGeluCoeff = T(0.044715);

template <typename T>
T gelu_scale() {
  return static_cast<T>(std::sqrt(2.0 / 3.14159265358979323846));
}

template <typename T>
void gelu_forward(const Matrix<T>& u, Matrix<T>& out) {
  const T a = gelu_scale<T>();
  out.resize(u.rows(), u.cols());
  const T* src = u.data();
  T* dst = out.data();
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const T x = src[i];
    dst[i] = T(0.5) * x * (T(1) + std::tanh(a * (x + kGeluCoeff<T> * x * x * x)));
  }
}

template <typename T>
void gelu_backward_inplace(const Matrix<T>& u, Matrix<T>& grad) {
  const T a = gelu_scale<T>();
  const T* src = u.data();
  T* g = grad.data();
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const T x = src[i];
    const T t = std::tanh(a * (x + kGeluCoeff<T> * x * x * x));
    const T dt = (T(1) - t * t) * a * (T(1) + T(3) * kGeluCoeff<T> * x * x);
    g[i] *= T(0.5) * (T(1) + t) + T(0.5) * x * dt;
  }
}

}  // namespace

template <typename T>
LayerParams<T> LayerParams<T>::zeros(int d_model, int mlp_dim) {
  LayerParams p;
  p.norm1_scale = RowVector<T>::Zero(d_model);
  p.norm1_bias = RowVector<T>::Zero(d_model);
  p.wq = Matrix<T>::Zero(d_model, d_model);
  p.wk = Matrix<T>::Zero(d_model, d_model);
  p.wv = Matrix<T>::Zero(d_model, d_model);
  p.wo = Matrix<T>::Zero(d_model, d_model);
  p.norm2_scale = RowVector<T>::Zero(d_model);
  p.norm2_bias = RowVector<T>::Zero(d_model);
  p.fc1 = Matrix<T>::Zero(d_model, mlp_dim);
  p.fc1_bias = RowVector<T>::Zero(mlp_dim);
  p.fc2 = Matrix<T>::Zero(mlp_dim, d_model);
  p.fc2_bias = RowVector<T>::Zero(d_model);
  return p;
}

template <typename T>
Matrix<T> layer_norm_forward(const Matrix<T>& x, const RowVector<T>& scale,
                             const RowVector<T>& bias, Matrix<T>& xhat,
                             ColVector<T>& rstd) {
  const Eigen::Index n = x.cols();
  xhat.resize(x.rows(), n);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEpsilon));
    rstd(r) = inv;
    xhat.row(r) = centered * inv;
  }
  Matrix<T> y = xhat.array().rowwise() * scale.array();
  y.array().rowwise() += bias.array();
  return y;
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat,
                              const ColVector<T>& rstd,
                              const RowVector<T>& scale, RowVector<T>& dscale,
                              RowVector<T>& dbias) {
  dscale += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * scale.array();
  const T inv_n = T(1) / static_cast<T>(xhat.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() * inv_n;
    const T mean_dx = dxhat.row(r).dot(xhat.row(r)) * inv_n;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d -
                           xhat.row(r).array() * mean_dx)
                              .matrix();
  }
  return dx;
}

template <typename T>
Matrix<T> embed_tokens(const Matrix<T>& token_embedding,
                       const Matrix<T>& position_embedding,
                       const TokenBatch& tokens) {
  Matrix<T> x(static_cast<Eigen::Index>(tokens.size()), token_embedding.cols());
  for (int b = 0; b < tokens.batch; ++b) {
    for (int t = 0; t < tokens.seq; ++t) {
      x.row(b * tokens.seq + t) =
          token_embedding.row(tokens.at(b, t)) + position_embedding.row(t);
    }
  }
  return x;
}

template <typename T>
void embed_backward(const Matrix<T>& dx, const TokenBatch& tokens,
                    Matrix<T>& dtoken, Matrix<T>& dposition) {
  for (int b = 0; b < tokens.batch; ++b) {
    for (int t = 0; t < tokens.seq; ++t) {
      const auto row = dx.row(b * tokens.seq + t);
      dtoken.row(tokens.at(b, t)) += row;
      dposition.row(t) += row;
    }
  }
}

template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const Matrix<T>& w,
                         const RowVector<T>& b) {
  Matrix<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b;
  return y;
}

template <typename T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& w,
                          const Matrix<T>& dy, Matrix<T>& dw,
                          RowVector<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  Matrix<T> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename T>
Matrix<T> layer_forward(const LayerParams<T>& p, const Matrix<T>& x,
                        const AttentionShape& shape, const AttentionMask& mask,
                        LayerCache<T>& cache, const LayerCache<T>* kv_owner) {
  const int d = static_cast<int>(x.cols());
  const int dh = d / shape.heads;
  const int S = shape.seq;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  cache.kv_owner = kv_owner;
  cache.h1 = layer_norm_forward(x, p.norm1_scale, p.norm1_bias, cache.xhat1,
                                cache.rstd1);
  cache.q.noalias() = cache.h1 * p.wq;
  if (kv_owner == nullptr) {
    cache.k.noalias() = cache.h1 * p.wk;
    cache.v.noalias() = cache.h1 * p.wv;
  } else {
    cache.k.resize(0, 0);
    cache.v.resize(0, 0);
  }
  const Matrix<T>& keys = cache.keys();
  const Matrix<T>& values = cache.values();

  cache.attn.resize(x.rows(), d);
  cache.probs.resize(static_cast<std::size_t>(shape.batch) * shape.heads);
  for (int b = 0; b < shape.batch; ++b) {
    for (int h = 0; h < shape.heads; ++h) {
      Matrix<T>& probs = cache.probs[static_cast<std::size_t>(b) * shape.heads + h];
      probs.noalias() = (cache.q.block(b * S, h * dh, S, dh) *
                         keys.block(b * S, h * dh, S, dh).transpose()) *
                        scale;
      for (int i = 0; i < S; ++i) {
        T row_max = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < S; ++j) {
          if (mask.allowed(b, S, i, j)) row_max = std::max(row_max, probs(i, j));
        }
        T total = 0;
        for (int j = 0; j < S; ++j) {
          if (mask.allowed(b, S, i, j)) {
            const T e = std::exp(probs(i, j) - row_max);
            probs(i, j) = e;
            total += e;
          } else {
            probs(i, j) = 0;
          }
        }
        probs.row(i) /= total;
      }
      cache.attn.block(b * S, h * dh, S, dh).noalias() =
          probs * values.block(b * S, h * dh, S, dh);
    }
  }

  Matrix<T> x2 = x;
  x2.noalias() += cache.attn * p.wo;
  cache.h2 = layer_norm_forward(x2, p.norm2_scale, p.norm2_bias, cache.xhat2,
                                cache.rstd2);
  cache.pre_act = linear_forward(cache.h2, p.fc1, p.fc1_bias);
  gelu_forward(cache.pre_act, cache.act);
  Matrix<T> y = x2;
  y += linear_forward(cache.act, p.fc2, p.fc2_bias);
  return y;
}

template <typename T>
Matrix<T> layer_backward(const LayerParams<T>& p, const LayerCache<T>& cache,
                         const Matrix<T>& dy, const AttentionShape& shape,
                         LayerParams<T>& grads, const KvGrad<T>* kv_in,
                         KvGrad<T>* kv_out) {
  const int d = static_cast<int>(dy.cols());
  const int dh = d / shape.heads;
  const int S = shape.seq;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // MLP branch.
  Matrix<T> dpre =
      linear_backward(cache.act, p.fc2, dy, grads.fc2, grads.fc2_bias);
  gelu_backward_inplace(cache.pre_act, dpre);
  const Matrix<T> dh2 =
      linear_backward(cache.h2, p.fc1, dpre, grads.fc1, grads.fc1_bias);
  Matrix<T> dx2 = dy;
  dx2 += layer_norm_backward(dh2, cache.xhat2, cache.rstd2, p.norm2_scale,
                             grads.norm2_scale, grads.norm2_bias);

  // Attention branch.
  grads.wo.noalias() += cache.attn.transpose() * dx2;
  const Matrix<T> dattn = dx2 * p.wo.transpose();
  const Matrix<T>& keys = cache.keys();
  const Matrix<T>& values = cache.values();
  Matrix<T> dq = Matrix<T>::Zero(dy.rows(), d);
  Matrix<T> dk = Matrix<T>::Zero(dy.rows(), d);
  Matrix<T> dv = Matrix<T>::Zero(dy.rows(), d);
  for (int b = 0; b < shape.batch; ++b) {
    for (int h = 0; h < shape.heads; ++h) {
      const Matrix<T>& probs =
          cache.probs[static_cast<std::size_t>(b) * shape.heads + h];
      const auto dout = dattn.block(b * S, h * dh, S, dh);
      const Matrix<T> dprobs =
          dout * values.block(b * S, h * dh, S, dh).transpose();
      dv.block(b * S, h * dh, S, dh).noalias() = probs.transpose() * dout;
      const ColVector<T> row_dot =
          (dprobs.array() * probs.array()).rowwise().sum();
      Matrix<T> dscores =
          (probs.array() * (dprobs.array().colwise() - row_dot.array()))
              .matrix();
      dscores *= scale;
      dq.block(b * S, h * dh, S, dh).noalias() =
          dscores * keys.block(b * S, h * dh, S, dh);
      dk.block(b * S, h * dh, S, dh).noalias() =
          dscores.transpose() * cache.q.block(b * S, h * dh, S, dh);
    }
  }

  grads.wq.noalias() += cache.h1.transpose() * dq;
  Matrix<T> dh1 = dq * p.wq.transpose();
  if (cache.kv_owner != nullptr) {
    if (kv_out->empty()) {
      kv_out->dk = std::move(dk);
      kv_out->dv = std::move(dv);
    } else {
      kv_out->dk += dk;
      kv_out->dv += dv;
    }
  } else {
    if (kv_in != nullptr && !kv_in->empty()) {
      dk += kv_in->dk;
      dv += kv_in->dv;
    }
    grads.wk.noalias() += cache.h1.transpose() * dk;
    grads.wv.noalias() += cache.h1.transpose() * dv;
    dh1.noalias() += dk * p.wk.transpose();
    dh1.noalias() += dv * p.wv.transpose();
  }
  Matrix<T> dx = dx2;
  dx += layer_norm_backward(dh1, cache.xhat1, cache.rstd1, p.norm1_scale,
                            grads.norm1_scale, grads.norm1_bias);
  return dx;
}

#define RINS_INSTANTIATE_LAYERS(T)                                           \
  template struct LayerParams<T>;                                            \
  template Matrix<T> layer_norm_forward(const Matrix<T>&,                    \
                                        const RowVector<T>&,                 \
                                        const RowVector<T>&, Matrix<T>&,     \
                                        ColVector<T>&);                      \
  template Matrix<T> layer_norm_backward(                                    \
      const Matrix<T>&, const Matrix<T>&, const ColVector<T>&,               \
      const RowVector<T>&, RowVector<T>&, RowVector<T>&);                    \
  template Matrix<T> embed_tokens(const Matrix<T>&, const Matrix<T>&,       \
                                  const TokenBatch&);                        \
  template void embed_backward(const Matrix<T>&, const TokenBatch&,          \
                               Matrix<T>&, Matrix<T>&);                      \
  template Matrix<T> linear_forward(const Matrix<T>&, const Matrix<T>&,      \
                                    const RowVector<T>&);                    \
  template Matrix<T> linear_backward(const Matrix<T>&, const Matrix<T>&,     \
                                     const Matrix<T>&, Matrix<T>&,           \
                                     RowVector<T>&);                         \
  template Matrix<T> layer_forward(const LayerParams<T>&, const Matrix<T>&,  \
                                   const AttentionShape&,                    \
                                   const AttentionMask&, LayerCache<T>&,     \
                                   const LayerCache<T>*);                    \
  template Matrix<T> layer_backward(const LayerParams<T>&,                   \
                                    const LayerCache<T>&, const Matrix<T>&,  \
                                    const AttentionShape&, LayerParams<T>&,  \
                                    const KvGrad<T>*, KvGrad<T>*);

RINS_INSTANTIATE_LAYERS(float)
RINS_INSTANTIATE_LAYERS(double)

#undef RINS_INSTANTIATE_LAYERS

}  // namespace rins
