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

#ifndef RINS_TENSOR_HPP_
#define RINS_TENSOR_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rins {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Row-major (batch x seq) matrix of token ids.
struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<std::int32_t> ids;

  TokenBatch() = default;
  TokenBatch(int b, int s) : batch(b), seq(s), ids(static_cast<std::size_t>(b) * s, 0) {}

  std::int32_t& at(int b, int t) { return ids[static_cast<std::size_t>(b) * seq + t]; }
  std::int32_t at(int b, int t) const {
    return ids[static_cast<std::size_t>(b) * seq + t];
  }
  std::size_t size() const { return ids.size(); }
};

// Targets use this id for positions that do not contribute to the loss.
inline constexpr std::int32_t kIgnoreTarget = -1;

}  // namespace rins

#endif  // RINS_TENSOR_HPP_
