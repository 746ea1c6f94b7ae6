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

#ifndef RINS_SCALING_LAWS_HPP_
#define RINS_SCALING_LAWS_HPP_

// Saturating power laws eps(x) = beta * x^(-c) + eps_inf fitted to loss
// versus compute, and the compute-optimal number of recursion rounds.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace rins {

struct LossPoint {
  double x = 0;     // compute
  double loss = 0;
};

struct FitOptions {
  int grid_size = 256;          // eps_inf candidates (>= 200)
  double grid_span = 1e-6;      // smallest (min loss - eps_inf) / min loss
  // Point i is weighted (x_i / x_max)^recency_weight; 0 weights all equally.
  double recency_weight = 0.0;
};

struct FitResult {
  double beta = 0;
  double c = 0;
  double eps_inf = 0;
  double residual = 0;  // weighted squared log-space error
  int n_points = 0;
  double x_min = 0;
  double x_max = 0;

  double predict(double x) const;
};

nlohmann::json to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);

struct LineFit {
  double log_beta = 0;
  double c = 0;
  double residual = 0;
};

// Weighted least squares of ln(loss - eps_inf) on ln x for a fixed
// eps_inf. Points must be sorted by x; `weights` may be empty.
LineFit fit_log_line(const std::vector<LossPoint>& points, double eps_inf,
                     const std::vector<double>& weights = {});

// The geometric eps_inf grid used by fit_power_law, starting at 0.
std::vector<double> eps_inf_grid(double min_loss, const FitOptions& options = {});

// Grid search over eps_inf with an inner log-space line fit, followed by a
// golden-section refinement inside the best grid cell. Points may come in
// any order. Throws std::invalid_argument for fewer than 4 points, repeated
// or non-positive x, non-positive losses, or when no candidate yields c > 0.
FitResult fit_power_law(std::vector<LossPoint> points, const FitOptions& options = {});

// Log-spaced grid of n points from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, int n);

struct Breakpoint {
  double x = 0;
  int r_from = 0;
  int r_to = 0;
};

struct OptimalR {
  std::vector<double> x;
  std::vector<int> r_star;
  std::vector<bool> extrapolated;  // beyond 10x of any member's fitted range
  std::vector<Breakpoint> breakpoints;

  bool any_extrapolated() const;
  bool nondecreasing() const;
  // Columns x_break,r: the first row is the grid start with the initial r,
  // then one row per breakpoint with the r that takes over.
  std::string breakpoints_csv() const;
};

// argmin over r of the predicted loss at each grid point, ties to the
// smaller r. Changes of the argmin between adjacent grid points are refined
// by bisection on the difference of the two curves.
OptimalR optimal_r(const std::map<int, FitResult>& family,
                   const std::vector<double>& compute_grid);

}  // namespace rins

#endif  // RINS_SCALING_LAWS_HPP_
