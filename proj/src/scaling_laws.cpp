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

#include "rins/scaling_laws.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rins {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kExtrapolationFactor = 10.0;

struct Candidate {
  double eps = 0;
  LineFit line;
  bool valid = false;
};

Candidate evaluate(const std::vector<LossPoint>& pts, double eps,
                   const std::vector<double>& w) {
  Candidate cand;
  cand.eps = eps;
  cand.line = fit_log_line(pts, eps, w);
  cand.valid = std::isfinite(cand.line.residual) && cand.line.c > 0;
  return cand;
}

bool better(const Candidate& a, const Candidate& b) {
  if (!a.valid) return false;
  if (!b.valid) return true;
  return a.line.residual < b.line.residual;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double FitResult::predict(double x) const {
  return beta * std::pow(x, -c) + eps_inf;
}

nlohmann::json to_json(const FitResult& f) {
  return {{"beta", f.beta},         {"c", f.c},
          {"eps_inf", f.eps_inf},   {"residual", f.residual},
          {"n_points", f.n_points}, {"x_min", f.x_min},
          {"x_max", f.x_max}};
}

FitResult fit_from_json(const nlohmann::json& j) {
  FitResult f;
  f.beta = j.at("beta");
  f.c = j.at("c");
  f.eps_inf = j.at("eps_inf");
  f.residual = j.value("residual", 0.0);
  f.n_points = j.value("n_points", 0);
  f.x_min = j.value("x_min", 0.0);
  f.x_max = j.value("x_max", 0.0);
  return f;
}

LineFit fit_log_line(const std::vector<LossPoint>& points, double eps_inf,
                     const std::vector<double>& weights) {
  const std::size_t n = points.size();
  double sw = 0, sx = 0, sy = 0;
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gap = points[i].loss - eps_inf;
    if (!(gap > 0)) return {0, 0, kInf};
    const double w = weights.empty() ? 1.0 : weights[i];
    lx[i] = std::log(points[i].x);
    ly[i] = std::log(gap);
    sw += w;
    sx += w * lx[i];
    sy += w * ly[i];
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sxx += w * (lx[i] - mx) * (lx[i] - mx);
    sxy += w * (lx[i] - mx) * (ly[i] - my);
  }
  LineFit fit;
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  fit.c = -slope;
  fit.log_beta = my - slope * mx;
  double res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double e = ly[i] - (fit.log_beta + slope * lx[i]);
    res += w * e * e;
  }
  fit.residual = res;
  return fit;
}

std::vector<double> eps_inf_grid(double min_loss, const FitOptions& options) {
  if (options.grid_size < 2) throw std::invalid_argument("fit: grid_size must be >= 2");
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(options.grid_size));
  const double log_span = std::log(options.grid_span);
  for (int k = 0; k < options.grid_size; ++k) {
    const double frac = static_cast<double>(k) / (options.grid_size - 1);
    const double gap = k == 0 ? min_loss : min_loss * std::exp(frac * log_span);
    grid.push_back(min_loss - gap);
  }
  grid.front() = 0.0;
  return grid;
}

FitResult fit_power_law(std::vector<LossPoint> points, const FitOptions& options) {
  if (points.size() < 4) {
    throw std::invalid_argument("fit: need at least 4 points, got " +
                                std::to_string(points.size()));
  }
  for (const auto& p : points) {
    if (!(p.x > 0) || !std::isfinite(p.x)) throw std::invalid_argument("fit: x must be positive");
    if (!(p.loss > 0) || !std::isfinite(p.loss)) {
      throw std::invalid_argument("fit: losses must be positive and finite");
    }
  }
  std::sort(points.begin(), points.end(),
            [](const LossPoint& a, const LossPoint& b) { return a.x < b.x; });
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].x > points[i - 1].x)) {
      throw std::invalid_argument("fit: x values must be strictly increasing");
    }
  }
  const double x_max = points.back().x;
  std::vector<double> weights;
  if (options.recency_weight != 0.0) {
    for (const auto& p : points) weights.push_back(std::pow(p.x / x_max, options.recency_weight));
  }
  double min_loss = kInf;
  for (const auto& p : points) min_loss = std::min(min_loss, p.loss);

  const auto grid = eps_inf_grid(min_loss, options);
  std::vector<Candidate> cands;
  cands.reserve(grid.size());
  std::size_t best = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    cands.push_back(evaluate(points, grid[k], weights));
    if (better(cands[k], cands[best])) best = k;
  }
  if (!cands[best].valid) {
    throw std::invalid_argument("fit: losses do not decrease with x");
  }

  // Golden-section search on the log gap between the neighbouring cells.
  Candidate winner = cands[best];
  const std::size_t lo_i = best == 0 ? 0 : best - 1;
  const std::size_t hi_i = std::min(best + 1, grid.size() - 1);
  if (lo_i != hi_i) {
    const auto gap = [&](double eps) { return std::log(min_loss - eps); };
    double a = gap(grid[lo_i]), b = gap(grid[hi_i]);
    const double phi = (std::sqrt(5.0) - 1) / 2;
    const auto at = [&](double g) { return evaluate(points, min_loss - std::exp(g), weights); };
    double c1 = b - phi * (b - a), c2 = a + phi * (b - a);
    Candidate f1 = at(c1), f2 = at(c2);
    for (int it = 0; it < 200 && std::abs(b - a) > 1e-13; ++it) {
      if (better(f1, f2) || (!f1.valid && !f2.valid)) {
        b = c2;
        c2 = c1;
        f2 = f1;
        c1 = b - phi * (b - a);
        f1 = at(c1);
      } else {
        a = c1;
        c1 = c2;
        f1 = f2;
        c2 = a + phi * (b - a);
        f2 = at(c2);
      }
    }
    for (const auto& f : {f1, f2}) {
      if (f.valid && f.line.residual <= winner.line.residual) winner = f;
    }
  }

  FitResult out;
  out.beta = std::exp(winner.line.log_beta);
  out.c = winner.line.c;
  out.eps_inf = winner.eps;
  out.residual = winner.line.residual;
  out.n_points = static_cast<int>(points.size());
  out.x_min = points.front().x;
  out.x_max = x_max;
  return out;
}

std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0) || !(hi > lo) || n < 2) {
    throw std::invalid_argument("log_grid: need 0 < lo < hi and n >= 2");
  }
  std::vector<double> g(static_cast<std::size_t>(n));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * i / (n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

bool OptimalR::any_extrapolated() const {
  return std::find(extrapolated.begin(), extrapolated.end(), true) != extrapolated.end();
}

bool OptimalR::nondecreasing() const {
  return std::is_sorted(r_star.begin(), r_star.end());
}

std::string OptimalR::breakpoints_csv() const {
  std::ostringstream out;
  out << "x_break,r\n";
  if (x.empty()) return out.str();
  out << format_double(x.front()) << ',' << r_star.front() << "\n";
  for (const auto& b : breakpoints) out << format_double(b.x) << ',' << b.r_to << "\n";
  return out.str();
}

OptimalR optimal_r(const std::map<int, FitResult>& family,
                   const std::vector<double>& compute_grid) {
  if (family.empty()) throw std::invalid_argument("optimal_r: empty family");
  if (compute_grid.empty()) throw std::invalid_argument("optimal_r: empty grid");
  if (!std::is_sorted(compute_grid.begin(), compute_grid.end())) {
    throw std::invalid_argument("optimal_r: grid must be increasing");
  }
  const auto argmin = [&](double x) {
    int best = family.begin()->first;
    double best_loss = kInf;
    for (const auto& [r, fit] : family) {
      const double v = fit.predict(x);
      if (v < best_loss) {  // strict: ties keep the smaller r
        best_loss = v;
        best = r;
      }
    }
    return best;
  };

  OptimalR out;
  for (double x : compute_grid) {
    out.x.push_back(x);
    out.r_star.push_back(argmin(x));
    bool outside = false;
    for (const auto& [r, fit] : family) {
      outside = outside || x > kExtrapolationFactor * fit.x_max ||
                x < fit.x_min / kExtrapolationFactor;
    }
    out.extrapolated.push_back(outside);
  }
  for (std::size_t i = 1; i < out.x.size(); ++i) {
    const int r0 = out.r_star[i - 1], r1 = out.r_star[i];
    if (r0 == r1) continue;
    const FitResult& f0 = family.at(r0);
    const FitResult& f1 = family.at(r1);
    double lo = out.x[i - 1], hi = out.x[i];
    const auto diff = [&](double x) { return f1.predict(x) - f0.predict(x); };
    // diff >= 0 at lo (r0 wins), < 0 at hi when the pair truly crosses.
    if (diff(lo) >= 0 && diff(hi) < 0) {
      for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (diff(mid) >= 0) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
    }
    out.breakpoints.push_back({std::sqrt(lo * hi), r0, r1});
  }
  return out;
}

}  // namespace rins
