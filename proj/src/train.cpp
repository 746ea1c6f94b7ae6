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

#include "rins/train.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace rins {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json record_to_json(const TraceRecord& r,
                              const std::vector<std::string>& names) {
  nlohmann::json j = {{"step", r.step},
                      {"compute", r.compute},
                      {"expected_compute", r.expected_compute},
                      {"rounds", r.rounds},
                      {"lr", r.lr},
                      {"train_loss", r.train_loss}};
  if (!r.eval_loss.empty()) {
    nlohmann::json e = nlohmann::json::object();
    for (std::size_t i = 0; i < r.eval_loss.size(); ++i) e[names.at(i)] = r.eval_loss[i];
    j["eval_loss"] = e;
  }
  return j;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
int training_rounds(const RecursiveTransformer<T>& model, std::int64_t step,
                    std::uint64_t seed) {
  if (model.rins_r() == 0) return 1;
  auto rng = step_rng(seed, step);
  return sample_rounds(model.policy(), rng);
}

template <typename T>
int eval_rounds(const RecursiveTransformer<T>& model) {
  return model.rins_r() == 0 ? 1 : model.policy().eval_rounds();
}

template <typename T>
std::vector<std::string> param_names(const RecursiveTransformer<T>& model) {
  std::vector<std::string> names;
  ModelParams<T>::for_each(model.params(),
                           [&](const std::string& n, const auto&) { names.push_back(n); });
  return names;
}

}  // namespace

void TrainConfig::validate() const {
  require(peak_lr > 0 && std::isfinite(peak_lr), "train.peak_lr: must be > 0");
  require(weight_decay >= 0, "train.weight_decay: must be >= 0");
  require(warmup_steps >= 0, "train.warmup_steps: must be >= 0");
  require(cooldown_steps >= 0, "train.cooldown_steps: must be >= 0");
  require(total_steps >= 1, "train.total_steps: must be >= 1");
  require(warmup_steps + cooldown_steps <= total_steps,
          "train.warmup_steps: warmup + cooldown must not exceed total_steps");
  require(batch_size >= 1, "train.batch_size: must be >= 1");
  require(beta1 >= 0 && beta1 < 1, "train.beta1: must lie in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, "train.beta2: must lie in [0, 1)");
  require(adam_eps > 0, "train.adam_eps: must be > 0");
  require(eval_interval >= 1, "train.eval_interval: must be >= 1");
  require(eval_batches >= 0, "train.eval_batches: must be >= 0");
  require(divergence_factor > 1, "train.divergence_factor: must be > 1");
  require(checkpoint_interval >= 0, "train.checkpoint_interval: must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"peak_lr", c.peak_lr},
          {"weight_decay", c.weight_decay},
          {"warmup_steps", c.warmup_steps},
          {"cooldown_steps", c.cooldown_steps},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"eval_interval", c.eval_interval},
          {"eval_batches", c.eval_batches},
          {"divergence_factor", c.divergence_factor},
          {"mask_reset", c.mask_reset},
          {"checkpoint_interval", c.checkpoint_interval},
          {"cost_mode", to_string(c.cost_mode)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("peak_lr", c.peak_lr);
  get("weight_decay", c.weight_decay);
  get("warmup_steps", c.warmup_steps);
  get("cooldown_steps", c.cooldown_steps);
  get("total_steps", c.total_steps);
  get("batch_size", c.batch_size);
  get("grad_clip_norm", c.grad_clip_norm);
  get("seed", c.seed);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("eval_interval", c.eval_interval);
  get("eval_batches", c.eval_batches);
  get("divergence_factor", c.divergence_factor);
  get("mask_reset", c.mask_reset);
  get("checkpoint_interval", c.checkpoint_interval);
  if (j.contains("cost_mode")) c.cost_mode = cost_mode_from_string(j["cost_mode"]);
  return c;
}

double lr_at(const TrainConfig& cfg, std::int64_t step) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) +
                            " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  const double peak = cfg.peak_lr;
  const auto rsqrt = [&](std::int64_t s) {
    const double timescale = static_cast<double>(std::max<std::int64_t>(cfg.warmup_steps, 1));
    return s <= timescale ? peak : peak * std::sqrt(timescale / static_cast<double>(s));
  };
  if (step <= cfg.warmup_steps && cfg.warmup_steps > 0) {
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::int64_t cool_start = cfg.total_steps - cfg.cooldown_steps;
  if (cfg.cooldown_steps > 0 && step > cool_start) {
    const double from = rsqrt(std::max<std::int64_t>(cool_start, 1));
    return from * static_cast<double>(cfg.total_steps - step) /
           static_cast<double>(cfg.cooldown_steps);
  }
  return rsqrt(std::max<std::int64_t>(step, 1));
}

template <typename T>
AdamState<T> AdamState<T>::like(const std::vector<std::span<T>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <typename T>
AdamStats adam_step(const std::vector<std::span<T>>& params,
                    const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, const TrainConfig& cfg, double lr,
                    std::span<const std::string> names) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: tensor count mismatch");
  }
  AdamStats stats;
  stats.lr = lr;
  double sq = 0;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].size() != params[k].size() || state.m[k].size() != params[k].size()) {
      throw std::invalid_argument("adam_step: shape mismatch at tensor " +
                                  std::to_string(k));
    }
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      const double g = static_cast<double>(grads[k][i]);
      if (!std::isfinite(g)) {
        const std::string where = k < names.size() ? names[k] : "tensor " + std::to_string(k);
        throw NonFiniteGradient("non-finite gradient in " + where + "[" +
                                std::to_string(i) + "] at step " +
                                std::to_string(state.step + 1));
      }
      sq += g * g;
    }
  }
  stats.grad_norm = std::sqrt(sq);
  if (cfg.grad_clip_norm > 0 && stats.grad_norm > cfg.grad_clip_norm) {
    stats.clip_scale = cfg.grad_clip_norm / stats.grad_norm;
  }

  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T scale = static_cast<T>(stats.clip_scale);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const T g = grads[k][i] * scale;
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      const double p = static_cast<double>(params[k][i]);
      const double update = mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p;
      params[k][i] = static_cast<T>(p - lr * update);
    }
  }
  state.step = t;
  return stats;
}

template <typename T>
AdamStats adam_step(const std::vector<std::span<T>>& params,
                    const std::vector<std::span<const T>>& grads,
                    AdamState<T>& state, const TrainConfig& cfg) {
  return adam_step(params, grads, state, cfg, lr_at(cfg, state.step + 1));
}

std::vector<const TraceRecord*> LossTrace::eval_points() const {
  std::vector<const TraceRecord*> out;
  for (const auto& r : records) {
    if (!r.eval_loss.empty()) out.push_back(&r);
  }
  return out;
}

std::string LossTrace::to_csv() const {
  std::ostringstream out;
  out << "step,compute,expected_compute,rounds,lr,train_loss";
  for (const auto& n : eval_names) out << ",eval_" << n;
  out << "\n";
  for (const auto& r : records) {
    out << r.step << ',' << format_double(r.compute) << ','
        << format_double(r.expected_compute) << ',' << r.rounds << ','
        << format_double(r.lr) << ',' << format_double(r.train_loss);
    for (std::size_t i = 0; i < eval_names.size(); ++i) {
      out << ',';
      if (i < r.eval_loss.size()) out << format_double(r.eval_loss[i]);
    }
    out << "\n";
  }
  return out.str();
}

std::string LossTrace::to_jsonl() const {
  std::string out = nlohmann::json({{"eval_names", eval_names}}).dump() + "\n";
  for (const auto& r : records) out += record_to_json(r, eval_names).dump() + "\n";
  return out;
}

LossTrace LossTrace::from_jsonl(const std::string& text) {
  LossTrace trace;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (header) {
      trace.eval_names = j.at("eval_names").get<std::vector<std::string>>();
      header = false;
      continue;
    }
    TraceRecord r;
    r.step = j.at("step");
    r.compute = j.at("compute");
    r.expected_compute = j.at("expected_compute");
    r.rounds = j.at("rounds");
    r.lr = j.at("lr");
    r.train_loss = j.at("train_loss");
    if (j.contains("eval_loss")) {
      for (const auto& n : trace.eval_names) r.eval_loss.push_back(j["eval_loss"].at(n));
    }
    trace.records.push_back(std::move(r));
  }
  return trace;
}

std::string LossTrace::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_jsonl())));
  return buf;
}

std::mt19937_64 step_rng(std::uint64_t seed, std::int64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32),
                    0x52494e53u};
  return std::mt19937_64(seq);
}

template <typename T>
double evaluate_loss(const RecursiveTransformer<T>& model, const PackedRows& rows,
                     int rounds, int batch_size, int max_batches,
                     bool mask_reset) {
  BatchIterator it(rows, batch_size);
  double total = 0;
  std::int64_t count = 0;
  int batches = 0;
  while (auto batch = it.next()) {
    if (max_batches > 0 && batches == max_batches) break;
    ++batches;
    const std::span<const int> segments =
        mask_reset ? std::span<const int>(batch->segments) : std::span<const int>();
    const double loss =
        static_cast<double>(model.loss(batch->tokens, batch->targets, rounds, segments));
    total += loss * static_cast<double>(batch->targets.size());
    count += static_cast<std::int64_t>(batch->targets.size());
  }
  if (count == 0) throw std::invalid_argument("evaluate_loss: no rows");
  return total / static_cast<double>(count);
}

template <typename T>
TrainResult train(RecursiveTransformer<T>& model, const PackedRows& data,
                  const std::vector<EvalSet>& evals, const TrainConfig& cfg,
                  const TrainHooks& hooks, TrainState<T>* resume) {
  cfg.validate();
  if (data.seq_len != model.dims().seq_len) {
    throw std::invalid_argument("train: data seq_len " + std::to_string(data.seq_len) +
                                " differs from model seq_len " +
                                std::to_string(model.dims().seq_len));
  }
  if (data.rows() == 0) throw std::invalid_argument("train: no training rows");

  TrainState<T> state;
  if (resume != nullptr) {
    state = *resume;
  } else {
    state.adam = AdamState<T>::like(model.params().spans());
  }
  state.trace.eval_names.clear();
  for (const auto& e : evals) state.trace.eval_names.push_back(e.name);

  const auto names = param_names(model);
  const ExecutionPlan& plan = model.plan();
  const ModelDims& dims = model.dims();
  const double expected_step =
      model.rins_r() > 0
          ? expected_stochastic_cost(plan, dims, model.policy().p_skip, cfg.cost_mode)
          : step_cost(plan, dims, cfg.cost_mode);
  const int rounds_eval = eval_rounds(model);

  TrainResult result;
  double initial_loss = state.trace.records.empty()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : state.trace.records.front().train_loss;
  const auto checkpoint = [&] {
    if (!hooks.checkpoint_path.empty()) {
      save_train_checkpoint(hooks.checkpoint_path, model, state);
    }
  };

  while (state.step < cfg.total_steps) {
    const std::int64_t s = state.step;
    const PackedBatch batch = cyclic_batch(data, s, cfg.batch_size);
    const int rounds = training_rounds(model, s, cfg.seed);
    const std::span<const int> segments =
        cfg.mask_reset ? std::span<const int>(batch.segments) : std::span<const int>();

    auto lg = model.loss_and_grads(batch.tokens, batch.targets, rounds, segments);
    const double loss = static_cast<double>(lg.loss);
    if (std::isnan(initial_loss)) initial_loss = loss;
    if (!std::isfinite(loss) || loss > cfg.divergence_factor * initial_loss) {
      result.diverged = true;
      result.stop_reason = "diverged at step " + std::to_string(s + 1) + ": loss " +
                           format_double(loss) + " vs initial " +
                           format_double(initial_loss);
      break;
    }
    const auto grads = static_cast<const ModelParams<T>&>(lg.grads).spans();
    AdamStats stats;
    try {
      stats = adam_step(model.params().spans(), grads, state.adam, cfg,
                        lr_at(cfg, s + 1), names);
    } catch (const NonFiniteGradient& e) {
      result.diverged = true;
      result.stop_reason = e.what();
      break;
    }

    const double leaf_calls =
        model.rins_r() > 0 ? static_cast<double>(rounds + 1)
                           : static_cast<double>(plan.size());
    state.compute += cost_of_calls(leaf_calls, plan, dims, cfg.cost_mode);
    state.expected_compute += expected_step;
    state.step = s + 1;

    TraceRecord rec;
    rec.step = state.step;
    rec.compute = state.compute;
    rec.expected_compute = state.expected_compute;
    rec.rounds = rounds;
    rec.train_loss = loss;
    rec.lr = stats.lr;
    if (state.step % cfg.eval_interval == 0 || state.step == cfg.total_steps) {
      for (const auto& e : evals) {
        rec.eval_loss.push_back(evaluate_loss(model, *e.rows, rounds_eval, cfg.batch_size,
                                              cfg.eval_batches, cfg.mask_reset));
      }
    }
    state.trace.records.push_back(rec);
    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) {
      checkpoint();
    }
    if (hooks.on_record && !hooks.on_record(rec)) {
      result.stop_reason = "stopped by caller";
      break;
    }
  }
  checkpoint();

  result.trace = state.trace;
  result.steps_done = state.step;
  result.compute = state.compute;
  result.expected_compute = state.expected_compute;
  const auto rows_seen = static_cast<std::uint64_t>(state.step) *
                         static_cast<std::uint64_t>(cfg.batch_size);
  result.wraps = static_cast<std::int64_t>(rows_seen / data.rows());
  if (result.stop_reason.empty()) result.stop_reason = "completed";
  if (resume != nullptr) *resume = state;
  return result;
}

template <typename T>
void save_train_checkpoint(const std::string& path,
                           const RecursiveTransformer<T>& model,
                           const TrainState<T>& state) {
  std::map<std::string, std::vector<T>> extra;
  const auto names = param_names(model);
  for (std::size_t k = 0; k < names.size() && k < state.adam.m.size(); ++k) {
    extra["adam.m." + names[k]] = state.adam.m[k];
    extra["adam.v." + names[k]] = state.adam.v[k];
  }
  const nlohmann::json meta = {{"adam_step", state.adam.step},
                               {"compute", state.compute},
                               {"expected_compute", state.expected_compute},
                               {"trace", state.trace.to_jsonl()}};
  save_checkpoint(path, model, state.step, extra, meta);
}

template <typename T>
LoadedTrainCheckpoint<T> load_train_checkpoint(const std::string& path) {
  auto loaded = load_checkpoint<T>(path);
  TrainState<T> state;
  state.step = loaded.info.step;
  const auto& meta = loaded.info.extra;
  state.adam.step = meta.value("adam_step", std::int64_t{0});
  state.compute = meta.value("compute", 0.0);
  state.expected_compute = meta.value("expected_compute", 0.0);
  if (meta.contains("trace")) {
    state.trace = LossTrace::from_jsonl(meta["trace"].template get<std::string>());
  }
  const auto names = param_names(loaded.model);
  const auto spans = loaded.model.params().spans();
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto m = loaded.extra_tensors.find("adam.m." + names[k]);
    auto v = loaded.extra_tensors.find("adam.v." + names[k]);
    if (m == loaded.extra_tensors.end() || v == loaded.extra_tensors.end()) {
      throw std::runtime_error(path + ": missing optimizer state for " + names[k]);
    }
    if (m->second.size() != spans[k].size() || v->second.size() != spans[k].size()) {
      throw std::runtime_error(path + ": optimizer state shape mismatch for " + names[k]);
    }
    state.adam.m.push_back(std::move(m->second));
    state.adam.v.push_back(std::move(v->second));
  }
  return {std::move(loaded.model), std::move(state)};
}

#define RINS_INSTANTIATE_TRAIN(T)                                              \
  template struct AdamState<T>;                                                \
  template AdamStats adam_step(const std::vector<std::span<T>>&,               \
                               const std::vector<std::span<const T>>&,         \
                               AdamState<T>&, const TrainConfig&, double,      \
                               std::span<const std::string>);                  \
  template AdamStats adam_step(const std::vector<std::span<T>>&,               \
                               const std::vector<std::span<const T>>&,         \
                               AdamState<T>&, const TrainConfig&);             \
  template double evaluate_loss(const RecursiveTransformer<T>&,                \
                                const PackedRows&, int, int, int, bool);       \
  template TrainResult train(RecursiveTransformer<T>&, const PackedRows&,      \
                             const std::vector<EvalSet>&, const TrainConfig&,  \
                             const TrainHooks&, TrainState<T>*);               \
  template void save_train_checkpoint(const std::string&,                      \
                                      const RecursiveTransformer<T>&,          \
                                      const TrainState<T>&);                   \
  template LoadedTrainCheckpoint<T> load_train_checkpoint<T>(const std::string&);

RINS_INSTANTIATE_TRAIN(float)
RINS_INSTANTIATE_TRAIN(double)

}  // namespace rins
