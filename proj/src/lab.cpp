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

#include "rins/lab.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "rins/corpus.hpp"
#include "rins/eval.hpp"

namespace rins::lab {
namespace fs = std::filesystem;
namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.name", "run.signature", "run.degree", "run.output_dir", "run.dtype",
      "run.init_std", "run.log_interval",
      "model.d_model", "model.n_heads", "model.mlp_dim", "model.seq_len",
      "model.total_layers",
      "policy.r_max", "policy.p_skip", "policy.kv_share", "policy.adapters",
      "policy.inference_rounds",
      "train.peak_lr", "train.weight_decay", "train.warmup_steps",
      "train.cooldown_steps", "train.total_steps", "train.batch_size",
      "train.grad_clip_norm", "train.seed", "train.beta1", "train.beta2",
      "train.adam_eps", "train.eval_interval", "train.eval_batches",
      "train.divergence_factor", "train.mask_reset", "train.checkpoint_interval",
      "train.cost_mode",
      "data.corpus",
      "baseline.signature", "baseline.degree", "baseline.steps"};
  return keys;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

class Reader {
 public:
  explicit Reader(const ConfigMap& c) : c_(c) {}

  bool has(const std::string& key) const { return c_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = c_.find(key);
    return it == c_.end() ? fallback : it->second;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    auto it = c_.find(key);
    if (it == c_.end()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer, got '" + it->second + "'");
  }

  double real(const std::string& key, double fallback) const {
    auto it = c_.find(key);
    if (it == c_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + it->second + "'");
  }

  bool boolean(const std::string& key, bool fallback) const {
    auto it = c_.find(key);
    if (it == c_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), ::tolower);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + it->second + "'");
  }

 private:
  const ConfigMap& c_;
};

Signature read_signature(const Reader& r, const std::string& section) {
  const std::string key = section + ".signature";
  const std::string text = r.str(key, "");
  if (text.empty()) throw ConfigError(key + ": required");
  try {
    if (text.find('@') != std::string::npos) {
      if (r.has(section + ".degree")) {
        throw ConfigError(section + ".degree: conflicts with the '@d' suffix of " + key);
      }
      return parse_spec(text);
    }
    return parse(text, static_cast<int>(r.integer(section + ".degree", 1)));
  } catch (const SignatureParseError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_text(const ConfigMap& config) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : config) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    sections[section].emplace_back(dot == std::string::npos ? key : key.substr(dot + 1), value);
  }
  std::string out;
  for (const auto& [section, entries] : sections) {
    if (!section.empty()) out += "[" + section + "]\n";
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    out += "\n";
  }
  return out;
}

int eval_rounds_of(const RunSpec& spec) {
  return rins_rounds(spec.signature) > 0 ? spec.policy.eval_rounds() : 1;
}

struct LoadedData {
  PackedRows train;
  std::vector<PackedRows> evals;
  int vocab = 0;
};

LoadedData load_data(const RunSpec& spec) {
  LoadedData data;
  TokenFile corpus;
  try {
    corpus = load_corpus(spec.corpus);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("data.corpus: ") + e.what());
  }
  data.vocab = corpus.metadata.at("vocab").get<int>();
  const std::int32_t eos = corpus.metadata.at("eos").get<std::int32_t>();
  data.train = pack_stream(corpus.tokens, spec.dims.seq_len, eos);
  if (data.train.rows() == 0) {
    throw ConfigError("data.corpus: shorter than one window of seq_len + 1 tokens");
  }
  for (const auto& [name, ref] : spec.evals) {
    TokenFile e;
    try {
      e = load_corpus(ref);
    } catch (const std::invalid_argument& err) {
      throw ConfigError("data.eval." + name + ": " + err.what());
    }
    if (e.metadata.at("vocab").get<int>() != data.vocab) {
      throw ConfigError("data.eval." + name + ": vocabulary differs from data.corpus");
    }
    data.evals.push_back(pack_stream(e.tokens, spec.dims.seq_len, eos));
    if (data.evals.back().rows() == 0) {
      throw ConfigError("data.eval." + name + ": shorter than one window");
    }
  }
  return data;
}

nlohmann::json base_manifest(const RunSpec& spec, const ModelDims& dims,
                             std::int64_t total_steps) {
  const ExecutionPlan plan = expand(spec.signature);
  const double step_expected =
      rins_rounds(spec.signature) > 0 && spec.policy.p_skip > 0
          ? expected_stochastic_cost(plan, dims, spec.policy.p_skip, spec.train.cost_mode)
          : step_cost(plan, dims, spec.train.cost_mode);
  nlohmann::json m = {
      {"name", spec.name},
      {"config_hash", spec.hash},
      {"signature", spec.signature.render_spec()},
      {"symbols", spec.signature.symbols},
      {"degree", spec.signature.degree},
      {"layers_per_block", layers_per_block(spec.signature, dims.total_layers)},
      {"dims", to_json(dims)},
      {"policy", to_json(spec.policy)},
      {"train", to_json(spec.train)},
      {"seed", spec.train.seed},
      {"dtype", spec.dtype},
      {"params", param_count(plan, dims)},
      {"eval_rounds", eval_rounds_of(spec)},
      {"corpus", spec.corpus},
      {"total_steps", total_steps},
      {"cost_mode", to_string(spec.train.cost_mode)},
      {"expected_step_cost", step_expected},
      {"expected_compute", step_expected * static_cast<double>(total_steps)},
  };
  nlohmann::json evals = nlohmann::json::object();
  for (const auto& [name, ref] : spec.evals) evals[name] = ref;
  m["evals"] = evals;
  if (spec.baseline) {
    m["baseline"] = {{"signature", spec.baseline->signature.render_spec()},
                     {"steps", spec.baseline->steps}};
  } else {
    m["baseline"] = nullptr;
  }
  return m;
}

template <typename T>
RunOutcome run_typed(const RunSpec& spec, const RunOptions& options,
                     const fs::path& dir, nlohmann::json manifest,
                     std::int64_t total_steps, const LoadedData& data,
                     const ModelDims& dims) {
  const auto started = std::chrono::steady_clock::now();
  TrainConfig cfg = spec.train;
  cfg.total_steps = total_steps;
  const fs::path ckpt = dir / "checkpoint.bin";

  std::optional<RecursiveTransformer<T>> model;
  TrainState<T> state;
  bool resumed = false;
  if (options.resume && fs::exists(ckpt)) {
    auto loaded = load_train_checkpoint<T>(ckpt.string());
    if (loaded.state.step < total_steps) {
      model.emplace(std::move(loaded.model));
      state = std::move(loaded.state);
      resumed = true;
      if (options.log) *options.log << spec.name << ": resuming at step " << state.step << "\n";
    }
  }
  if (!model) {
    try {
      model.emplace(spec.signature, dims, spec.policy);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    model->init(spec.train.seed, spec.init_std);
  }
  manifest["adapter_params"] = model->params().adapter_size();
  manifest["kv_cache_bytes"] = nullptr;
  if (model->rins_r() > 0) {
    manifest["kv_cache_bytes"] = model->kv_cache_bytes(eval_rounds_of(spec));
  }

  std::vector<EvalSet> evals;
  for (std::size_t i = 0; i < spec.evals.size(); ++i) {
    evals.push_back({spec.evals[i].first, &data.evals[i]});
  }
  TrainHooks hooks;
  hooks.checkpoint_path = ckpt.string();
  if (options.log && spec.log_interval > 0) {
    std::ostream* log = options.log;
    const std::string name = spec.name;
    const std::int64_t every = spec.log_interval;
    hooks.on_record = [log, name, every, total_steps](const TraceRecord& r) {
      if (r.step % every == 0 || r.step == total_steps) {
        *log << name << " step " << r.step << "/" << total_steps << " loss " << r.train_loss;
        for (double e : r.eval_loss) *log << " eval " << e;
        *log << "\n";
      }
      return true;
    };
  }
  const TrainResult result =
      train(*model, data.train, evals, cfg, hooks, resumed ? &state : nullptr);

  write_atomic(dir / "trace.csv", result.trace.to_csv());
  write_atomic(dir / "trace.jsonl", result.trace.to_jsonl());

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  manifest["steps_done"] = result.steps_done;
  manifest["realized_compute"] = result.compute;
  manifest["ledger_expected_compute"] = result.expected_compute;
  manifest["trace_digest"] = result.trace.digest();
  manifest["data_wraps"] = result.wraps;
  manifest["stop_reason"] = result.stop_reason;
  manifest["wall_seconds"] = seconds + manifest.value("wall_seconds", 0.0);
  if (!result.trace.records.empty()) {
    manifest["final_train_loss"] = result.trace.records.back().train_loss;
  }
  nlohmann::json final_eval = nlohmann::json::object();
  const auto points = result.trace.eval_points();
  if (!points.empty()) {
    for (std::size_t i = 0; i < result.trace.eval_names.size(); ++i) {
      final_eval[result.trace.eval_names[i]] = points.back()->eval_loss.at(i);
    }
  }
  manifest["final_eval"] = final_eval;
  manifest["status"] = result.diverged ? "diverged" : "completed";
  write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  if (result.wraps > 0 && options.log) {
    *options.log << spec.name << ": training rows cycled " << result.wraps << " time(s)\n";
  }
  return {dir, manifest["status"], false, manifest};
}

std::string csv_field(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  return v.dump();
}

struct SeriesInput {
  std::string name;
  LossTrace trace;
  nlohmann::json manifest;  // null for bare trace files
};

SeriesInput load_series(const std::string& input) {
  SeriesInput s;
  const fs::path p(input);
  if (fs::is_directory(p)) {
    s.trace = LossTrace::from_jsonl(read_file(p / "trace.jsonl"));
    s.manifest = nlohmann::json::parse(read_file(p / "manifest.json"));
    s.name = s.manifest.at("symbols").get<std::string>() + "@" +
             std::to_string(s.manifest.at("eval_rounds").get<int>());
    if (s.manifest.at("degree").get<int>() != 1) {
      s.name += "_d" + std::to_string(s.manifest.at("degree").get<int>());
    }
  } else {
    s.trace = LossTrace::from_jsonl(read_file(p));
    s.name = p.stem().string();
  }
  return s;
}

}  // namespace

ConfigMap parse_config(const std::string& text) {
  // '#' comments are accepted alongside the INI ';' form.
  std::string cleaned;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] == '#') {
      cleaned += "\n";
      continue;
    }
    cleaned += line + "\n";
  }
  boost::property_tree::ptree tree;
  std::istringstream src(cleaned);
  try {
    boost::property_tree::ini_parser::read_ini(src, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ConfigMap out;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      out[section] = trim(node.data());
      continue;
    }
    for (const auto& [key, value] : node) out[section + "." + key] = trim(value.data());
  }
  return out;
}

ConfigMap read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string config_hash(const ConfigMap& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [key, value] : config) {
    for (unsigned char c : key + "=" + value + "\n") {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return hex64(h);
}

fs::path output_root() {
  if (const char* env = std::getenv("RINS_OUTPUT_ROOT"); env != nullptr && *env) {
    return fs::path(env);
  }
  return fs::current_path();
}

fs::path resolve_output(const std::string& dir) {
  const fs::path p(dir);
  return p.is_absolute() ? p : output_root() / p;
}

RunSpec spec_from_config(const ConfigMap& config) {
  for (const auto& [key, value] : config) {
    if (known_keys().count(key) == 0 && key.rfind("data.eval.", 0) != 0) {
      throw ConfigError(key + ": unknown key");
    }
  }
  const Reader r(config);
  RunSpec spec;
  spec.source = config;
  spec.hash = config_hash(config);
  spec.signature = read_signature(r, "run");
  spec.name = r.str("run.name", spec.signature.symbols + "_d" +
                                    std::to_string(spec.signature.degree));
  spec.output_dir = r.str("run.output_dir", "runs/" + spec.name);
  spec.dtype = r.str("run.dtype", "float");
  if (spec.dtype != "float" && spec.dtype != "double") {
    throw ConfigError("run.dtype: expected float or double, got '" + spec.dtype + "'");
  }
  spec.init_std = r.real("run.init_std", 0.02);
  spec.log_interval = r.integer("run.log_interval", 0);

  ModelDims& d = spec.dims;
  d.d_model = static_cast<int>(r.integer("model.d_model", d.d_model));
  d.n_heads = static_cast<int>(r.integer("model.n_heads", d.n_heads));
  d.mlp_dim = static_cast<int>(r.integer("model.mlp_dim", d.mlp_dim));
  d.seq_len = static_cast<int>(r.integer("model.seq_len", d.seq_len));
  d.total_layers = static_cast<int>(r.integer("model.total_layers", d.total_layers));
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    // "dims.<field>: ..." becomes "model.<field>: ...".
    const std::string what = e.what();
    throw ConfigError(what.rfind("dims.", 0) == 0 ? "model." + what.substr(5) : what);
  }
  if (layers_per_block(spec.signature, d.total_layers) == 0) {
    throw ConfigError("run.signature: " + spec.signature.render_spec() +
                      " is infeasible with model.total_layers = " +
                      std::to_string(d.total_layers) + " (layers_per_block = 0)");
  }

  RecursionPolicy& p = spec.policy;
  p.r_max = static_cast<int>(
      r.integer("policy.r_max", std::max(1, rins_rounds(spec.signature))));
  p.p_skip = r.real("policy.p_skip", 0.0);
  p.kv_share = r.boolean("policy.kv_share", false);
  p.adapters = r.boolean("policy.adapters", false);
  if (r.has("policy.inference_rounds")) {
    p.inference_rounds = static_cast<int>(r.integer("policy.inference_rounds", 1));
  }
  try {
    p.validate();
    // The model constructor checks the policy against the signature.
    ModelDims probe = d;
    probe.vocab = 2;
    probe.d_model = probe.n_heads;
    probe.mlp_dim = 1;
    probe.seq_len = 1;
    RecursiveTransformer<float> check(spec.signature, probe, p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  TrainConfig& t = spec.train;
  t.peak_lr = r.real("train.peak_lr", t.peak_lr);
  t.weight_decay = r.real("train.weight_decay", t.weight_decay);
  t.warmup_steps = r.integer("train.warmup_steps", t.warmup_steps);
  t.cooldown_steps = r.integer("train.cooldown_steps", t.cooldown_steps);
  t.total_steps = r.integer("train.total_steps", t.total_steps);
  t.batch_size = static_cast<int>(r.integer("train.batch_size", t.batch_size));
  t.grad_clip_norm = r.real("train.grad_clip_norm", t.grad_clip_norm);
  t.seed = static_cast<std::uint64_t>(r.integer("train.seed", 0));
  t.beta1 = r.real("train.beta1", t.beta1);
  t.beta2 = r.real("train.beta2", t.beta2);
  t.adam_eps = r.real("train.adam_eps", t.adam_eps);
  t.eval_interval = r.integer("train.eval_interval", t.eval_interval);
  t.eval_batches = static_cast<int>(r.integer("train.eval_batches", t.eval_batches));
  t.divergence_factor = r.real("train.divergence_factor", t.divergence_factor);
  t.mask_reset = r.boolean("train.mask_reset", t.mask_reset);
  t.checkpoint_interval = r.integer("train.checkpoint_interval", t.checkpoint_interval);
  if (r.has("train.cost_mode")) {
    try {
      t.cost_mode = cost_mode_from_string(r.str("train.cost_mode", ""));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("train.cost_mode: ") + e.what());
    }
  }

  spec.corpus = r.str("data.corpus", "");
  if (spec.corpus.empty()) throw ConfigError("data.corpus: required");
  for (const auto& [key, value] : config) {
    if (key.rfind("data.eval.", 0) == 0) spec.evals.emplace_back(key.substr(10), value);
  }

  if (r.has("baseline.signature") || r.has("baseline.steps")) {
    if (r.has("train.total_steps")) {
      throw ConfigError(
          "train.total_steps: derived from [baseline] by compute matching; do not set it");
    }
    BaselineRef b;
    b.signature = read_signature(r, "baseline");
    b.steps = r.integer("baseline.steps", 0);
    if (b.steps < 1) throw ConfigError("baseline.steps: must be >= 1");
    if (layers_per_block(b.signature, d.total_layers) == 0) {
      throw ConfigError("baseline.signature: infeasible (layers_per_block = 0)");
    }
    spec.baseline = b;
    t.total_steps = derive_total_steps(spec);
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

ConfigMap spec_to_config(const RunSpec& spec) { return spec.source; }

std::int64_t derive_total_steps(const RunSpec& spec) {
  if (!spec.baseline) return spec.train.total_steps;
  const ExecutionPlan base = expand(spec.baseline->signature);
  const ExecutionPlan variant = expand(spec.signature);
  const CostMode mode = spec.train.cost_mode;
  if (rins_rounds(spec.signature) > 0 && spec.policy.p_skip > 0) {
    const double cost_b = step_cost(base, spec.dims, mode);
    const double cost_v = expected_stochastic_cost(variant, spec.dims, spec.policy.p_skip, mode);
    return static_cast<std::int64_t>(
        std::floor(static_cast<double>(spec.baseline->steps) * cost_b / cost_v));
  }
  return matched_steps(base, variant, spec.dims, spec.dims, spec.baseline->steps, mode);
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

RunOutcome cmd_run(const RunSpec& spec, const RunOptions& options) {
  const fs::path dir = resolve_output(spec.output_dir);
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    const auto existing = nlohmann::json::parse(read_file(manifest_path));
    if (existing.value("config_hash", "") != spec.hash) {
      throw std::runtime_error(dir.string() + " belongs to a run with config hash " +
                               existing.value("config_hash", "?") + ", not " + spec.hash);
    }
    const std::string status = existing.value("status", "");
    if (options.resume && (status == "completed" || status == "diverged")) {
      if (options.log) *options.log << spec.name << ": already " << status << ", skipping\n";
      return {dir, status, true, existing};
    }
    if (!options.resume) fs::remove(dir / "checkpoint.bin");
  }

  const LoadedData data = load_data(spec);
  ModelDims dims = spec.dims;
  dims.vocab = data.vocab;
  const std::int64_t total_steps = spec.train.total_steps;
  nlohmann::json manifest = base_manifest(spec, dims, total_steps);
  manifest["status"] = "running";
  write_atomic(dir / "spec.ini", config_text(spec.source));
  write_atomic(manifest_path, manifest.dump(2) + "\n");

  try {
    return spec.dtype == "double"
               ? run_typed<double>(spec, options, dir, manifest, total_steps, data, dims)
               : run_typed<float>(spec, options, dir, manifest, total_steps, data, dims);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_atomic(manifest_path, manifest.dump(2) + "\n");
    throw;
  }
}

SweepOutcome cmd_sweep(const ConfigMap& sweep, int jobs, const RunOptions& options) {
  const Reader r(sweep);
  ConfigMap base;
  for (const auto& [key, value] : sweep) {
    if (key.rfind("sweep.", 0) == 0) continue;
    if (key.rfind("run.", 0) == 0 || key.rfind("baseline.", 0) == 0 ||
        key == "train.total_steps") {
      throw ConfigError(key + ": not allowed in a sweep file");
    }
    base[key] = value;
  }
  for (const auto& [key, value] : sweep) {
    if (key.rfind("sweep.", 0) == 0 &&
        !std::set<std::string>{"sweep.name", "sweep.output_dir", "sweep.baseline_steps",
                               "sweep.signatures", "sweep.dtype", "sweep.log_interval"}
             .count(key)) {
      throw ConfigError(key + ": unknown key");
    }
  }
  const std::string name = r.str("sweep.name", "sweep");
  const std::int64_t baseline_steps = r.integer("sweep.baseline_steps", 0);
  if (baseline_steps < 1) throw ConfigError("sweep.baseline_steps: must be >= 1");
  const int total_layers = static_cast<int>(r.integer("model.total_layers", ModelDims{}.total_layers));

  std::set<std::string> wanted;
  {
    std::istringstream in(r.str("sweep.signatures", ""));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        wanted.insert(parse_spec(item).render_spec());
      } catch (const SignatureParseError& e) {
        throw ConfigError("sweep.signatures: " + item + ": " + e.what());
      }
    }
  }

  SweepOutcome out;
  out.dir = resolve_output(r.str("sweep.output_dir", "sweeps/" + name));
  fs::create_directories(out.dir);

  struct Job {
    SweepCandidate candidate;
    std::optional<RunSpec> spec;
    nlohmann::json row;
  };
  std::vector<Job> work;
  for (const auto& c : enumerate_sweep(total_layers)) {
    if (!wanted.empty() && !wanted.count(c.signature.render_spec())) continue;
    Job job;
    job.candidate = c;
    const std::string run_name = c.signature.symbols + "_d" + std::to_string(c.signature.degree);
    job.row = {{"signature", c.signature.symbols},
               {"degree", c.signature.degree},
               {"feasible", c.feasible},
               {"layers_per_block", c.layers_per_block},
               {"run", run_name}};
    if (!c.feasible) {
      job.row["status"] = "skipped";
      job.row["reason"] = "layers_per_block = 0";
      job.row["params"] = 0;
      job.row["steps_matched"] = 0;
      work.push_back(std::move(job));
      continue;
    }
    ConfigMap cfg = base;
    if (rins_rounds(c.signature) == 0) {
      for (auto it = cfg.begin(); it != cfg.end();) {
        it = it->first.rfind("policy.", 0) == 0 ? cfg.erase(it) : std::next(it);
      }
    }
    cfg["run.name"] = run_name;
    cfg["run.signature"] = c.signature.render_spec();
    cfg["run.output_dir"] = (out.dir / run_name).string();
    if (r.has("sweep.dtype")) cfg["run.dtype"] = r.str("sweep.dtype", "float");
    if (r.has("sweep.log_interval")) cfg["run.log_interval"] = r.str("sweep.log_interval", "0");
    cfg["baseline.signature"] = "A";
    cfg["baseline.steps"] = std::to_string(baseline_steps);
    try {
      job.spec = spec_from_config(cfg);
      job.row["params"] = param_count(expand(c.signature), job.spec->dims);
      job.row["steps_matched"] = job.spec->train.total_steps;
    } catch (const ConfigError& e) {
      job.row["status"] = "failed";
      job.row["error"] = e.what();
    }
    work.push_back(std::move(job));
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= work.size()) return;
      Job& job = work[i];
      if (!job.spec) continue;
      try {
        RunOptions ro = options;
        std::ostringstream local;
        if (options.log && jobs > 1) ro.log = &local;
        const RunOutcome res = cmd_run(*job.spec, ro);
        job.row["status"] = res.status;
        job.row["reused"] = res.reused;
        job.row["final_train_loss"] = res.manifest.value("final_train_loss", nlohmann::json());
        job.row["final_eval"] = res.manifest.value("final_eval", nlohmann::json::object());
        job.row["realized_compute"] = res.manifest.value("realized_compute", nlohmann::json());
        if (options.log && jobs > 1) {
          std::lock_guard<std::mutex> lock(log_mutex);
          *options.log << local.str();
        }
      } catch (const std::exception& e) {
        job.row["status"] = "failed";
        job.row["error"] = e.what();
      }
    }
  };
  const int threads = std::max(1, jobs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string jsonl;
  std::ostringstream csv;
  csv << "signature,degree,feasible,layers_per_block,params,steps_matched,status,"
         "final_train_loss,final_eval_loss,realized_compute\n";
  for (auto& job : work) {
    if (job.row.value("status", "") == "failed") ++out.failures;
    jsonl += job.row.dump() + "\n";
    const auto& row = job.row;
    std::string eval_loss;
    if (row.contains("final_eval") && row["final_eval"].is_object() && !row["final_eval"].empty()) {
      eval_loss = csv_field(row["final_eval"].begin().value());
    }
    csv << row["signature"].get<std::string>() << ',' << row["degree"] << ','
        << (row["feasible"].get<bool>() ? "true" : "false") << ',' << row["layers_per_block"]
        << ',' << csv_field(row.value("params", nlohmann::json())) << ','
        << csv_field(row.value("steps_matched", nlohmann::json())) << ','
        << row.value("status", "") << ','
        << csv_field(row.value("final_train_loss", nlohmann::json())) << ',' << eval_loss
        << ',' << csv_field(row.value("realized_compute", nlohmann::json())) << "\n";
    out.rows.push_back(row);
  }
  write_atomic(out.dir / "sweep.jsonl", jsonl);
  write_atomic(out.dir / "comparison.csv", csv.str());
  return out;
}

std::vector<LossPoint> trace_points(const LossTrace& trace, const std::string& corpus,
                                    std::int64_t min_step) {
  std::size_t idx = 0;
  if (!corpus.empty()) {
    auto it = std::find(trace.eval_names.begin(), trace.eval_names.end(), corpus);
    if (it == trace.eval_names.end()) {
      throw std::invalid_argument("trace has no eval corpus '" + corpus + "'");
    }
    idx = static_cast<std::size_t>(it - trace.eval_names.begin());
  }
  std::vector<LossPoint> pts;
  for (const auto* r : trace.eval_points()) {
    if (r->step > min_step && idx < r->eval_loss.size()) {
      pts.push_back({r->compute, r->eval_loss[idx]});
    }
  }
  return pts;
}

FitOutcome cmd_fit(const std::vector<std::string>& inputs, const fs::path& out_dir,
                   const std::string& corpus) {
  FitOutcome out;
  double lo = 0, hi = 0;
  nlohmann::json fits = nlohmann::json::object();
  for (const auto& input : inputs) {
    const SeriesInput s = load_series(input);
    std::vector<LossPoint> pts;
    try {
      const std::int64_t warmup =
          s.manifest.is_null() ? 0 : s.manifest.at("train").value("warmup_steps", std::int64_t{0});
      pts = trace_points(s.trace, corpus, warmup);
    } catch (const std::exception& e) {
      out.excluded.push_back(s.name + ": " + e.what());
      continue;
    }
    if (pts.size() < 4) {
      out.excluded.push_back(s.name + ": only " + std::to_string(pts.size()) +
                             " eval points, need 4");
      continue;
    }
    FitResult fit;
    try {
      fit = fit_power_law(pts);
    } catch (const std::invalid_argument& e) {
      out.excluded.push_back(s.name + ": " + e.what());
      continue;
    }
    out.fits[s.name] = fit;
    fits[s.name] = to_json(fit);
    if (!s.manifest.is_null() && s.manifest.at("degree") == 1) {
      const Signature sig = parse(s.manifest.at("symbols").get<std::string>(), 1);
      const int r = rins_rounds(sig);
      if (r > 0 && s.manifest.at("eval_rounds") == r && !out.family.count(r)) {
        out.family[r] = fit;
        lo = lo == 0 ? fit.x_min : std::min(lo, fit.x_min);
        hi = std::max(hi, fit.x_max);
      }
    }
  }
  fs::create_directories(out_dir);
  nlohmann::json doc = {{"fits", fits}, {"excluded", out.excluded}};
  if (out.family.size() >= 2) {
    out.optimal = optimal_r(out.family, log_grid(lo, hi, 200));
    write_atomic(out_dir / "breakpoints.csv", out.optimal->breakpoints_csv());
    std::ostringstream rs;
    rs << "x,r_star,extrapolated\n";
    for (std::size_t i = 0; i < out.optimal->x.size(); ++i) {
      rs << csv_field(out.optimal->x[i]) << ',' << out.optimal->r_star[i] << ','
         << (out.optimal->extrapolated[i] ? "true" : "false") << "\n";
    }
    write_atomic(out_dir / "optimal_r.csv", rs.str());
    doc["optimal_r_nondecreasing"] = out.optimal->nondecreasing();
  }
  write_atomic(out_dir / "fits.json", doc.dump(2) + "\n");
  return out;
}

nlohmann::json comparison_row(const fs::path& run_dir) {
  const auto m = nlohmann::json::parse(read_file(run_dir / "manifest.json"));
  nlohmann::json row = {{"name", m.at("name")},
                        {"signature", m.at("symbols")},
                        {"degree", m.at("degree")},
                        {"rounds", m.at("eval_rounds")},
                        {"params", m.at("params")},
                        {"adapter_params", m.value("adapter_params", 0)},
                        {"steps", m.value("steps_done", 0)},
                        {"compute", m.value("realized_compute", 0.0)},
                        {"final_train_loss", m.value("final_train_loss", nlohmann::json())},
                        {"status", m.value("status", "")},
                        {"config_hash", m.at("config_hash")}};
  const auto fe = m.value("final_eval", nlohmann::json::object());
  row["final_eval_loss"] = fe.empty() ? nlohmann::json() : fe.begin().value();
  return row;
}

std::string comparison_csv(const std::vector<nlohmann::json>& rows) {
  static const char* cols[] = {"name",    "signature", "degree", "rounds",
                               "params",  "adapter_params", "steps", "compute",
                               "final_train_loss", "final_eval_loss", "status",
                               "config_hash"};
  std::ostringstream out;
  for (std::size_t i = 0; i < std::size(cols); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < std::size(cols); ++i) {
      out << (i ? "," : "") << csv_field(row.value(cols[i], nlohmann::json()));
    }
    out << "\n";
  }
  return out.str();
}

FitOutcome cmd_report(const std::vector<std::string>& inputs, const fs::path& out_dir,
                      const std::string& corpus) {
  FitOutcome fit = cmd_fit(inputs, out_dir, corpus);
  std::vector<nlohmann::json> rows;
  std::ostringstream plot;
  plot << "series,x,y\n";
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) rows.push_back(comparison_row(input));
    const SeriesInput s = load_series(input);
    try {
      for (const auto& p : trace_points(s.trace, corpus)) {
        plot << s.name << ',' << csv_field(p.x) << ',' << csv_field(p.loss) << "\n";
      }
    } catch (const std::exception&) {
      // Already reported as excluded by cmd_fit.
    }
  }
  write_atomic(out_dir / "comparison.csv", comparison_csv(rows));
  write_atomic(out_dir / "plot_data.csv", plot.str());
  return fit;
}

std::vector<nlohmann::json> cmd_eval(const std::string& checkpoint,
                                     const std::vector<std::string>& task_files,
                                     const EvalOptions& options) {
  auto loaded = load_checkpoint<double>(checkpoint);
  const auto& model = loaded.model;
  std::vector<int> rounds = options.rounds;
  if (rounds.empty()) {
    rounds.push_back(model.rins_r() > 0 ? model.policy().eval_rounds() : 1);
  }
  Tokenizer tok;
  if (options.tokenizer == "bytes") {
    tok = byte_tokenizer();
  } else if (options.tokenizer == "ids") {
    tok = id_tokenizer(model.dims().vocab - 1);
  } else {
    throw ConfigError("--tokenizer: expected bytes or ids, got '" + options.tokenizer + "'");
  }
  ScoreOptions so;
  so.length_normalized = !options.unnormalized;
  so.full_sequence = options.full_sequence;
  std::vector<nlohmann::json> results;
  for (const auto& file : task_files) {
    const auto items = read_tasks(file);
    for (int r : rounds) {
      const auto res = eval_mcq(model, items, r, tok, so);
      results.push_back(result_json(fs::path(file).stem().string(), r, res));
    }
  }
  return results;
}

}  // namespace rins::lab
