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

#ifndef RINS_LAB_HPP_
#define RINS_LAB_HPP_

// Experiment orchestration: run specs read from INI files, compute-matched
// runs and sweeps persisted as self-describing run directories, and fits and
// reports over finished runs.
//
// Run spec schema (all sections optional except [run] and [data]):
//
//   [run]      name, signature (e.g. "A^2B" or "A^3B@d1"), degree, output_dir,
//              dtype (float|double), init_std, log_interval
//   [model]    d_model, n_heads, mlp_dim, seq_len, total_layers
//   [policy]   r_max, p_skip, kv_share, adapters, inference_rounds
//   [train]    every TrainConfig field, e.g. peak_lr, total_steps
//   [data]     corpus = <corpus reference>, eval.<name> = <corpus reference>
//   [baseline] signature, degree, steps: total_steps is then derived from
//              the baseline's compute and must not be set by hand.
//
// The vocabulary comes from the training corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rins/compute_ledger.hpp"
#include "rins/model.hpp"
#include "rins/scaling_laws.hpp"
#include "rins/signature.hpp"
#include "rins/train.hpp"

namespace rins::lab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Invalid or inconsistent configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat "section.key" -> value map, as read from an INI file.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap read_config(const std::string& path);
ConfigMap parse_config(const std::string& text);

// FNV-1a 64 over "key=value\n" lines in key order, as 16 hex digits. Key
// order in the source file does not matter.
std::string config_hash(const ConfigMap& config);

// Output root: $RINS_OUTPUT_ROOT if set, else the working directory.
std::filesystem::path output_root();
std::filesystem::path resolve_output(const std::string& dir);

struct BaselineRef {
  Signature signature;
  std::int64_t steps = 0;
};

struct RunSpec {
  std::string name;
  Signature signature;
  ModelDims dims;  // vocab filled from the corpus at run time
  TrainConfig train;
  RecursionPolicy policy;
  std::string corpus;
  std::vector<std::pair<std::string, std::string>> evals;  // name, reference
  std::string output_dir;
  std::optional<BaselineRef> baseline;
  std::string dtype = "float";
  double init_std = 0.02;
  std::int64_t log_interval = 0;
  std::string hash;
  ConfigMap source;
};

// Field-level validation; throws ConfigError. Unknown keys are rejected.
RunSpec spec_from_config(const ConfigMap& config);
ConfigMap spec_to_config(const RunSpec& spec);

// Steps for the run: cfg.total_steps, or the compute-matched count when a
// baseline is set. Stochastic-skip runs match their expected step cost.
std::int64_t derive_total_steps(const RunSpec& spec);

struct RunOutcome {
  std::filesystem::path dir;
  std::string status;  // completed | diverged | failed
  bool reused = false;  // an identical completed run was found on disk
  nlohmann::json manifest;
};

struct RunOptions {
  bool resume = true;   // continue from a checkpoint, skip completed runs
  std::ostream* log = nullptr;
};

// Trains one spec into its run directory: spec.ini, manifest.json,
// trace.csv, trace.jsonl and checkpoint.bin. Infeasible signatures raise
// ConfigError citing layers_per_block = 0.
RunOutcome cmd_run(const RunSpec& spec, const RunOptions& options = {});

// Sweep file: [sweep] name, output_dir, baseline_steps, cost_mode and an
// optional comma-separated `signatures` filter ("ABB@d1,AAB@d2"), plus
// [model], [train], [policy] and [data] shared by every run. Runs go to
// <output_dir>/<signature>_d<degree>.
struct SweepOutcome {
  std::filesystem::path dir;
  std::vector<nlohmann::json> rows;  // one per candidate
  int failures = 0;
};

SweepOutcome cmd_sweep(const ConfigMap& sweep, int jobs = 1,
                       const RunOptions& options = {});

// Loss points of one trace: (compute, eval loss) at eval steps after
// `min_step`, for the named eval corpus (the first when empty).
std::vector<LossPoint> trace_points(const LossTrace& trace,
                                    const std::string& corpus = "",
                                    std::int64_t min_step = 0);

struct FitOutcome {
  std::map<std::string, FitResult> fits;  // series -> fit
  std::vector<std::string> excluded;      // with reasons
  std::map<int, FitResult> family;        // A^r B runs keyed by r
  std::optional<OptimalR> optimal;
};

// Inputs are run directories or trace.jsonl files; for run directories the
// warmup steps are left out of the fit. Writes fits.json and,
// with two or more A^r B members, breakpoints.csv into `out_dir`.
FitOutcome cmd_fit(const std::vector<std::string>& inputs,
                   const std::filesystem::path& out_dir,
                   const std::string& corpus = "");

// cmd_fit plus comparison.csv (one row per run) and plot_data.csv
// (series,x,y with series = signature@rounds).
FitOutcome cmd_report(const std::vector<std::string>& inputs,
                      const std::filesystem::path& out_dir,
                      const std::string& corpus = "");

// Comparison row for one run directory, from its manifest alone.
nlohmann::json comparison_row(const std::filesystem::path& run_dir);
std::string comparison_csv(const std::vector<nlohmann::json>& rows);

struct EvalOptions {
  std::vector<int> rounds;     // empty: the policy's inference rounds
  std::string tokenizer = "bytes";  // bytes | ids
  bool unnormalized = false;
  bool full_sequence = false;
};

// Scores every task file against a checkpoint; returns result rows
// {task, rounds, accuracy, n_items}.
std::vector<nlohmann::json> cmd_eval(const std::string& checkpoint,
                                     const std::vector<std::string>& task_files,
                                     const EvalOptions& options);

// Writes via a temporary file and rename.
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace rins::lab

#endif  // RINS_LAB_HPP_
