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

// labctl: run, sweep, fit, evaluate and report recursive-signature
// experiments. Exit codes: 0 success, 2 configuration error, 3 runtime
// failure.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rins/eval.hpp"
#include "rins/lab.hpp"

namespace lab = rins::lab;

namespace {

int run_main(int argc, char** argv) {
  CLI::App app{"Recursive-signature experiment runner"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string run_config;
  bool fresh = false;
  auto* run = app.add_subcommand("run", "Train one run spec");
  run->add_option("config", run_config, "Run spec (.ini)")->required()->check(CLI::ExistingFile);
  run->add_flag("--fresh", fresh, "Ignore an existing checkpoint");

  std::string sweep_config;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run every candidate signature at matched compute");
  sweep->add_option("config", sweep_config, "Sweep spec (.ini)")->required()->check(CLI::ExistingFile);
  sweep->add_option("-j,--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  std::vector<std::string> inputs;
  std::string out_dir = "fit";
  std::string corpus;
  auto* fit = app.add_subcommand("fit", "Fit power laws to finished runs or trace files");
  fit->add_option("inputs", inputs, "Run directories or trace.jsonl files")->required();
  fit->add_option("-o,--out", out_dir, "Output directory");
  fit->add_option("--corpus", corpus, "Eval corpus name (default: the first)");

  std::vector<std::string> report_inputs;
  std::string report_dir = "report";
  auto* report = app.add_subcommand("report", "Fits plus comparison and plot tables");
  report->add_option("inputs", report_inputs, "Run directories")->required();
  report->add_option("-o,--out", report_dir, "Output directory");
  report->add_option("--corpus", corpus, "Eval corpus name (default: the first)");

  std::string checkpoint;
  std::vector<std::string> tasks;
  lab::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Zero-shot multiple-choice accuracy of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "checkpoint.bin")->required()->check(CLI::ExistingFile);
  eval->add_option("tasks", tasks, "Task files (.jsonl)")->required()->check(CLI::ExistingFile);
  eval->add_option("-r,--rounds", eval_opts.rounds, "Recursion rounds to evaluate")->delimiter(',');
  eval->add_option("--tokenizer", eval_opts.tokenizer, "bytes or ids")
      ->check(CLI::IsMember({"bytes", "ids"}));
  eval->add_flag("--unnormalized", eval_opts.unnormalized, "Sum option log-likelihoods");
  eval->add_flag("--full-sequence", eval_opts.full_sequence, "Score the whole sequence");

  std::string kind = "copy", task_out;
  int n_items = 200, vocab = 64, length = 6, n_options = 4;
  std::uint64_t seed = 0;
  auto* make_tasks = app.add_subcommand("tasks", "Write a synthetic task file");
  make_tasks->add_option("kind", kind, "copy, random or grammar")
      ->check(CLI::IsMember({"copy", "random", "grammar"}));
  make_tasks->add_option("-o,--out", task_out, "Output .jsonl")->required();
  make_tasks->add_option("-n,--items", n_items, "Number of items");
  make_tasks->add_option("--vocab", vocab, "Token ids drawn from [0, vocab)");
  make_tasks->add_option("--length", length, "Context or option length");
  make_tasks->add_option("--options", n_options, "Options per item");
  make_tasks->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? lab::kExitOk : lab::kExitConfig;
  }

  lab::RunOptions options;
  options.log = quiet ? nullptr : &std::cerr;

  if (*run) {
    lab::RunSpec spec = lab::spec_from_config(lab::read_config(run_config));
    spec.log_interval = spec.log_interval > 0 ? spec.log_interval : 100;
    options.resume = !fresh;
    const auto out = lab::cmd_run(spec, options);
    std::cout << out.manifest.dump(2) << "\n";
    return out.status == "completed" ? lab::kExitOk : lab::kExitRuntime;
  }
  if (*sweep) {
    const auto out = lab::cmd_sweep(lab::read_config(sweep_config), jobs, options);
    for (const auto& row : out.rows) std::cout << row.dump() << "\n";
    std::cerr << "sweep: " << out.rows.size() << " candidates, " << out.failures
              << " failed; results in " << out.dir.string() << "\n";
    return out.failures == 0 ? lab::kExitOk : lab::kExitRuntime;
  }
  if (*fit || *report) {
    const auto out = *fit ? lab::cmd_fit(inputs, lab::resolve_output(out_dir), corpus)
                          : lab::cmd_report(report_inputs, lab::resolve_output(report_dir), corpus);
    for (const auto& [name, f] : out.fits) {
      std::cout << name << ": L(x) = " << f.eps_inf << " + " << f.beta << " * x^-" << f.c
                << "  (n=" << f.n_points << ", residual " << f.residual << ")\n";
    }
    for (const auto& e : out.excluded) std::cerr << "excluded " << e << "\n";
    if (out.optimal && !out.optimal->nondecreasing()) {
      std::cerr << "warning: optimal r decreases with compute on this grid\n";
    }
    return lab::kExitOk;
  }
  if (*eval) {
    for (const auto& row : lab::cmd_eval(checkpoint, tasks, eval_opts)) {
      std::cout << row.dump() << "\n";
    }
    return lab::kExitOk;
  }
  if (*make_tasks) {
    std::vector<rins::MCQItem> items;
    if (kind == "copy") {
      items = rins::make_copy_task(n_items, vocab, length, n_options, seed);
    } else if (kind == "random") {
      items = rins::make_random_task(n_items, vocab, length, seed);
    } else {
      items = rins::make_grammar_task(rins::default_grammar(seed), n_items, length,
                                      std::max(1, length / 2), n_options, seed + 1);
    }
    rins::write_tasks(task_out, items);
    std::cerr << "wrote " << items.size() << " items to " << task_out << "\n";
    return lab::kExitOk;
  }
  return lab::kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const lab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return lab::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lab::kExitRuntime;
  }
}
