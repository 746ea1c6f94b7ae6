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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rins/compute_ledger.hpp"
#include "rins/corpus.hpp"
#include "rins/eval.hpp"
#include "rins/lab.hpp"
#include "rins/model.hpp"
#include "rins/scaling_laws.hpp"
#include "rins/signature.hpp"

namespace py = pybind11;
using namespace rins;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(
      py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ModelDims dims_arg(const py::object& o) {
  ModelDims d;
  if (o.is_none()) return d;
  nlohmann::json j = to_json(d);
  j.update(from_py(o));
  return dims_from_json(j);
}

CostMode mode_arg(const std::string& s) { return cost_mode_from_string(s); }

Signature sig_arg(const std::string& text) {
  return text.find('@') != std::string::npos ? parse_spec(text) : parse(text, 1);
}

py::dict plan_dict(const ExecutionPlan& plan) {
  py::dict d;
  d["leaf_sequence"] = plan.leaf_sequence;
  d["unique_leaf_count"] = plan.unique_leaf_count;
  d["skip_eligible"] = plan.skip_eligible;
  d["render"] = plan.render();
  return d;
}

TokenBatch batch_arg(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("tokens must be a 2-D array (batch, seq)");
  TokenBatch t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), t.ids.begin());
  return t;
}

class PyModel {
 public:
  PyModel(const std::string& signature, const py::object& dims, const py::object& policy,
          std::uint64_t seed, double init_std)
      : model_(sig_arg(signature), dims_arg(dims),
               policy.is_none() ? default_policy(sig_arg(signature))
                                : policy_from_json(from_py(policy))) {
    model_.init(seed, init_std);
  }
  explicit PyModel(RecursiveTransformer<float> m) : model_(std::move(m)) {}

  static RecursionPolicy default_policy(const Signature& sig) {
    RecursionPolicy p;
    p.r_max = std::max(1, rins_rounds(sig));
    return p;
  }

  py::array_t<float> forward(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& tokens,
                             int rounds) const {
    const TokenBatch t = batch_arg(tokens);
    const Matrix<float> logits = model_.forward(t, rounds);
    py::array_t<float> out({static_cast<py::ssize_t>(t.batch), static_cast<py::ssize_t>(t.seq),
                            static_cast<py::ssize_t>(logits.cols())});
    std::copy(logits.data(), logits.data() + logits.size(), out.mutable_data());
    return out;
  }

  double loss(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& tokens,
              const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& targets,
              int rounds) const {
    const TokenBatch t = batch_arg(tokens);
    if (static_cast<std::size_t>(targets.size()) != t.ids.size()) {
      throw std::invalid_argument("targets must have the shape of tokens");
    }
    return model_.loss(t, std::span<const std::int32_t>(targets.data(), targets.size()), rounds);
  }

  const RecursiveTransformer<float>& model() const { return model_; }

 private:
  RecursiveTransformer<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Recursive-signature transformer toolkit";

  py::register_exception<SignatureParseError>(m, "SignatureParseError", PyExc_ValueError);
  py::register_exception<lab::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "canonicalize", [](const std::string& s) { return canonicalize(s); }, py::arg("symbols"));
  m.def(
      "expand",
      [](const std::string& signature, int degree) {
        return plan_dict(expand(parse(signature, degree)));
      },
      py::arg("signature"), py::arg("degree") = 1);
  m.def(
      "render_spec",
      [](const std::string& signature, int degree) { return parse(signature, degree).render_spec(); },
      py::arg("signature"), py::arg("degree") = 1);
  m.def(
      "rins_rounds", [](const std::string& s) { return rins_rounds(sig_arg(s)); },
      py::arg("signature"));

  m.def(
      "step_cost",
      [](const std::string& s, const py::object& dims, const std::string& mode) {
        return step_cost(expand(sig_arg(s)), dims_arg(dims), mode_arg(mode));
      },
      py::arg("signature"), py::arg("dims") = py::none(), py::arg("mode") = "layer-pass");
  m.def(
      "matched_steps",
      [](const std::string& baseline, const std::string& variant, std::int64_t steps,
         const py::object& dims, const std::string& mode) {
        const ModelDims d = dims_arg(dims);
        return matched_steps(expand(sig_arg(baseline)), expand(sig_arg(variant)), d, d, steps,
                             mode_arg(mode));
      },
      py::arg("baseline"), py::arg("variant"), py::arg("baseline_steps"),
      py::arg("dims") = py::none(), py::arg("mode") = "layer-pass");
  m.def(
      "expected_stochastic_cost",
      [](const std::string& s, double p_skip, const py::object& dims, const std::string& mode) {
        return expected_stochastic_cost(expand(sig_arg(s)), dims_arg(dims), p_skip,
                                        mode_arg(mode));
      },
      py::arg("signature"), py::arg("p_skip"), py::arg("dims") = py::none(),
      py::arg("mode") = "layer-pass");
  m.def(
      "param_count",
      [](const std::string& s, const py::object& dims) {
        return param_count(expand(sig_arg(s)), dims_arg(dims));
      },
      py::arg("signature"), py::arg("dims") = py::none());
  m.def(
      "enumerate_sweep",
      [](int total_layers) {
        py::list out;
        for (const auto& c : enumerate_sweep(total_layers)) {
          py::dict d;
          d["signature"] = c.signature.render_spec();
          d["feasible"] = c.feasible;
          d["layers_per_block"] = c.layers_per_block;
          out.append(d);
        }
        return out;
      },
      py::arg("total_layers"));

  m.def(
      "load_corpus",
      [](const std::string& ref) {
        const TokenFile f = load_corpus(ref);
        py::array_t<std::int32_t> tokens(static_cast<py::ssize_t>(f.tokens.size()));
        std::copy(f.tokens.begin(), f.tokens.end(), tokens.mutable_data());
        return py::make_tuple(tokens, to_py(f.metadata));
      },
      py::arg("reference"));
  m.def(
      "pack",
      [](const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& stream,
         int seq_len, std::int32_t eos) {
        const std::vector<std::int32_t> v(stream.data(), stream.data() + stream.size());
        const PackedRows rows = pack_stream(v, seq_len, eos);
        py::array_t<std::int32_t> out({static_cast<py::ssize_t>(rows.rows()),
                                       static_cast<py::ssize_t>(seq_len + 1)});
        std::copy(rows.tokens.begin(), rows.tokens.end(), out.mutable_data());
        return out;
      },
      py::arg("stream"), py::arg("seq_len"), py::arg("eos"));

  m.def(
      "fit_power_law",
      [](const std::vector<double>& x, const std::vector<double>& loss) {
        if (x.size() != loss.size()) throw std::invalid_argument("x and loss differ in length");
        std::vector<LossPoint> pts;
        for (std::size_t i = 0; i < x.size(); ++i) pts.push_back({x[i], loss[i]});
        return to_py(to_json(fit_power_law(pts)));
      },
      py::arg("x"), py::arg("loss"));

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const py::object&, const py::object&, std::uint64_t,
                    double>(),
           py::arg("signature"), py::arg("dims") = py::none(), py::arg("policy") = py::none(),
           py::arg("seed") = 0, py::arg("init_std") = 0.02)
      .def_static(
          "load",
          [](const std::string& path) { return PyModel(load_checkpoint<float>(path).model); },
          py::arg("path"))
      .def("forward", &PyModel::forward, py::arg("tokens"), py::arg("rounds") = 1,
           "Logits of shape (batch, seq, vocab).")
      .def("loss", &PyModel::loss, py::arg("tokens"), py::arg("targets"), py::arg("rounds") = 1)
      .def("kv_cache_bytes",
           [](const PyModel& p, int rounds) { return p.model().kv_cache_bytes(rounds); })
      .def_property_readonly("signature",
                             [](const PyModel& p) { return p.model().signature().render_spec(); })
      .def_property_readonly("dims", [](const PyModel& p) { return to_py(to_json(p.model().dims())); })
      .def_property_readonly("policy",
                             [](const PyModel& p) { return to_py(to_json(p.model().policy())); })
      .def_property_readonly("num_params",
                             [](const PyModel& p) { return p.model().params().size(); });

  m.def(
      "run",
      [](const py::dict& config, bool resume) {
        lab::ConfigMap cfg;
        for (const auto& [k, v] : config) {
          cfg[py::str(k).cast<std::string>()] = py::str(v).cast<std::string>();
        }
        lab::RunOptions options;
        options.resume = resume;
        const auto spec = lab::spec_from_config(cfg);
        lab::RunOutcome out;
        {
          py::gil_scoped_release release;
          out = lab::cmd_run(spec, options);
        }
        return to_py(out.manifest);
      },
      py::arg("config"), py::arg("resume") = true,
      "Trains one run from a flat {'section.key': value} config; returns its manifest.");
  m.def(
      "run_file",
      [](const std::string& path, bool resume) {
        const auto spec = lab::spec_from_config(lab::read_config(path));
        lab::RunOptions options;
        options.resume = resume;
        return to_py(lab::cmd_run(spec, options).manifest);
      },
      py::arg("path"), py::arg("resume") = true);
  m.def(
      "fit_runs",
      [](const std::vector<std::string>& inputs, const std::string& out_dir,
         const std::string& corpus) {
        const auto out = lab::cmd_fit(inputs, out_dir, corpus);
        py::dict fits;
        for (const auto& [name, f] : out.fits) fits[py::str(name)] = to_py(to_json(f));
        return py::make_tuple(fits, out.excluded);
      },
      py::arg("inputs"), py::arg("out_dir"), py::arg("corpus") = "");
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::vector<std::string>& tasks,
         const std::vector<int>& rounds, const std::string& tokenizer) {
        lab::EvalOptions opts;
        opts.rounds = rounds;
        opts.tokenizer = tokenizer;
        py::list out;
        for (const auto& row : lab::cmd_eval(checkpoint, tasks, opts)) out.append(to_py(row));
        return out;
      },
      py::arg("checkpoint"), py::arg("tasks"), py::arg("rounds") = std::vector<int>{},
      py::arg("tokenizer") = "bytes");
  m.def(
      "render_template",
      [](const std::string& style, const std::string& context, const std::string& prefix,
         const std::string& option) {
        MCQItem item;
        item.style = template_style_from_string(style);
        item.context = context;
        item.prefix = prefix;
        item.options = {option, option};
        return render_template(item.style, item, 0);
      },
      py::arg("style"), py::arg("context"), py::arg("prefix"), py::arg("option"));
}
