"""Recursive-signature transformer toolkit.

Signature algebra, compute accounting, the recursive model, synthetic
corpora, scaling-law fits and the experiment runner, backed by a C++ core.
"""

from ._core import (
    ConfigError,
    Model,
    SignatureParseError,
    canonicalize,
    enumerate_sweep,
    evaluate,
    expand,
    expected_stochastic_cost,
    fit_power_law,
    fit_runs,
    load_corpus,
    matched_steps,
    pack,
    param_count,
    render_spec,
    render_template,
    rins_rounds,
    run,
    run_file,
    step_cost,
)

__all__ = [
    "ConfigError",
    "Model",
    "SignatureParseError",
    "canonicalize",
    "enumerate_sweep",
    "evaluate",
    "expand",
    "expected_stochastic_cost",
    "fit_power_law",
    "fit_runs",
    "load_corpus",
    "matched_steps",
    "pack",
    "param_count",
    "render_spec",
    "render_template",
    "rins_rounds",
    "run",
    "run_file",
    "step_cost",
]
