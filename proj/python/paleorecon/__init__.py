"""Python access to the paleorecon core.

JSON documents produced by the core are decoded here so callers get plain
dicts and lists.
"""

import json

from . import _core
from ._core import (
    build_id,
    fit_cps,
    fit_lasso,
    generate_noise,
    lambda_max,
    select_k,
    select_lambda_cv,
    tingley_lambda,
)

__version__ = build_id().split()[-1]


def rmse_profile(method, x, y, **kwargs):
    """Holdout-block RMSE report of one method, as a dict."""
    return json.loads(_core.rmse_profile(method, x, y, **kwargs))


def run_experiment(recipe, parameters=None, seed=0, threads=1, output_dir=None):
    """Runs a recipe in synthetic mode.

    Parameter values may be numbers or lists; lists of numbers are joined with
    commas, lists of names with semicolons.
    """
    params = {}
    for key, value in (parameters or {}).items():
        if isinstance(value, (list, tuple)):
            sep = ";" if any(isinstance(v, str) for v in value) else ","
            value = sep.join(str(v) for v in value)
        params[key] = str(value)
    raw = _core.run_experiment(recipe, params, seed, threads, str(output_dir or ""))
    return {
        "manifest": json.loads(raw["manifest"]),
        "reports": {k: json.loads(v) for k, v in raw["reports"].items()},
        "tables": dict(raw["tables"]),
    }


__all__ = [
    "build_id",
    "fit_cps",
    "fit_lasso",
    "generate_noise",
    "lambda_max",
    "rmse_profile",
    "run_experiment",
    "select_k",
    "select_lambda_cv",
    "tingley_lambda",
]
