"""Python bindings for the prefbmc preference-optimization toolkit."""

import json

from . import _core
from ._core import (
    ConfigError,
    DataError,
    ExternalError,
    NumericError,
    default_stopwords,
    derive_seed,
    diff_masks,
    edit_distance,
    lambda_weights,
    split_tokens,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ExternalError",
    "NumericError",
    "bridge",
    "default_stopwords",
    "derive_seed",
    "diff_masks",
    "edit_distance",
    "evaluate",
    "gen_data",
    "lambda_weights",
    "pair_loss",
    "report",
    "resolved_config",
    "self_check",
    "sft",
    "split_tokens",
    "train",
]


def _overrides(overrides):
    return [(k, v if isinstance(v, str) else json.dumps(v)) for k, v in (overrides or {}).items()]


def resolved_config(config=None, **overrides):
    """Fully resolved run config as a dict. Keyword names use '__' for '.'."""
    return json.loads(_core.resolved_config(config, _overrides(_dotted(overrides))))


def _dotted(kwargs):
    return {k.replace("__", "."): v for k, v in kwargs.items()}


def _stage(fn):
    def run(config=None, **overrides):
        return fn(config, _overrides(_dotted(overrides)))

    run.__name__ = fn.__name__
    run.__doc__ = f"Run the {fn.__name__} stage. Keyword overrides use '__' for '.', e.g. train__lr=1e-4."
    return run


gen_data = _stage(_core.gen_data)
bridge = _stage(_core.bridge)
sft = _stage(_core.sft)
train = _stage(_core.train)
evaluate = _stage(_core.evaluate)
report = _stage(_core.report)


def pair_loss(spec, logp_w, logp_l, ref_w, ref_l, mask_w=None, mask_l=None):
    """Objective value of one pair. `spec` is a dict such as {"method": "DPO_BMC", "beta": 0.1}."""
    return _core.pair_loss(json.dumps(spec), logp_w, logp_l, ref_w, ref_l, mask_w, mask_l)


def self_check():
    """Runs every self-check suite; returns {name: (passed, detail)}."""
    return {name: (passed, detail) for name, passed, detail in _core.self_check()}
