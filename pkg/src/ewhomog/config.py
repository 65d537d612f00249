"""Run configuration: one JSON document with per-subcommand sections.

The defaults below double as the schema: unknown keys anywhere in a user
config are rejected so typos cannot silently fall back to defaults.  Values
are overridable from the command line as dotted paths (common.lambda=0.3).
The sha256 hash of the effective config is stamped into every output record.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

from .chain import ChainConfig
from .errors import ConfigurationError

DEFAULTS: dict = {
    "common": {
        "dimension": 3,
        "lambda": 0.2,
        "n_substeps": 8,
        "ensemble_size": 256,
        "gamma": None,
        "master_seed": 0,
        "grid_points": 128,
    },
    "sample_field": {
        "t_lo": 0.0,
        "t_hi": 2.0,
        "half_width": 4.0,
        "dt": 0.125,
        "dx": 0.25,
        "dtype": "float64",
    },
    "diffusivity": {"n_blocks": 20000},
    "zeta_fit": {
        "horizons": [1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
        "n_samples": 200000,
    },
    "nu_eff": {
        "truncation": 8.0,
        "n_outer": 96,
        "n_inner": 4,
        "check_saturation": True,
    },
    "nu_eff_white": {"n_paths": 20000, "horizon": 20.0},
    "nearby_tail": {
        "n_samples": 2000,
        "horizon": 40.0,
        "fit_lo": 0.05,
        "fit_hi": 0.5,
    },
    "mean_check": {
        "eps": 0.1,
        "t": 1.0,
        "x": [0.0, 0.0, 0.0],
        "n_paths": 2000,
        "n_blocks": 20000,
        "u0_sigma": 1.0,
        "pde_half_width": 8.0,
        "pde_points": 64,
    },
    "ew_experiment": {
        "eps": 0.5,
        "t": 1.0,
        "n_realizations": 200,
        "n_walkers": 2000,
        "grid_half_width": 4.0,
        "grid_points": 32,
        "g_sigma": 1.0,
        "u0_sigma": 1.2,
        "dt": 0.125,
        "dx": 0.25,
        "nu_eff2": None,
        "zeta_c1": None,
        "zeta_c2": None,
        "pde_points": 128,
        "pde_margin": 4.0,
        "pde_time_nodes": 17,
    },
    "selftest": {"n_blocks": 4000, "n_walkers": 4000},
}


def _reject_unknown(user, schema, path=""):
    for key, val in user.items():
        if key not in schema:
            raise ConfigurationError(f"unknown config key '{path}{key}'")
        if isinstance(schema[key], dict) and isinstance(val, dict):
            _reject_unknown(val, schema[key], f"{path}{key}.")


def _merge(base, user):
    out = copy.deepcopy(base)
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one dotted-path override, e.g. 'common.lambda=0.3'."""
    if "=" not in assignment:
        raise ConfigurationError(f"override '{assignment}' is not of the form path=value")
    path, _, raw = assignment.partition("=")
    keys = path.strip().split(".")
    node = cfg
    schema = DEFAULTS
    for key in keys[:-1]:
        if not isinstance(schema, dict) or key not in schema:
            raise ConfigurationError(f"unknown config key '{path.strip()}'")
        schema = schema[key]
        node = node.setdefault(key, {})
    leaf = keys[-1]
    if not isinstance(schema, dict) or leaf not in schema:
        raise ConfigurationError(f"unknown config key '{path.strip()}'")
    node[leaf] = _parse_value(raw.strip())


def load_config(path=None, overrides=(), seed=None) -> dict:
    """Defaults, then file, then dotted overrides, then the seed channels."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("config root must be a JSON object")
        _reject_unknown(user, DEFAULTS)
        cfg = _merge(cfg, user)
    for assignment in overrides:
        apply_override(cfg, assignment)
    env_seed = os.environ.get("EWHOMOG_SEED")
    if seed is not None:
        cfg["common"]["master_seed"] = int(seed)
    elif env_seed is not None:
        cfg["common"]["master_seed"] = int(env_seed)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def chain_config(cfg: dict, lam=None) -> ChainConfig:
    c = cfg["common"]
    return ChainConfig(
        lam=c["lambda"] if lam is None else lam,
        dimension=c["dimension"],
        n_substeps=c["n_substeps"],
        ensemble_size=c["ensemble_size"],
        gamma=c["gamma"],
        master_seed=c["master_seed"],
        grid_points=c["grid_points"],
    )
