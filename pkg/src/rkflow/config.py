"""Run configuration: defaults, file loading, dotted overrides, validation.

Validation collects every problem before raising so a bad config can be
fixed in one pass.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

SCHEMA_VERSION = 1

ANY = object()

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "field": {"kind": "toy_mmdit", "params": ANY},
    "model": {
        "d_model": 64,
        "n_heads": 4,
        "l_multi": 2,
        "l_single": 4,
        "n_text": 8,
        "grid_h": 8,
        "grid_w": 8,
        "channels": 4,
        "seed": 0,
    },
    "latent": {"shape": None, "value": None},
    "solve": {
        "tableau": "classic4",
        "steps": 30,
        "direction": "denoise",
        "reuse": False,
        "guidance": 1.0,
        "prompt": [1],
    },
    "convergence": {
        "tableaus": ["euler", "heun2", "kutta3", "three_eighths4"],
        "h_list": [0.1, 0.05, 0.025, 0.0125, 0.00625],
        "z0": 1.0,
    },
    "nfe_bench": {"rows": None},
    "bound_check": {"trials": 100, "delta_max": 1e-3, "lipschitz": None, "tableau": "classic4", "steps": 30},
    "edit": {
        "source_prompt": [11, 42, 7, 99],
        "target_prompt": [11, 42, 8, 99],
        "tableau": "kutta3",
        "steps": 8,
        "guidance_invert": 1.0,
        "guidance_edit": 3.0,
        "plan": {
            "ops": {"m_cc": "none", "m_ci": "replace", "m_ic": "replace", "m_ii": "none", "v_c": "none", "v_i": "mean"},
            "blocks": ["single"],
            "layers": None,
            "d_list": [1],
        },
    },
    "fidelity": {
        "cases": 20,
        "tableau": "kutta3",
        "steps": 8,
        "blocks": ["multi", "single"],
        "layers": None,
        "d_list": None,
        "guidance_invert": 1.0,
        "guidance_edit": 3.0,
    },
    "respmap": {"prompt": [11, 42, 7, 99], "words": [0, 1, 2, 3], "steps": 10, "height": 64, "width": 64, "guidance": 1.0},
}

# method label, tableau, steps, reuse
NFE_ROWS = [
    ("Vanilla RF", "euler", 30, False),
    ("Vanilla RF", "euler", 60, False),
    ("Vanilla RF", "euler", 90, False),
    ("Vanilla RF", "euler", 120, False),
    ("RF-Solver", "rf_solver", 15, False),
    ("RF-Solver", "rf_solver", 30, False),
    ("RF-Solver", "rf_solver", 60, False),
    ("FireFlow", "fireflow_midpoint", 30, True),
    ("FireFlow", "fireflow_midpoint", 60, True),
    ("FireFlow", "fireflow_midpoint", 90, True),
    ("FireFlow", "fireflow_midpoint", 120, True),
    ("Ours (r=2)", "heun2", 15, False),
    ("Ours (r=2)", "heun2", 30, False),
    ("Ours (r=2)", "heun2", 60, False),
    ("Ours (r=3)", "kutta3", 30, False),
    ("Ours (r=3)", "kutta3", 40, False),
    ("Ours (r=4)", "three_eighths4", 15, False),
    ("Ours (r=4)", "three_eighths4", 30, False),
]


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _kind(value):
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    if isinstance(value, list):
        return "list"
    if isinstance(value, dict):
        return "dict"
    return "null"


def _validate(value, default, path, problems):
    if default is ANY or default is None:
        return
    want, got = _kind(default), _kind(value)
    if want == "float" and got == "int":
        return
    if want != got:
        problems.append(f"{path}: expected {want}, got {got} ({value!r})")
        return
    if want == "dict":
        for key in value:
            if key not in default:
                problems.append(f"{path}.{key}: unknown key")
            else:
                _validate(value[key], default[key], f"{path}.{key}", problems)


def _merge(base, override):
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val)
        else:
            base[key] = val
    return base


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    problems = []
    for item in overrides or []:
        if "=" not in item:
            problems.append(f"override {item!r}: expected key=value")
            continue
        key, text = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _parse_value(text)
    if problems:
        raise ConfigError(problems)
    return cfg


def _defaults():
    d = {k: v for k, v in DEFAULTS.items() if k != "field"}
    d = copy.deepcopy(d)
    d["field"] = {"kind": DEFAULTS["field"]["kind"], "params": {}}
    return d


def resolve_config(path=None, overrides=None, seed=None) -> dict:
    """Defaults, then the config file, then ``--set`` overrides, then ``--seed``."""
    user = {}
    problems = []
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
        if not isinstance(user, dict):
            raise ConfigError([f"{path}: top level must be an object"])
    user = apply_overrides(user, overrides)
    if seed is not None:
        user["seed"] = seed
    _validate(user, DEFAULTS, "config", problems)
    if user.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        problems.append(f"config.schema_version: unsupported version {user['schema_version']!r}")
    seed_val = user.get("seed", 0)
    if isinstance(seed_val, int) and not 0 <= seed_val < 2**64:
        problems.append("config.seed: must be an unsigned 64-bit integer")
    if problems:
        raise ConfigError(problems)
    return _merge(_defaults(), user)
