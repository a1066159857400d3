"""Experiment configuration: YAML parsing, defaults, validation and hashing.

Diagnostics carry the line of the offending key so errors in hand-edited
files are easy to find.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-3`` as a float (YAML 1.1 wants ``1.0e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)

DEFAULTS: dict = {
    "manifold": {"type": "sphere", "n": 4, "periods": None},
    "conformal_factor": {"family": "constant", "value": -1.0, "a": 1.0, "b": 0.0, "axis": 0,
                         "points": None, "values": None, "normalize": True},
    "epsilons": [0.5, 0.25, 0.125],
    "seed": None,
    "block": {"R": None, "n_r": 400, "n_s": 400, "points": 10000, "fd_points": 200, "fd_step": 0.005},
    "packing": {"eta": 0.5, "eta_floor": 0.05, "max_retries": 1000, "coverage_samples": 10000,
                "coverage_pairs": 1000},
    "distances": {"pairs": 100, "mesh_points": 8000, "mesh_k": 48, "hop_factor": 2.0,
                  "certificate_points": 2000},
    "tolerances": {"fd_rtol": 1e-4, "core_rtol": 1e-8, "monotone": 0.0},
    "output": "runs/default",
}

_FAMILIES = {"sphere": ("constant", "linear", "tabulated"), "torus": ("constant", "cosine", "tabulated")}


@dataclass(frozen=True)
class Diagnostic:
    line: Optional[int]
    key: str
    message: str

    def __str__(self):
        where = f"line {self.line}" if self.line is not None else "config"
        return f"{where}: {self.key}: {self.message}"


@dataclass
class ExperimentConfig:
    data: dict
    source: Optional[str] = None

    def __getitem__(self, key):
        return self.data[key]

    @property
    def manifold_type(self) -> str:
        return self.data["manifold"]["type"]

    @property
    def n(self) -> int:
        return int(self.data["manifold"]["n"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def epsilons(self) -> list:
        return [float(e) for e in self.data["epsilons"]]

    @property
    def output(self) -> Path:
        return Path(self.data["output"])

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with top-level or dotted-key overrides (``"manifold.type"``)."""
        data = copy.deepcopy(self.data)
        for key, val in kw.items():
            if val is None:
                continue
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        cfg = ExperimentConfig(data, self.source)
        problems = _semantic_checks(data, {})
        if problems:
            raise ConfigError(problems)
        return cfg


def _line_map(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers using the YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[f"{prefix}[{i}]"] = v.start_mark.line + 1
            _line_map(v, f"{prefix}[{i}]", out)
    return out


def _merge(defaults, raw, lines, prefix, diags):
    out = copy.deepcopy(defaults)
    for k, v in raw.items():
        path = f"{prefix}.{k}" if prefix else str(k)
        if k not in defaults:
            diags.append(Diagnostic(lines.get(path), path, "unknown key"))
            continue
        if isinstance(defaults[k], dict):
            if not isinstance(v, dict):
                diags.append(Diagnostic(lines.get(path), path, "expected a mapping"))
                continue
            out[k] = _merge(defaults[k], v, lines, path, diags)
        else:
            out[k] = v
    return out


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _semantic_checks(cfg, lines):
    d = []

    def bad(path, msg):
        d.append(Diagnostic(lines.get(path), path, msg))

    man = cfg["manifold"]
    if man["type"] not in ("sphere", "torus"):
        bad("manifold.type", "must be 'sphere' or 'torus'")
    if not isinstance(man["n"], int) or isinstance(man["n"], bool):
        bad("manifold.n", "must be an integer")
    elif man["n"] < 4:
        bad("manifold.n", f"n must be >= 4 (got {man['n']}); the construction needs (n-2)(n-3) > 0")
    if man["type"] == "torus" and man["periods"] is not None:
        per = man["periods"]
        if not isinstance(per, list) or not all(_is_number(p) and p > 0 for p in per):
            bad("manifold.periods", "must be a list of positive numbers")
        elif isinstance(man["n"], int) and len(per) != man["n"]:
            bad("manifold.periods", f"needs {man['n']} entries")

    eps = cfg["epsilons"]
    if not isinstance(eps, list) or not eps:
        bad("epsilons", "must be a non-empty list")
    else:
        for i, e in enumerate(eps):
            if not _is_number(e) or not 0.0 < e < 1.0:
                bad(f"epsilons[{i}]", f"epsilon must lie in (0,1), got {e!r}")
        if all(_is_number(e) for e in eps) and any(b >= a for a, b in zip(eps[:-1], eps[1:])):
            bad("epsilons", "must be strictly decreasing")

    seed = cfg["seed"]
    if seed is None:
        bad("seed", "a seed is required for reproducibility")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        bad("seed", "must be a non-negative integer")

    cf = cfg["conformal_factor"]
    fam = cf["family"]
    kind = man["type"] if man["type"] in _FAMILIES else "sphere"
    if fam not in _FAMILIES[kind]:
        bad("conformal_factor.family", f"must be one of {_FAMILIES[kind]} on the {kind}")
    if fam == "constant" and not _is_number(cf["value"]):
        bad("conformal_factor.value", "must be a number")
    if fam in ("linear", "cosine"):
        for key in ("a", "b"):
            if not _is_number(cf[key]):
                bad(f"conformal_factor.{key}", "must be a number")
    if fam == "tabulated":
        pts, vals = cf["points"], cf["values"]
        if not isinstance(pts, list) or not isinstance(vals, list) or len(pts) != len(vals) or not vals:
            bad("conformal_factor.points", "tabulated factor needs equal-length 'points' and 'values'")
        else:
            for i, v in enumerate(vals):
                if not _is_number(v):
                    bad(f"conformal_factor.values[{i}]", "must be a number")
                elif not cf["normalize"] and v > -1.0:
                    bad(f"conformal_factor.values[{i}]",
                        f"sample {v} violates f <= -1, required when normalization is disabled")
    if not cf["normalize"] and fam in ("constant", "linear", "cosine"):
        top = cf["value"] if fam == "constant" else (-cf["a"] + abs(cf["b"]) if _is_number(cf["a"])
                                                      and _is_number(cf["b"]) else None)
        if top is not None and top > -1.0:
            bad("conformal_factor.normalize", f"max f = {top} violates f <= -1 with normalization disabled")

    blk = cfg["block"]
    if blk["R"] is not None and (not _is_number(blk["R"]) or blk["R"] <= 0):
        bad("block.R", "must be a positive number")
    elif blk["R"] is not None and man["type"] == "sphere" and blk["R"] >= 0.01:
        bad("block.R", "sphere tube radius must be < 1/100")
    for key in ("n_r", "n_s", "points", "fd_points"):
        if not isinstance(blk[key], int) or blk[key] < 1:
            bad(f"block.{key}", "must be a positive integer")

    pk = cfg["packing"]
    if not _is_number(pk["eta"]) or not 0 < pk["eta"] < np.pi / 2:
        bad("packing.eta", "must lie in (0, pi/2)")
    elif _is_number(pk["eta_floor"]) and pk["eta"] < pk["eta_floor"]:
        bad("packing.eta", f"below the configured floor {pk['eta_floor']}")
    for key in ("max_retries", "coverage_samples", "coverage_pairs"):
        if not isinstance(pk[key], int) or pk[key] < 1:
            bad(f"packing.{key}", "must be a positive integer")

    ds = cfg["distances"]
    for key in ("pairs", "mesh_points", "mesh_k", "certificate_points"):
        if not isinstance(ds[key], int) or ds[key] < 1:
            bad(f"distances.{key}", "must be a positive integer")
    if not _is_number(ds["hop_factor"]) or ds["hop_factor"] < 1:
        bad("distances.hop_factor", "must be a number >= 1")
    return d


def validate_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    """Parse YAML text, fill defaults and run semantic checks.

    Raises ConfigError with a list of line-anchored diagnostics.
    """
    try:
        node = yaml.compose(text, Loader=_Loader)
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError([Diagnostic(line, "<yaml>", str(exc).splitlines()[0])]) from exc
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError([Diagnostic(1, "<root>", "config must be a mapping")])
    lines = _line_map(node) if node is not None else {}
    diags: list = []
    merged = _merge(DEFAULTS, raw, lines, "", diags)
    diags += _semantic_checks(merged, lines)
    if diags:
        raise ConfigError(diags)
    return ExperimentConfig(merged, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return validate_config(path.read_text(), source=str(path))


def default_config(**overrides) -> ExperimentConfig:
    """Defaults with a seed of 0, for programmatic use."""
    data = copy.deepcopy(DEFAULTS)
    data["seed"] = 0
    return ExperimentConfig(data).with_overrides(**overrides)


def to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.data, sort_keys=True)


def as_plain(value: Any):
    """Recursively convert numpy scalars/arrays for JSON output."""
    if isinstance(value, dict):
        return {str(k): as_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [as_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value
