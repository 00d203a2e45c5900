"""Versioned JSON experiment configuration.

A config is a JSON object with a required ``schema_version``.  Parsing fills
in defaults, so ``parse(to_dict(parse(x))) == parse(x)``.  Validation errors
name the offending field.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SCHEMA_VERSION = 1
TARGET_KINDS = ("gaussian", "mixture", "bayes_logreg")
INIT_KINDS = ("uniform_ball", "prior")
DEFAULT_SWEEP = [float(g) for g in np.logspace(-3, 0, 7)]


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}: required field is missing")
    return d[key]


def _num(v, where, positive=False, integer=False, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if not math.isfinite(float(v)):
        raise ConfigError(f"{where}: must be finite")
    if positive and v <= 0:
        raise ConfigError(f"{where}: must be positive, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v!r}")
    return int(v) if integer else float(v)


def _choice(v, options, where):
    if v not in options:
        raise ConfigError(f"{where}: must be one of {list(options)}, got {v!r}")
    return v


def _known(d: dict, keys, where):
    extra = sorted(set(d) - set(keys))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {extra}")


@dataclass
class ExperimentConfig:
    experiment: str
    target: dict
    kernel: dict
    run: dict
    init: dict = field(default_factory=lambda: {"kind": "uniform_ball", "center": None})
    metrics: dict = field(default_factory=dict)
    repetitions: int = 1
    output_dir: str = "results"
    sweep: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "target": copy.deepcopy(self.target),
            "kernel": copy.deepcopy(self.kernel),
            "run": copy.deepcopy(self.run),
            "init": copy.deepcopy(self.init),
            "metrics": copy.deepcopy(self.metrics),
            "repetitions": self.repetitions,
            "output_dir": self.output_dir,
            "sweep": copy.deepcopy(self.sweep),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, seed=None, output_dir=None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["run"]["seed"] = int(seed)
        if output_dir is not None:
            d["output_dir"] = os.fspath(output_dir)
        return parse_config(d, check_files=False)


def _parse_target(t: dict) -> dict:
    where = "target"
    if not isinstance(t, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = _choice(_req(t, "kind", where), TARGET_KINDS, f"{where}.kind")
    out = {"kind": kind}
    if kind == "gaussian":
        _known(t, ("kind", "d", "mean", "diag_cov", "recenter"), where)
        if "mean" in t:
            mean = [float(v) for v in t["mean"]]
        else:
            d = _num(_req(t, "d", where), f"{where}.d", integer=True, minimum=1)
            mean = [0.0] * d
        cov = [float(v) for v in t.get("diag_cov", [1.0] * len(mean))]
        if len(cov) != len(mean):
            raise ConfigError(f"{where}.diag_cov: length {len(cov)} does not match mean length {len(mean)}")
        if any(c <= 0 for c in cov):
            raise ConfigError(f"{where}.diag_cov: entries must be positive")
        out.update(mean=mean, diag_cov=cov, recenter=bool(t.get("recenter", False)))
    elif kind == "mixture":
        _known(t, ("kind", "weights", "means", "shared_cov", "recenter"), where)
        w = [float(v) for v in _req(t, "weights", where)]
        means = [[float(v) for v in row] for row in _req(t, "means", where)]
        if not w or len(w) != len(means):
            raise ConfigError(f"{where}.weights: need one positive weight per mean")
        cov = _req(t, "shared_cov", where)
        out.update(weights=w, means=means, shared_cov=cov, recenter=bool(t.get("recenter", False)))
    else:
        keys = ("kind", "data_path", "subsample", "full_data", "minibatch", "expected_rows", "test_fraction", "split_seed", "a0", "b0", "cache_path")
        _known(t, keys, where)
        path = _req(t, "data_path", where)
        if not isinstance(path, str):
            raise ConfigError(f"{where}.data_path: expected a string")
        full = bool(t.get("full_data", False))
        sub = t.get("subsample", 50_000)
        out.update(
            data_path=path,
            full_data=full,
            subsample=None if (full or sub is None) else _num(sub, f"{where}.subsample", integer=True, minimum=1),
            minibatch=None if t.get("minibatch") is None else _num(t["minibatch"], f"{where}.minibatch", integer=True, minimum=1),
            expected_rows=None if t.get("expected_rows") is None else _num(t["expected_rows"], f"{where}.expected_rows", integer=True, minimum=1),
            test_fraction=_num(t.get("test_fraction", 0.2), f"{where}.test_fraction", positive=True),
            split_seed=_num(t.get("split_seed", 0), f"{where}.split_seed", integer=True, minimum=0),
            a0=_num(t.get("a0", 1.0), f"{where}.a0", positive=True),
            b0=_num(t.get("b0", 0.01), f"{where}.b0", positive=True),
            cache_path=t.get("cache_path"),
        )
        if not (0 < out["test_fraction"] < 1):
            raise ConfigError(f"{where}.test_fraction: must lie in (0, 1)")
    return out


def _parse_kernel(k: dict) -> dict:
    if not isinstance(k, dict):
        raise ConfigError("kernel: expected an object")
    _known(k, ("family", "bandwidth", "median_heuristic"), "kernel")
    fam = _choice(k.get("family", "rbf"), ("rbf", "imq", "matern32", "laplace"), "kernel.family")
    return {
        "family": fam,
        "bandwidth": _num(k.get("bandwidth", 1.0), "kernel.bandwidth", positive=True),
        "median_heuristic": bool(k.get("median_heuristic", False)),
    }


def _parse_schedule(s: dict) -> dict:
    where = "run.schedule"
    if not isinstance(s, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = _choice(_req(s, "kind", where), ("constant", "theory", "adagrad_momentum"), f"{where}.kind")
    if kind == "constant":
        _known(s, ("kind", "gamma"), where)
        return {"kind": kind, "gamma": _num(_req(s, "gamma", where), f"{where}.gamma", positive=True)}
    if kind == "theory":
        _known(s, ("kind", "c"), where)
        return {"kind": kind, "c": _num(_req(s, "c", where), f"{where}.c", positive=True)}
    _known(s, ("kind", "momentum", "epsilon", "base"), where)
    mom = _num(s.get("momentum", 0.9), f"{where}.momentum", minimum=0)
    if mom >= 1:
        raise ConfigError(f"{where}.momentum: must be < 1")
    return {
        "kind": kind,
        "momentum": mom,
        "epsilon": _num(s.get("epsilon", 1e-6), f"{where}.epsilon", positive=True),
        "base": _num(s.get("base", 0.05), f"{where}.base", positive=True),
    }


def _parse_run(r: dict) -> dict:
    where = "run"
    if not isinstance(r, dict):
        raise ConfigError(f"{where}: expected an object")
    keys = ("algorithm", "n", "K", "T", "schedule", "sampling", "output_time", "seed", "track_potential")
    _known(r, keys, where)
    alg = _choice(_req(r, "algorithm", where), ("svgd", "vp", "gb"), f"{where}.algorithm")
    n = _num(_req(r, "n", where), f"{where}.n", integer=True, minimum=1)
    K = _num(r.get("K", 1), f"{where}.K", integer=True, minimum=1)
    T = _num(_req(r, "T", where), f"{where}.T", integer=True, minimum=0)
    if alg == "gb" and K > n:
        raise ConfigError(f"{where}.K: gb requires K <= n (got K={K}, n={n})")
    seed = _num(r.get("seed", 0), f"{where}.seed", integer=True, minimum=0)
    if seed >= 2**64:
        raise ConfigError(f"{where}.seed: must fit in 64 bits")
    return {
        "algorithm": alg,
        "n": n,
        "K": K,
        "T": T,
        "schedule": _parse_schedule(_req(r, "schedule", where)),
        "sampling": _choice(r.get("sampling", "without_replacement"), ("without_replacement", "with_replacement"), f"{where}.sampling"),
        "output_time": _choice(r.get("output_time", "random_S"), ("random_S", "final"), f"{where}.output_time"),
        "seed": seed,
        "track_potential": bool(r.get("track_potential", False)),
    }


def _parse_metrics(m: dict) -> dict:
    where = "metrics"
    if not isinstance(m, dict):
        raise ConfigError(f"{where}: expected an object")
    _known(m, ("cadence", "ksd_kernel", "ksd_estimator", "mmd_reference_size", "mmd_kernel"), where)
    ksd = m.get("ksd_kernel")
    mmdk = m.get("mmd_kernel")
    return {
        "cadence": _num(m.get("cadence", 1), f"{where}.cadence", integer=True, minimum=1),
        "ksd_kernel": None if ksd is None else _parse_kernel(ksd),
        "ksd_estimator": _choice(m.get("ksd_estimator", "vstat"), ("vstat", "ustat"), f"{where}.ksd_estimator"),
        "mmd_reference_size": _num(m.get("mmd_reference_size", 0), f"{where}.mmd_reference_size", integer=True, minimum=0),
        "mmd_kernel": None if mmdk is None else _parse_kernel(mmdk),
    }


def parse_config(data, check_files: bool = True) -> ExperimentConfig:
    """Validate a config dict (or JSON text) and fill defaults."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in data:
        raise ConfigError("schema_version: required field is missing")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {data['schema_version']!r} (expected {SCHEMA_VERSION})")
    _known(data, ("schema_version", "experiment", "target", "kernel", "run", "init", "metrics", "repetitions", "output_dir", "sweep"), "config")
    name = _req(data, "experiment", "config")
    if not isinstance(name, str) or not name:
        raise ConfigError("config.experiment: expected a nonempty string")
    target = _parse_target(_req(data, "target", "config"))
    init = data.get("init", {"kind": "uniform_ball"})
    if not isinstance(init, dict):
        raise ConfigError("init: expected an object")
    _known(init, ("kind", "center"), "init")
    center = init.get("center")
    if center is not None:
        if isinstance(center, list):
            center = [_num(c, "init.center[]") for c in center]
        else:
            center = _num(center, "init.center")
    init = {"kind": _choice(init.get("kind", "uniform_ball"), INIT_KINDS, "init.kind"), "center": center}
    if center is not None and init["kind"] != "uniform_ball":
        raise ConfigError("init.center: only valid for uniform_ball initialization")
    if init["kind"] == "prior" and target["kind"] != "bayes_logreg":
        raise ConfigError("init.kind: 'prior' is only available for bayes_logreg targets")
    sweep = data.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict):
            raise ConfigError("sweep: expected an object")
        _known(sweep, ("gammas",), "sweep")
        gammas = sweep.get("gammas", DEFAULT_SWEEP)
        if not isinstance(gammas, list) or not gammas:
            raise ConfigError("sweep.gammas: expected a nonempty list")
        sweep = {"gammas": [_num(g, "sweep.gammas[]", positive=True) for g in gammas]}
    out_dir = data.get("output_dir", "results")
    if not isinstance(out_dir, str):
        raise ConfigError("output_dir: expected a string")
    cfg = ExperimentConfig(
        experiment=name,
        target=target,
        kernel=_parse_kernel(data.get("kernel", {})),
        run=_parse_run(_req(data, "run", "config")),
        init=init,
        metrics=_parse_metrics(data.get("metrics", {})),
        repetitions=_num(data.get("repetitions", 1), "repetitions", integer=True, minimum=1),
        output_dir=out_dir,
        sweep=sweep,
    )
    if check_files and target["kind"] == "bayes_logreg":
        cache = target.get("cache_path")
        if not os.path.exists(target["data_path"]) and not (cache and os.path.exists(cache)):
            raise ConfigError(f"target.data_path: file not found: {target['data_path']}")
    return cfg


def load_config(path, check_files: bool = True) -> ExperimentConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, check_files=check_files)
