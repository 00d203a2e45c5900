"""Experiment orchestration: build models from a config, run repetitions, write results."""

from __future__ import annotations

import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import __version__
from ..engines import Metrics, RunConfig, RunRecord, format_float, make_schedule, rng_streams, run
from ..kernels import KernelSpec, kernel_constants, median_bandwidth
from ..particles import sample_uniform_ball
from ..targets import (
    LogRegPrior,
    bayes_logreg_target,
    gaussian_target,
    load_covertype,
    mixture_target,
    predictive_accuracy,
    recenter,
)
from .config import ExperimentConfig, parse_config

Z95 = 1.96
AGG_METRICS = ("ksd2", "mmd2", "max_particle_norm")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_target(cfg: ExperimentConfig):
    """Return ``(target, dataset)``; ``dataset`` is ``None`` except for logistic regression."""
    t = cfg.target
    if t["kind"] == "gaussian":
        model = gaussian_target(t["mean"], t["diag_cov"])
        return (recenter(model) if t["recenter"] else model), None
    if t["kind"] == "mixture":
        model = mixture_target(t["weights"], t["means"], t["shared_cov"])
        return (recenter(model) if t["recenter"] else model), None
    ds = load_covertype(
        t["data_path"],
        seed=t["split_seed"],
        test_fraction=t["test_fraction"],
        expected_rows=t["expected_rows"],
        cache_path=t["cache_path"],
    )
    model = bayes_logreg_target(
        ds,
        LogRegPrior(t["a0"], t["b0"]),
        subsample=t["subsample"],
        seed=t["split_seed"],
        minibatch=t["minibatch"],
    )
    return model, ds


def build_kernel(cfg: ExperimentConfig, sample=None) -> KernelSpec:
    k = cfg.kernel
    h = k["bandwidth"]
    if k["median_heuristic"] and sample is not None:
        h = median_bandwidth(sample)
    return KernelSpec(k["family"], h)


def build_run_config(cfg: ExperimentConfig, target, kernel: KernelSpec, seed: int) -> RunConfig:
    r = cfg.run
    base = RunConfig(
        algorithm=r["algorithm"],
        n=r["n"],
        K=r["K"],
        T=r["T"],
        sampling=r["sampling"],
        output_time=r["output_time"],
        seed=seed,
        track_potential=r["track_potential"],
    )
    s = dict(r["schedule"])
    kind = s.pop("kind")
    kc = kernel_constants(kernel, target.d) if kind == "theory" else None
    sched = make_schedule(kind, s, target, kc, base)
    return RunConfig(**{**base.__dict__, "schedule": sched})


def initial_particles(cfg: ExperimentConfig, target, run_cfg: RunConfig) -> Optional[np.ndarray]:
    """Initial state drawn from the run's init stream.

    ``None`` lets the engine draw the uniform ball itself.  A ball ``center``
    translates those same draws; ``prior`` samples the logistic-regression
    prior.
    """
    rng = rng_streams(run_cfg.seed)[0]
    if cfg.init["kind"] == "prior":
        return target.info["prior_sampler"](run_cfg.state_size, rng)
    if cfg.init.get("center") is None:
        return None
    X = sample_uniform_ball(target.d, target.L, run_cfg.state_size, rng).data
    return X + np.asarray(cfg.init["center"], dtype=np.float64)


def build_metrics(cfg: ExperimentConfig, target, kernel: KernelSpec, seed: int, dataset=None) -> Metrics:
    m = cfg.metrics
    ref = None
    if m["mmd_reference_size"] > 0:
        ref = target.sample(m["mmd_reference_size"], np.random.default_rng([seed, 1]))
    callback = None
    if dataset is not None:
        Xte, yte = dataset.test()
        start = time.perf_counter()

        def callback(step, particles):
            return {"accuracy": predictive_accuracy(particles, Xte, yte), "walltime": time.perf_counter() - start}

    return Metrics(
        cadence=m["cadence"],
        ksd_kernel=None if m["ksd_kernel"] is None else KernelSpec(m["ksd_kernel"]["family"], m["ksd_kernel"]["bandwidth"]),
        ksd_estimator=m["ksd_estimator"],
        mmd_reference=ref,
        mmd_kernel=None if m["mmd_kernel"] is None else KernelSpec(m["mmd_kernel"]["family"], m["mmd_kernel"]["bandwidth"]),
        callback=callback,
    )


# ---------------------------------------------------------------------------
# repetitions
# ---------------------------------------------------------------------------


def run_repetition(cfg: ExperimentConfig, rep: int, target=None, dataset=None):
    """One repetition with seed ``base + rep``.  Returns ``(outputs, record)``."""
    if target is None:
        target, dataset = build_target(cfg)
    seed = cfg.run["seed"] + rep
    kernel = build_kernel(cfg)
    run_cfg = build_run_config(cfg, target, kernel, seed)
    init = initial_particles(cfg, target, run_cfg)
    if cfg.kernel["median_heuristic"]:
        if init is None:
            # the engine's own default draw, made explicit
            init = sample_uniform_ball(target.d, target.L, run_cfg.state_size, rng_streams(seed)[0]).data
        kernel = build_kernel(cfg, sample=init)
        run_cfg = build_run_config(cfg, target, kernel, seed)
    metrics = build_metrics(cfg, target, kernel, seed, dataset)
    outputs, record = run(run_cfg, target, kernel, init=init, metrics=metrics)
    record.extra["kernel"] = kernel.to_dict()
    record.extra["environment"] = environment_stamp(cfg)
    record.extra["repetition"] = rep
    return outputs, record


def _worker(args):
    cfg_dict, rep = args
    cfg = parse_config(cfg_dict, check_files=False)
    outputs, record = run_repetition(cfg, rep)
    return rep, outputs.data, record.to_dict(include_potential=cfg.run["track_potential"])


def environment_stamp(cfg: ExperimentConfig) -> dict:
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "seeds": [cfg.run["seed"] + r for r in range(cfg.repetitions)],
    }


@dataclass
class ResultBundle:
    output_dir: str
    records: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    aggregate_path: Optional[str] = None
    environment: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> ResultBundle:
    """Run every repetition and write run/record/aggregate files and a plot script.

    Repetitions may run in worker processes; all files are written here, by
    the calling process.
    """
    out = os.fspath(output_dir or cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    reps = list(range(cfg.repetitions))
    results = {}
    if threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rep, data, rec in pool.map(_worker, [(cfg.to_dict(), r) for r in reps]):
                results[rep] = (data, RunRecord.from_dict(rec))
    else:
        target, dataset = build_target(cfg)
        for r in reps:
            o, rec = run_repetition(cfg, r, target, dataset)
            results[r] = (o.data, rec)
    bundle = ResultBundle(out, environment=environment_stamp(cfg))
    for r in reps:
        data, rec = results[r]
        rec.write_csv(os.path.join(out, f"run_{r:03d}.csv"))
        with open(os.path.join(out, f"record_{r:03d}.json"), "w") as fh:
            fh.write(rec.to_json(include_potential=cfg.run["track_potential"]))
        bundle.records.append(rec)
        bundle.outputs.append(data)
    bundle.aggregate_path = os.path.join(out, "aggregate.csv")
    write_aggregate(bundle.records, cfg.metrics["cadence"], bundle.aggregate_path)
    write_plot_script(os.path.join(out, "plot.py"), "aggregate.csv", cfg.experiment)
    return bundle


# ---------------------------------------------------------------------------
# aggregation and plotting
# ---------------------------------------------------------------------------


def aggregate_rows(records, cadence: int):
    """Mean and normal-approximation 95% CI across repetitions at every ``cadence`` step.

    ``CI = 1.96 * sd / sqrt(reps)`` with the sample standard deviation
    (zero for a single repetition).
    """
    T = records[0].T
    steps = list(range(0, T + 1, cadence))
    rows = []
    for t in steps:
        row = [t]
        for name in AGG_METRICS:
            vals = np.array([getattr(r, name)[t] for r in records], dtype=np.float64)
            mean = float(np.mean(vals))
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            row += [mean, Z95 * sd / math.sqrt(len(vals))]
        rows.append(row)
    return rows


def write_aggregate(records, cadence: int, path) -> None:
    header = ["step"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "ci95")]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in aggregate_rows(records, cadence):
            fh.write(str(row[0]) + "," + ",".join(format_float(v) for v in row[1:]) + "\n")


PLOT_TEMPLATE = '''"""Plot {title} from {csv_name}; run with: python plot.py"""
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "{csv_name}")) as fh:
    rows = list(csv.DictReader(fh))
steps = [int(r["step"]) for r in rows]
for metric in ("ksd2", "mmd2"):
    mean = [float(r[metric + "_mean"]) for r in rows]
    ci = [float(r[metric + "_ci95"]) for r in rows]
    if all(m != m for m in mean):
        continue
    fig, ax = plt.subplots()
    ax.plot(steps, mean)
    ax.fill_between(steps, [m - c for m, c in zip(mean, ci)], [m + c for m, c in zip(mean, ci)], alpha=0.3)
    ax.set_xlabel("step")
    ax.set_ylabel(metric)
    ax.set_title("{title}")
    fig.savefig(os.path.join(here, metric + ".png"), dpi=120)
'''


def write_plot_script(path, csv_name: str, title: str) -> None:
    with open(path, "w") as fh:
        fh.write(PLOT_TEMPLATE.format(csv_name=csv_name, title=title))


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, output_dir=None, threads: int = 1):
    """Constant-step grid search; writes one sub-directory per gamma and ``sweep.csv``.

    Each gamma is scored by the mean final value of the first available
    metric (``mmd2``, then ``ksd2``).  Returns ``(rows, best_gamma)``.
    """
    from .config import DEFAULT_SWEEP

    out = os.fspath(output_dir or cfg.output_dir)
    os.makedirs(out, exist_ok=True)
    gammas = (cfg.sweep or {}).get("gammas", DEFAULT_SWEEP)
    rows = []
    for i, g in enumerate(gammas):
        d = cfg.to_dict()
        d["run"]["schedule"] = {"kind": "constant", "gamma": g}
        sub = parse_config(d, check_files=False)
        bundle = run_experiment(sub, os.path.join(out, f"gamma_{i:02d}"), threads)
        score = math.nan
        for name in ("mmd2", "ksd2"):
            vals = [getattr(r, name)[-1] for r in bundle.records]
            if all(math.isfinite(v) for v in vals):
                score = float(np.mean(vals))
                break
        rows.append((g, score))
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        fh.write("gamma,final_metric_mean\n")
        for g, s in rows:
            fh.write(f"{format_float(g)},{format_float(s)}\n")
    finite = [(s, g) for g, s in rows if math.isfinite(s)]
    best = min(finite)[1] if finite else None
    return rows, best


# ---------------------------------------------------------------------------
# covertype
# ---------------------------------------------------------------------------


def run_covertype(cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> ResultBundle:
    """Logistic-regression posterior run; writes ``accuracy_XXX.csv`` per repetition."""
    if cfg.target["kind"] != "bayes_logreg":
        from .config import ConfigError

        raise ConfigError("target.kind: covertype runs need a bayes_logreg target")
    bundle = run_experiment(cfg, output_dir, threads)
    for r, rec in enumerate(bundle.records):
        write_accuracy_csv(rec, os.path.join(bundle.output_dir, f"accuracy_{r:03d}.csv"))
    return bundle


def write_accuracy_csv(record: RunRecord, path) -> None:
    steps = record.extra.get("metric_steps", [])
    acc = record.extra.get("accuracy", [])
    wall = record.extra.get("walltime", [])
    with open(path, "w", newline="") as fh:
        fh.write("step,accuracy,walltime\n")
        for s, a, w in zip(steps, acc, wall):
            fh.write(f"{s},{format_float(a)},{format_float(w)}\n")
