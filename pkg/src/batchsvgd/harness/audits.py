"""Verification suites behind the ``audit`` subcommand.

Each suite returns rows ``(check_name, passed, detail)``.
"""

from __future__ import annotations

import numpy as np

from ..engines import RunConfig, StepSchedule, run
from ..kernels import KernelSpec, analytic_constants
from ..particles import sample_uniform_ball
from ..targets import gaussian_target
from ..verification import (
    coupling_check,
    g_norm_bound_audit,
    kernel_audit_suite,
    oracle_count_audit,
    per_step_bound_audit,
    unbiasedness_mc,
)

COUPLING_MATRIX = ((4, 1, 2), (10, 2, 3), (100, 10, 5))
COUPLING_DIMS = (2, 5)
COUPLING_SEEDS = 5
UNBIASED_KS = (1, 4, 16)
COUNT_SWEEP = (
    (1, 1, 0),
    (1, 1, 3),
    (4, 1, 2),
    (5, 5, 1),
    (8, 2, 3),
    (10, 2, 3),
    (12, 3, 4),
    (16, 4, 2),
    (20, 5, 6),
    (30, 7, 3),
    (50, 10, 2),
    (100, 10, 5),
)


def suite_kernels(seed: int = 0):
    rows = []
    for spec, consts, report in kernel_audit_suite(seed=seed):
        detail = f"B={consts.B:.4g} A1={consts.A1:.4g} A2={consts.A2:.4g} A3={consts.A3:.4g}"
        if report.diagonal_non_differentiable:
            detail += " (diagonal non-differentiable)"
        bad = report.violations()
        if bad:
            detail += " violated: " + ", ".join(c.name for c in bad)
        rows.append((f"kernel {spec.family}", report.passed, detail))
    return rows


def suite_coupling(seed: int = 0, gamma: float = 0.1):
    rows = []
    kernel = KernelSpec("rbf", 1.0)
    for d in COUPLING_DIMS:
        target = gaussian_target(np.zeros(d), np.ones(d))
        for n, K, T in COUPLING_MATRIX:
            reports = [coupling_check(n, K, T, target, kernel, gamma, seed + s) for s in range(COUPLING_SEEDS)]
            ok = all(r.passed for r in reports)
            dev = max(r.max_abs_deviation for r in reports)
            matched = sorted({r.matched_count for r in reports})
            rows.append((f"coupling d={d} n={n} K={K} T={T}", ok, f"matched={matched} max_dev={dev:g}"))
    return rows


def uniform_ball_sampler(d: int, L: float = 1.0):
    def sampler(m, rng):
        return sample_uniform_ball(d, L, m, rng).data

    return sampler


def unbiasedness_reports(kernel: KernelSpec, d: int = 2, trials: int = 10_000, probes: int = 5, seed: int = 0):
    target = gaussian_target(np.zeros(d), np.ones(d))
    sampler = uniform_ball_sampler(d)
    return [unbiasedness_mc(target, kernel, sampler, K, probes, trials, seed) for K in UNBIASED_KS]


def variance_ratio(reports) -> float:
    """Worst ratio over probes of ``Var<g_0, f>`` at the largest K to the smallest K."""
    lo = np.asarray(reports[0].per_probe_var)
    hi = np.asarray(reports[-1].per_probe_var)
    return float(np.max(hi / lo))


def suite_unbiasedness(seed: int = 0, trials: int = 10_000):
    rows = []
    for fam in ("rbf", "imq", "matern32"):
        reports = unbiasedness_reports(KernelSpec(fam, 1.0), trials=trials, seed=seed)
        for r in reports:
            rows.append((f"unbiased {fam} K={r.K}", r.passed, f"max|z|={abs(r.z_score):.3f}"))
        ratio = variance_ratio(reports)
        rows.append((f"variance {fam} K=16 vs K=1", ratio <= 0.35, f"ratio={ratio:.4f}"))
    return rows


def count_runs(seed: int = 0):
    """Yield ``(config, record)`` for every algorithm over the count sweep."""
    target = gaussian_target(np.zeros(2), np.ones(2))
    kernel = KernelSpec("rbf", 1.0)
    sched = StepSchedule("constant", gamma=0.05)
    for n, K, T in COUNT_SWEEP:
        for alg in ("svgd", "vp", "gb"):
            cfg = RunConfig(alg, n=n, K=K, T=T, schedule=sched, seed=seed, compute_g_norm=False, retain_trajectory=False)
            _, rec = run(cfg, target, kernel)
            yield cfg, rec


def suite_counts(seed: int = 0):
    rows = []
    for cfg, rec in count_runs(seed):
        rep = oracle_count_audit(rec, cfg)
        rows.append(
            (
                f"counts {cfg.algorithm} n={cfg.n} K={cfg.K} T={cfg.T}",
                rep.passed,
                f"distinct={rep.observed_distinct}/{rep.expected_distinct} per_use={rep.observed_paper}/{rep.expected_paper}",
            )
        )
    return rows


def bound_run(fraction: float = 0.5, T: int = 200, d: int = 2, n: int = 20, K: int = 2, algorithm: str = "vp", seed: int = 0):
    """Run with ``gamma = fraction / (2 A1 L)`` while tracking the potential."""
    target = gaussian_target(np.zeros(d), np.ones(d))
    kernel = KernelSpec("rbf", 1.0)
    kc = analytic_constants(kernel, d)
    gamma = fraction / (2.0 * kc.A1 * target.L)
    cfg = RunConfig(algorithm, n=n, K=K, T=T, schedule=StepSchedule("constant", gamma=gamma), seed=seed, track_potential=True, retain_trajectory=False)
    _, rec = run(cfg, target, kernel)
    return target, kc, rec


def suite_bounds(seed: int = 0):
    rows = []
    for frac in (0.5, 1.0):
        for alg in ("vp", "gb"):
            target, kc, rec = bound_run(frac, algorithm=alg, seed=seed)
            rep = per_step_bound_audit(rec, target, kc)
            rows.append((f"per-step bound {alg} gamma={frac}*cap", rep.passed, f"violations={rep.violations}/{rep.checked}"))
            ok, slack = g_norm_bound_audit(rec, target, kc)
            rows.append((f"g-norm bound {alg} gamma={frac}*cap", ok, f"worst slack={slack:.4g}"))
    return rows


SUITES = {
    "kernels": suite_kernels,
    "coupling": suite_coupling,
    "unbiasedness": suite_unbiasedness,
    "counts": suite_counts,
    "bounds": suite_bounds,
}


def run_suite(name: str, seed: int = 0):
    if name == "all":
        rows = []
        for fn in SUITES.values():
            rows.extend(fn(seed=seed))
        return rows
    return SUITES[name](seed=seed)
