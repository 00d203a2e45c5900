"""Mechanical checks of the samplers' provable structure.

* :func:`coupling_check` builds coupled VP-SVGD / GB-SVGD inputs and compares
  trajectories bit for bit.
* :func:`unbiasedness_mc` tests ``E<g_0, f>_H = <h_mu0, f>_H`` by Monte Carlo.
* :func:`per_step_bound_audit` checks the one-step potential growth bound.
* :func:`oracle_count_audit` checks gradient-evaluation counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engines import RunConfig, RunRecord, StepSchedule, expected_counts, gb_batches, gb_svgd_run, rng_streams, vp_svgd_run
from .kernels import KernelConstants, KernelSpec, ProbeRegion, audit_kernel_assumptions, stein_matrix
from .particles import sample_uniform_ball


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------


@dataclass
class CouplingReport:
    n: int
    K: int
    T: int
    matched_count: int
    max_abs_deviation: float
    permutation: list
    reduction: str = "sequential"
    passed: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def coupling_permutation(n: int, batches: list) -> np.ndarray:
    """Relabeling ``Lambda``: the GB batches in order, then unused indices ascending.

    VP row ``l`` starts at GB particle ``Lambda(l)``, so VP's step-``t`` batch
    rows ``tK, ..., (t+1)K - 1`` coincide with GB's step-``t`` batch.
    """
    used = np.concatenate([np.asarray(b, dtype=np.int64) for b in batches]) if batches else np.zeros(0, np.int64)
    if len(np.unique(used)) != len(used):
        raise ValueError("coupling requires disjoint batches")
    rest = np.setdiff1d(np.arange(n), used)
    return np.concatenate([used, rest])


def coupling_check(n: int, K: int, T: int, target, kernel: KernelSpec, gamma: float, seed: int = 0) -> CouplingReport:
    """Run coupled GB-SVGD and VP-SVGD and compare the never-batched particles.

    GB-SVGD runs on ``n`` uniform-ball particles ``xbar`` with
    without-replacement batches.  VP-SVGD starts from ``x0[l] = xbar[Lambda(l)]``
    for ``l < n`` and fresh draws for ``n <= l < KT + n``.  The real VP
    particles ``l`` with ``KT <= l < n`` must equal GB particle ``Lambda(l)``
    at every step.
    """
    if n <= K * T:
        raise ValueError(f"coupling needs n > K*T (got n={n}, K*T={K * T})")
    sched = StepSchedule("constant", gamma=gamma)
    rng_init, rng_batch, _ = rng_streams(seed)
    xbar = sample_uniform_ball(target.d, target.L, n, rng_init).data
    batches = gb_batches(n, K, T, "without_replacement", rng_batch)
    lam = coupling_permutation(n, batches)
    extra = sample_uniform_ball(target.d, target.L, K * T, rng_init).data if K * T else np.zeros((0, target.d))
    x0 = np.vstack([xbar[lam], extra])

    common = dict(n=n, K=K, T=T, schedule=sched, output_time="final", seed=seed, retain_trajectory=True, compute_g_norm=False)
    _, gb_rec = gb_svgd_run(RunConfig("gb", **common), target, kernel, init=xbar, batches=batches)
    _, vp_rec = vp_svgd_run(RunConfig("vp", **common), target, kernel, init=x0)

    # VP real rows are K*T .. K*T+n-1; the matched ones are the first n - K*T
    vp_real = vp_rec.trajectory[:, : n - K * T, :]
    gb_match = gb_rec.trajectory[:, lam[K * T :], :]
    dev = np.abs(vp_real - gb_match)
    per_particle = dev.max(axis=(0, 2)) if dev.size else np.zeros(0)
    matched = int(np.sum(per_particle == 0))
    max_dev = float(dev.max()) if dev.size else 0.0
    return CouplingReport(
        n=n,
        K=K,
        T=T,
        matched_count=matched,
        max_abs_deviation=max_dev,
        permutation=[int(i) for i in lam],
        passed=matched == n - K * T and max_dev == 0.0,
    )


# ---------------------------------------------------------------------------
# unbiasedness
# ---------------------------------------------------------------------------


@dataclass
class UnbiasednessReport:
    K: int
    trials: int
    mean_gap: float
    std_err: float
    z_score: float
    per_probe_z: list
    per_probe_var: list
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _stein_against(kernel, X, target, Z, GZ, block=200_000):
    """``U(x_i, z_p)`` for all samples and probes, shape ``(m, P)``."""
    out = np.empty((X.shape[0], Z.shape[0]))
    for i in range(0, X.shape[0], block):
        Xi = X[i : i + block]
        out[i : i + block] = stein_matrix(kernel, Xi, target.metric_grad(Xi), Z, GZ)
    return out


def unbiasedness_mc(
    target,
    kernel: KernelSpec,
    init_sampler: Callable,
    K: int,
    probe_count: int = 5,
    trials: int = 10_000,
    seed: int = 0,
    plugin_samples: int = 1_000_000,
) -> UnbiasednessReport:
    """Monte Carlo test of ``E<g_0, h(., z_p)>_H = <h_mu0, h(., z_p)>_H``.

    ``init_sampler(m, rng)`` draws from ``mu0``.  The probes ``z_p`` and the
    plug-in reference depend only on ``seed`` (not on ``K``), so reports for
    different batch sizes share them.
    """
    rng_probe, rng_plugin = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    rng_trials = np.random.default_rng(np.random.SeedSequence([seed, K]))
    Z = np.asarray(init_sampler(probe_count, rng_probe), dtype=np.float64)
    GZ = target.metric_grad(Z)

    ref = _stein_against(kernel, np.asarray(init_sampler(plugin_samples, rng_plugin)), target, Z, GZ)
    X = np.asarray(init_sampler(trials * K, rng_trials), dtype=np.float64)
    U = _stein_against(kernel, X, target, Z, GZ).reshape(trials, K, -1)
    a = U.mean(axis=1)  # <g_0, f_p> per trial

    zs, gaps, ses, var_a = [], [], [], []
    for p in range(Z.shape[0]):
        c = ref[0, p]
        gap = float(np.mean(a[:, p] - c)) - float(np.mean(ref[:, p] - c))
        va = float(np.var(a[:, p], ddof=1))
        vr = float(np.var(ref[:, p], ddof=1))
        se = math.sqrt(va / trials + vr / ref.shape[0])
        z = gap / se if se > 0 else 0.0
        zs.append(z)
        gaps.append(gap)
        ses.append(se)
        var_a.append(va)
    worst = int(np.argmax(np.abs(zs)))
    return UnbiasednessReport(
        K=K,
        trials=trials,
        mean_gap=gaps[worst],
        std_err=ses[worst],
        z_score=zs[worst],
        per_probe_z=zs,
        per_probe_var=var_a,
        passed=bool(np.all(np.abs(zs) <= 4.0)),
    )


@dataclass
class SecondMomentReport:
    Ks: list
    excess: list
    scaled: list
    passed: bool


def second_moment_scaling(target, kernel: KernelSpec, init_sampler: Callable, Ks=(1, 4, 16), trials: int = 10_000, seed: int = 0):
    """Check that ``E||g_0||^2 - ||h_mu0||^2`` scales like ``1/K``.

    ``E||g_0||^2 = E U(x, x) / K + (1 - 1/K) ||h_mu0||^2``, so
    ``K * excess`` should be constant in ``K``; the check allows a factor 2.
    ``||h_mu0||^2`` is estimated from disjoint sample pairs.
    """
    rng = np.random.default_rng(seed)
    pairs = np.asarray(init_sampler(2 * trials * 10, rng))
    A, B = pairs[0::2], pairs[1::2]
    GA, GB = target.metric_grad(A), target.metric_grad(B)
    h2 = float(np.mean(_pairwise_diag(kernel, A, GA, B, GB)))
    excess, scaled = [], []
    for K in Ks:
        r = np.random.default_rng(np.random.SeedSequence([seed, K, 1]))
        X = np.asarray(init_sampler(trials * K, r)).reshape(trials, K, -1)
        sq = np.empty(trials)
        for i in range(trials):
            G = target.metric_grad(X[i])
            sq[i] = stein_matrix(kernel, X[i], G, X[i], G).sum() / (K * K)
        e = float(sq.mean()) - h2
        excess.append(e)
        scaled.append(e * K)
    ratio = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
    return SecondMomentReport(list(Ks), excess, scaled, bool(ratio <= 2.0))


def _pairwise_diag(kernel, A, GA, B, GB, block=100_000):
    """``U(a_i, b_i)`` row by row."""
    out = np.empty(A.shape[0])
    for i in range(0, A.shape[0], block):
        sl = slice(i, i + block)
        out[sl] = _rowwise_stein(kernel, A[sl], GA[sl], B[sl], GB[sl])
    return out


def _rowwise_stein(kernel, X, GX, Y, GY):
    from .kernels import _profile, _trace_profile

    r = X - Y
    sq = (r * r).sum(axis=1)
    k, psi = _profile(kernel, sq)
    return k * (GX * GY).sum(axis=1) - psi * ((GX - GY) * r).sum(axis=1) + _trace_profile(kernel, sq, X.shape[1])


# ---------------------------------------------------------------------------
# per-step bound
# ---------------------------------------------------------------------------


@dataclass
class BoundAuditReport:
    passed: bool
    violations: int
    checked: int
    first_violation: Optional[dict] = None
    within_hypothesis: bool = True
    step_cap: float = math.nan


def per_step_bound(gamma: float, L: float, kc: KernelConstants) -> float:
    """``gamma A3 + gamma L^2 A1 + gamma^2 L (A1 L / 2 + A2)^2``."""
    return gamma * kc.A3 + gamma * L * L * kc.A1 + gamma * gamma * L * (kc.A1 * L / 2.0 + kc.A2) ** 2


def per_step_bound_audit(record: RunRecord, target_constants, kernel_constants: KernelConstants, tol: float = 1e-9) -> BoundAuditReport:
    """Check ``F(x_{t+1}) - F(x_t) <= bound(gamma_t) + tol`` for every tracked particle.

    ``target_constants`` is a :class:`TargetModel` or a dict with ``L``.  The
    report states whether every step satisfied ``gamma <= 1/(2 A1 L)``; the
    inequality is only guaranteed when it did.
    """
    if record.potential_trace is None:
        raise ValueError("record has no potential trace; run with track_potential=True")
    L = target_constants["L"] if isinstance(target_constants, dict) else target_constants.L
    Ftr = np.asarray(record.potential_trace)
    T = len(record.gamma)
    if Ftr.shape[0] != T + 1:
        raise ValueError("potential trace length does not match the step count")
    cap = 1.0 / (2.0 * kernel_constants.A1 * L) if L > 0 else math.inf
    gam = np.asarray(record.gamma, dtype=np.float64)
    inside = bool(np.all(gam <= cap))
    if T == 0:
        return BoundAuditReport(True, 0, 0, None, inside, cap)
    rhs = np.array([per_step_bound(g, L, kernel_constants) for g in gam])
    inc = Ftr[1:] - Ftr[:-1]
    bad = inc > rhs[:, None] + tol
    first = None
    if bad.any():
        t, i = np.argwhere(bad)[0]
        first = {"step": int(t), "particle": int(i), "increase": float(inc[t, i]), "bound": float(rhs[t])}
    return BoundAuditReport(not bad.any(), int(bad.sum()), int(bad.size), first, inside, cap)


# ---------------------------------------------------------------------------
# ||g_t|| surrogate bound
# ---------------------------------------------------------------------------


def g_norm_bound_audit(record: RunRecord, target, kernel_constants: KernelConstants, tol: float = 1e-9):
    """Check ``||g_t||_H <= (1/K) sum_b (B L |x_b| + B |grad F(0)| + B)`` per step.

    Returns ``(passed, worst_slack)`` where slack is ``||g_t|| - bound``.
    """
    B = kernel_constants.B
    g0 = float(np.linalg.norm(target.grad_at_origin()))
    norms = np.asarray(record.extra.get("batch_mean_norm", []), dtype=np.float64)
    g = np.asarray(record.g_norm, dtype=np.float64)
    if norms.shape != g.shape:
        raise ValueError("record lacks per-step batch norms")
    if g.size == 0:
        return True, -math.inf
    bound = B * target.L * norms + B * g0 + B
    slack = g - bound
    ok = np.isnan(g) | (slack <= tol)
    return bool(ok.all()), float(np.nanmax(slack))


# ---------------------------------------------------------------------------
# counts
# ---------------------------------------------------------------------------


@dataclass
class CountReport:
    passed: bool
    expected_distinct: int
    observed_distinct: int
    expected_paper: int
    observed_paper: int


def oracle_count_audit(record: RunRecord, config: RunConfig) -> CountReport:
    dist, paper = expected_counts(config.algorithm, config.n, config.K, config.T)
    ok = record.distinct_grad_evals == dist and record.paper_convention_grad_evals == paper
    return CountReport(ok, dist, record.distinct_grad_evals, paper, record.paper_convention_grad_evals)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def time_averaged(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else math.nan


def ksd_quantiles(records, qs=(0.1, 0.5, 0.9)) -> dict:
    """Empirical quantiles across runs of the time-averaged KSD^2 (descriptive only).

    The average covers the states ``t < T`` that carry a metric value.
    """
    avgs = [time_averaged(r.ksd2[:-1] if len(r.ksd2) > 1 else r.ksd2) for r in records]
    return {f"q{int(100 * q)}": float(np.quantile(avgs, q)) for q in qs}


def kernel_audit_suite(d: int = 2, radius: float = 5.0, pairs: int = 10_000, seed: int = 0) -> list:
    """Assumption audits for every kernel family at bandwidth 1."""
    out = []
    for fam in ("rbf", "imq", "matern32", "laplace"):
        spec = KernelSpec(fam, 1.0)
        consts, report = audit_kernel_assumptions(spec, d, ProbeRegion(radius=radius, pairs=pairs), seed)
        out.append((spec, consts, report))
    return out
