"""SVGD, virtual-particle SVGD and global-batch SVGD update loops.

All three samplers share one update kernel, :func:`batch_drift`, which for
every particle ``x_i`` accumulates

    sum_l [ k(x_i, z_l) grad F(z_l) - grad_2 k(x_i, z_l) ]

over the batch ``z`` in ascending batch order.  Each term depends only on
``(x_i, z_l, grad F(z_l))``, so a particle's update is bit-identical no matter
which other particles share the state matrix.  The coupling checks rely on
this.

Random streams: ``SeedSequence(seed).spawn(3)`` gives independent generators
for the initial particles, the batch schedule and the output time ``S``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .discrepancy import ksd2_to_target, mmd2, mmd_self_term
from .kernels import KernelSpec, _profile, stein_sum
from .particles import REAL, VIRTUAL, ParticleEnsemble, sample_uniform_ball

ALGORITHMS = ("svgd", "vp", "gb")
SAMPLING = ("without_replacement", "with_replacement")
OUTPUT_TIMES = ("random_S", "final")
SCHEDULES = ("constant", "theory", "adagrad_momentum")
CSV_HEADER = "step,gamma,g_norm,max_particle_norm,ksd2,mmd2"


class ConfigurationError(ValueError):
    """Invalid or infeasible run configuration."""


class DivergenceError(RuntimeError):
    """A particle coordinate became non-finite."""

    def __init__(self, step: int, particle: int, message: str = ""):
        self.step = step
        self.particle = particle
        super().__init__(message or f"non-finite particle {particle} after step {step}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rule.

    ``constant`` and ``theory`` produce a fixed ``gamma``; for ``theory`` the
    value is already clamped and ``binding`` names the active term.
    ``adagrad_momentum`` keeps a per-coordinate accumulator
    ``v <- momentum v + (1 - momentum) phi^2`` (``v = phi^2`` on the first
    step) and moves by ``base * phi / (epsilon + sqrt(v))``.
    """

    kind: str = "constant"
    gamma: Optional[float] = None
    c: Optional[float] = None
    momentum: float = 0.9
    epsilon: float = 1e-6
    base: float = 0.05
    binding: Optional[str] = None
    caps: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigurationError(f"schedule kind must be one of {SCHEDULES}, got {self.kind!r}")
        if self.kind in ("constant", "theory"):
            if self.gamma is None or not (math.isfinite(self.gamma) and self.gamma > 0):
                raise ConfigurationError(f"{self.kind} schedule needs a positive finite gamma, got {self.gamma}")
        else:
            if not (0 <= self.momentum < 1):
                raise ConfigurationError("momentum must lie in [0, 1)")
            if not (self.epsilon > 0 and self.base > 0):
                raise ConfigurationError("adagrad epsilon and base rate must be positive")

    @property
    def adaptive(self) -> bool:
        return self.kind == "adagrad_momentum"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    n: int
    K: int = 1
    T: int = 0
    schedule: StepSchedule = field(default_factory=lambda: StepSchedule("constant", gamma=0.1))
    sampling: str = "without_replacement"
    output_time: str = "random_S"
    seed: int = 0
    track_potential: bool = False
    retain_trajectory: Optional[bool] = None
    compute_g_norm: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.sampling not in SAMPLING:
            raise ConfigurationError(f"sampling must be one of {SAMPLING}, got {self.sampling!r}")
        if self.output_time not in OUTPUT_TIMES:
            raise ConfigurationError(f"output_time must be one of {OUTPUT_TIMES}, got {self.output_time!r}")
        for name, lo in (("n", 1), ("K", 1), ("T", 0)):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < lo:
                raise ConfigurationError(f"{name} must be an integer >= {lo}, got {v!r}")
        if self.algorithm == "gb" and self.K > self.n:
            raise ConfigurationError(f"gb requires K <= n (got K={self.K}, n={self.n})")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def batch_size(self) -> int:
        return self.n if self.algorithm == "svgd" else self.K

    @property
    def keeps_trajectory(self) -> bool:
        """Trajectory retention; defaults to on for vp and off otherwise."""
        if self.retain_trajectory is None:
            return self.algorithm == "vp"
        return bool(self.retain_trajectory)

    @property
    def state_size(self) -> int:
        return self.K * self.T + self.n if self.algorithm == "vp" else self.n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        return d


def theory_eta(alpha: float) -> float:
    return alpha / (2.0 * (1.0 + alpha))


def make_schedule(kind: str, params: Optional[dict] = None, target=None, kernel_constants=None, config=None) -> StepSchedule:
    """Build a :class:`StepSchedule`.

    ``theory``: ``gamma = min(c (K d)^eta / T^(1-eta), 1/(2 A1 L), 1/((4 + L) B))``
    with ``eta = alpha / (2 (1 + alpha))``.
    """
    params = dict(params or {})
    if kind == "constant":
        if "gamma" not in params:
            raise ConfigurationError("constant schedule requires 'gamma'")
        return StepSchedule("constant", gamma=float(params["gamma"]))
    if kind == "adagrad_momentum":
        return StepSchedule(
            "adagrad_momentum",
            momentum=float(params.get("momentum", 0.9)),
            epsilon=float(params.get("epsilon", 1e-6)),
            base=float(params.get("base", 0.05)),
        )
    if kind != "theory":
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    missing = [
        name
        for name, obj in (("target", target), ("kernel_constants", kernel_constants), ("config", config))
        if obj is None
    ]
    if "c" not in params:
        missing.append("c")
    if missing:
        raise ConfigurationError(f"theory schedule is missing {', '.join(missing)}")
    c = float(params["c"])
    if not c > 0:
        raise ConfigurationError("theory multiplier c must be positive")
    eta = theory_eta(target.alpha)
    K = config.batch_size
    T = config.T
    L = target.L
    kc = kernel_constants
    terms = {
        "rate": c * (K * target.d) ** eta / T ** (1.0 - eta) if T > 0 else math.inf,
        "1/(2 A1 L)": 1.0 / (2.0 * kc.A1 * L) if L > 0 else math.inf,
        "1/((4+L) B)": 1.0 / ((4.0 + L) * kc.B),
    }
    binding = min(terms, key=lambda k: terms[k])
    caps = {k: (v if math.isfinite(v) else None) for k, v in terms.items()}
    caps.update({"eta": eta, "B": kc.B, "L_source": target.L_source, "constants_source": kc.source})
    return StepSchedule("theory", gamma=float(terms[binding]), c=c, binding=binding, caps=caps)


# ---------------------------------------------------------------------------
# run record
# ---------------------------------------------------------------------------


def _nan_to_none(xs):
    return [None if (isinstance(x, float) and not math.isfinite(x)) else x for x in xs]


def _none_to_nan(xs):
    return [math.nan if x is None else x for x in xs]


@dataclass
class RunRecord:
    """Per-step trace and totals of one run.

    ``gamma``, ``batches`` and ``g_norm`` have one entry per step ``t < T``;
    ``max_particle_norm``, ``ksd2`` and ``mmd2`` have one entry per state
    ``t <= T`` (metrics are NaN off the cadence).
    """

    algorithm: str
    config: dict
    seed: int
    S: int = 0
    gamma: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    g_norm: list = field(default_factory=list)
    max_particle_norm: list = field(default_factory=list)
    ksd2: list = field(default_factory=list)
    mmd2: list = field(default_factory=list)
    distinct_grad_evals: int = 0
    paper_convention_grad_evals: int = 0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)
    potential_trace: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return len(self.gamma)

    def csv_lines(self) -> list:
        lines = [CSV_HEADER]
        T = self.T
        for t in range(T + 1):
            g = self.gamma[t] if t < T else math.nan
            gn = self.g_norm[t] if t < T else math.nan
            vals = (g, gn, self.max_particle_norm[t], self.ksd2[t], self.mmd2[t])
            lines.append(f"{t}," + ",".join(format_float(v) for v in vals))
        return lines

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    def to_dict(self, include_potential: bool = False) -> dict:
        d = {
            "schema_version": 1,
            "algorithm": self.algorithm,
            "config": self.config,
            "seed": self.seed,
            "S": self.S,
            "gamma": _nan_to_none(self.gamma),
            "batches": self.batches,
            "g_norm": _nan_to_none(self.g_norm),
            "max_particle_norm": _nan_to_none(self.max_particle_norm),
            "ksd2": _nan_to_none(self.ksd2),
            "mmd2": _nan_to_none(self.mmd2),
            "distinct_grad_evals": self.distinct_grad_evals,
            "paper_convention_grad_evals": self.paper_convention_grad_evals,
            "wall_time": self.wall_time,
            "extra": self.extra,
        }
        if include_potential and self.potential_trace is not None:
            d["potential_trace"] = self.potential_trace.tolist()
        return d

    def to_json(self, include_potential: bool = False) -> str:
        return json.dumps(self.to_dict(include_potential), indent=1, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        pt = d.get("potential_trace")
        return cls(
            algorithm=d["algorithm"],
            config=d["config"],
            seed=d["seed"],
            S=d["S"],
            gamma=_none_to_nan(d["gamma"]),
            batches=d["batches"],
            g_norm=_none_to_nan(d["g_norm"]),
            max_particle_norm=_none_to_nan(d["max_particle_norm"]),
            ksd2=_none_to_nan(d["ksd2"]),
            mmd2=_none_to_nan(d["mmd2"]),
            distinct_grad_evals=d["distinct_grad_evals"],
            paper_convention_grad_evals=d["paper_convention_grad_evals"],
            wall_time=d["wall_time"],
            extra=d.get("extra", {}),
            potential_trace=None if pt is None else np.asarray(pt, dtype=np.float64),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


def format_float(v) -> str:
    """Round-trip float formatting used for every CSV this package writes."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    """What to measure on the output particles, and how often.

    ``cadence`` ``j`` evaluates at every ``t`` divisible by ``j`` and at
    ``t = T``; ``cadence=0`` disables metrics.  ``callback(step, X)`` may
    return a dict of extra scalars that are appended to ``record.extra``.
    """

    cadence: int = 0
    ksd_kernel: Optional[KernelSpec] = None
    ksd_estimator: str = "vstat"
    mmd_reference: Optional[np.ndarray] = None
    mmd_kernel: Optional[KernelSpec] = None
    mmd_estimator: str = "vstat"
    callback: Optional[Callable] = None
    _ref_self: Optional[float] = field(default=None, init=False, repr=False)

    def due(self, t: int, T: int) -> bool:
        return self.cadence > 0 and (t % self.cadence == 0 or t == T)

    def evaluate(self, X, target, kernel):
        ksd = mm = math.nan
        if self.ksd_kernel is not None:
            ksd = ksd2_to_target(X, target, self.ksd_kernel, self.ksd_estimator).value
        if self.mmd_reference is not None:
            mk = self.mmd_kernel or kernel
            if self._ref_self is None:
                self._ref_self = mmd_self_term(self.mmd_reference, mk, self.mmd_estimator)
            mm = mmd2(X, self.mmd_reference, mk, self.mmd_estimator, self_b=self._ref_self).value
        return ksd, mm


# ---------------------------------------------------------------------------
# core update
# ---------------------------------------------------------------------------


def batch_drift(kernel: KernelSpec, X: np.ndarray, Z: np.ndarray, GZ: np.ndarray) -> np.ndarray:
    """``sum_l [k(x_i, z_l) GZ_l - grad_2 k(x_i, z_l)]`` for every row ``x_i``.

    The batch is summed sequentially in the given order.  For the Laplace
    kernel the diagonal gradient is the zero subgradient.
    """
    acc = np.zeros_like(X)
    for l in range(Z.shape[0]):
        diff = X - Z[l]
        sq = (diff * diff).sum(axis=1)
        k, psi = _profile(kernel, sq)
        acc = acc + (k[:, None] * GZ[l] - psi[:, None] * diff)
    return acc


class _Stepper:
    """Applies ``x <- x - step * drift / K`` under a schedule."""

    def __init__(self, schedule: StepSchedule, shape):
        self.schedule = schedule
        self.hist = None
        self.shape = shape

    def apply(self, X, drift, K):
        s = self.schedule
        if not s.adaptive:
            return X - (s.gamma / K) * drift, s.gamma
        phi = drift / K
        if self.hist is None:
            self.hist = phi * phi
        else:
            self.hist = s.momentum * self.hist + (1.0 - s.momentum) * (phi * phi)
        scale = s.base / (s.epsilon + np.sqrt(self.hist))
        return X - scale * phi, float(scale.mean())


def _check_finite(X, step):
    if not np.all(np.isfinite(X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
        raise DivergenceError(step, bad, f"particle {bad} became non-finite at step {step}")


@np.errstate(over="ignore", invalid="ignore")  # non-finite states are caught explicitly
def svgd_step(ensemble, target, kernel: KernelSpec, gamma: float) -> ParticleEnsemble:
    """One full-interaction SVGD step; each gradient is evaluated once."""
    ens = ensemble if isinstance(ensemble, ParticleEnsemble) else ParticleEnsemble(ensemble)
    if gamma < 0 or not math.isfinite(gamma):
        raise ValueError("gamma must be a finite nonnegative number")
    if ens.m == 0:
        raise ValueError("ensemble is empty")
    if gamma == 0:
        out = ens.copy()
        out.step_index += 1
        return out
    X = ens.data
    G = target.grad(X)
    new = X - (gamma / X.shape[0]) * batch_drift(kernel, X, X, G)
    _check_finite(new, ens.step_index)
    return ParticleEnsemble(new, ens.roles, ens.step_index + 1)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def rng_streams(seed: int):
    init, batch, s = np.random.SeedSequence(int(seed)).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(batch), np.random.default_rng(s)


def gb_batches(n: int, K: int, T: int, sampling: str, rng) -> list:
    """Batch index sets for GB-SVGD, each sorted ascending.

    Without replacement the batches are consecutive blocks of one random
    permutation; once fewer than ``K`` unused indices remain a fresh
    permutation starts.  With replacement each batch is ``K`` i.i.d. indices.
    """
    out = []
    if sampling == "with_replacement":
        for _ in range(T):
            out.append(np.sort(rng.integers(0, n, size=K)))
        return out
    perm = rng.permutation(n)
    pos = 0
    for _ in range(T):
        if pos + K > n:
            perm = rng.permutation(n)
            pos = 0
        out.append(np.sort(perm[pos : pos + K]))
        pos += K
    return out


def _draw_S(config: RunConfig, rng) -> int:
    if config.output_time == "final" or config.T == 0:
        return config.T
    return int(rng.integers(0, config.T))


def _prepare_init(init, m, target, rng):
    if init is None:
        X = sample_uniform_ball(target.d, target.L, m, rng).data
    else:
        X = np.array(getattr(init, "data", init), dtype=np.float64, copy=True)
    if X.shape != (m, target.d):
        raise ConfigurationError(f"initial particles must have shape {(m, target.d)}, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("initial particles must be finite")
    return X


@np.errstate(over="ignore", invalid="ignore")
def _run_loop(config, target, kernel, X, real, batch_for_step, metrics, S, rows_updated):
    """Shared loop.  ``real`` selects the output rows of the state matrix."""
    metrics = metrics or Metrics()
    T = config.T
    sched = config.schedule
    stepper = _Stepper(sched, X.shape)
    rec = RunRecord(config.algorithm, config.to_dict(), int(config.seed), S=S)
    rec.extra["batch_mean_norm"] = []
    calls0 = target.oracle_calls.value
    track = config.track_potential
    pot = np.empty((T + 1, X.shape[0])) if track else None
    keep = config.keeps_trajectory
    traj = np.empty((T + 1,) + X[real].shape) if keep else None
    snapshot = None
    theory_B = sched.caps.get("B") if sched.kind == "theory" and sched.caps else None
    t0 = time.perf_counter()

    def observe(t):
        nonlocal snapshot
        R = X[real]
        rec.max_particle_norm.append(float(np.max(np.linalg.norm(X, axis=1))))
        if metrics.due(t, T):
            ksd, mm = metrics.evaluate(R, target, kernel)
            if metrics.callback is not None:
                for key, val in metrics.callback(t, R).items():
                    rec.extra.setdefault(key, []).append(val)
                rec.extra.setdefault("metric_steps", []).append(t)
        else:
            ksd = mm = math.nan
        rec.ksd2.append(ksd)
        rec.mmd2.append(mm)
        if track:
            pot[t] = target.potential(X)
        if keep:
            traj[t] = R
        if t == S:
            snapshot = R.copy()

    observe(0)
    for t in range(T):
        idx = batch_for_step(t)
        Z = X[idx]
        GZ = target.grad(Z)
        K = Z.shape[0]
        if config.compute_g_norm and kernel.smooth:
            gn = math.sqrt(max(stein_sum(kernel, Z, GZ, Z, GZ) / (K * K), 0.0))
        else:
            gn = math.nan
        X, gamma_t = stepper.apply(X, batch_drift(kernel, X, Z, GZ), K)
        _check_finite(X, t)
        if theory_B is not None and math.isfinite(gn) and gamma_t * gn > 1.0 / (2.0 * theory_B):
            raise ConfigurationError(
                f"step {t}: gamma * ||g_t||_H = {gamma_t * gn:.6g} exceeds 1/(2B) = {1.0 / (2.0 * theory_B):.6g}; "
                "reduce the theory multiplier c"
            )
        rec.gamma.append(float(gamma_t))
        rec.batches.append([int(i) for i in idx])
        rec.g_norm.append(gn)
        rec.extra.setdefault("batch_mean_norm", []).append(float(np.mean(np.linalg.norm(Z, axis=1))))
        rec.paper_convention_grad_evals += rows_updated * K
        observe(t + 1)
    rec.wall_time = time.perf_counter() - t0
    rec.distinct_grad_evals = target.oracle_calls.value - calls0
    rec.potential_trace = pot
    rec.trajectory = traj
    return X, snapshot, rec


def svgd_run(config: RunConfig, target, kernel: KernelSpec, init=None, metrics: Optional[Metrics] = None):
    """Plain SVGD on ``n`` particles for ``T`` steps."""
    if config.algorithm != "svgd":
        raise ConfigurationError("svgd_run requires algorithm='svgd'")
    rng_init, _, rng_s = rng_streams(config.seed)
    X = _prepare_init(init, config.n, target, rng_init)
    S = _draw_S(config, rng_s)
    allrows = np.arange(config.n)
    _, snap, rec = _run_loop(config, target, kernel, X, slice(None), lambda t: allrows, metrics, S, config.n)
    return ParticleEnsemble(snap, step_index=S), rec


def vp_svgd_run(config: RunConfig, target, kernel: KernelSpec, init=None, metrics: Optional[Metrics] = None):
    """Virtual-particle SVGD.

    The state holds ``K T + n`` particles; step ``t`` uses rows
    ``tK, ..., (t+1)K - 1`` as the batch and updates every row.  Rows
    ``K T, ..., K T + n - 1`` are the real particles, returned at the output
    time ``S``.
    """
    if config.algorithm != "vp":
        raise ConfigurationError("vp_svgd_run requires algorithm='vp'")
    K, T, n = config.K, config.T, config.n
    m = K * T + n
    rng_init, _, rng_s = rng_streams(config.seed)
    X = _prepare_init(init, m, target, rng_init)
    S = _draw_S(config, rng_s)
    real = slice(K * T, m)
    _, snap, rec = _run_loop(
        config, target, kernel, X, real, lambda t: np.arange(t * K, (t + 1) * K), metrics, S, m
    )
    rec.extra["roles"] = {"virtual": K * T, "real": n}
    out = rec.trajectory[S] if rec.trajectory is not None else snap
    return ParticleEnsemble(out, step_index=S), rec


def vp_roles(config: RunConfig) -> tuple:
    return (VIRTUAL,) * (config.K * config.T) + (REAL,) * config.n


def gb_svgd_run(
    config: RunConfig,
    target,
    kernel: KernelSpec,
    init=None,
    batches: Optional[list] = None,
    metrics: Optional[Metrics] = None,
):
    """Global-batch SVGD: one batch of ``K`` of the ``n`` particles drives all of them.

    ``batches`` overrides the random schedule (used by the coupling check).
    """
    if config.algorithm != "gb":
        raise ConfigurationError("gb_svgd_run requires algorithm='gb'")
    n, K, T = config.n, config.K, config.T
    rng_init, rng_batch, rng_s = rng_streams(config.seed)
    X = _prepare_init(init, n, target, rng_init)
    if batches is None:
        batches = gb_batches(n, K, T, config.sampling, rng_batch)
    else:
        batches = [np.asarray(b, dtype=np.int64) for b in batches]
        if len(batches) < T or any(len(b) != K for b in batches[:T]):
            raise ConfigurationError(f"need {T} batches of size {K}")
    S = _draw_S(config, rng_s)
    _, snap, rec = _run_loop(config, target, kernel, X, slice(None), lambda t: batches[t], metrics, S, n)
    return ParticleEnsemble(snap, step_index=S), rec


def run(config: RunConfig, target, kernel: KernelSpec, init=None, metrics: Optional[Metrics] = None):
    """Dispatch on ``config.algorithm``."""
    if config.algorithm == "vp":
        return vp_svgd_run(config, target, kernel, init, metrics)
    if config.algorithm == "gb":
        return gb_svgd_run(config, target, kernel, init, metrics=metrics)
    return svgd_run(config, target, kernel, init, metrics)


def expected_counts(algorithm: str, n: int, K: int, T: int) -> tuple:
    """``(distinct, paper_convention)`` gradient-evaluation counts."""
    if algorithm == "vp":
        return K * T, K * K * T * T + K * T * n
    if algorithm == "gb":
        return K * T, K * T * n
    return n * T, n * n * T
