"""Target potentials ``F`` with gradients, regularity metadata and oracle counting.

A target density is ``pi(x) ∝ exp(-F(x))``.  Gradients are hand-coded and
audited against central finite differences whenever a model is built.  All
gradient entry points accept either a single vector or an ``(m, d)`` batch;
each row counts as one oracle call.
"""

from __future__ import annotations

import csv
import gzip
import math
import os
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .particles import ParticleEnsemble, sample_uniform_ball  # noqa: F401  (re-export)


class GradientAuditError(ValueError):
    """A hand-coded gradient disagrees with finite differences."""


class RecenterError(RuntimeError):
    """Gradient descent did not reach ``||grad F|| <= sqrt(L)``."""


class DatasetFormatError(ValueError):
    """A dataset file has the wrong shape or unparsable entries."""


class OracleCounter:
    """Thread-safe monotone counter."""

    def __init__(self):
        self._value = 0
        self._lock = threading.Lock()

    def add(self, k: int) -> None:
        if k < 0:
            raise ValueError("counter increments must be nonnegative")
        with self._lock:
            self._value += int(k)

    @property
    def value(self) -> int:
        return self._value


def _as_batch(x, d):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return arr, single


@dataclass
class TargetModel:
    """A potential with its gradient and the regularity constants the theory uses.

    ``potential_fn`` and ``grad_fn`` act on ``(m, d)`` batches in the
    *unshifted* coordinates.  The public methods evaluate the shifted
    potential ``x -> F(x + center_shift)``.

    ``L_source`` / ``growth_source`` are ``"analytic"`` or ``"estimated"``.
    """

    d: int
    potential_fn: Callable
    grad_fn: Callable
    L: float
    alpha: float
    d1: float
    d2: float
    name: str = "target"
    L_source: str = "analytic"
    growth_source: str = "analytic"
    center_shift: np.ndarray = None
    sampler: Optional[Callable] = None
    info: dict = field(default_factory=dict)
    oracle_calls: OracleCounter = field(default_factory=OracleCounter, repr=False)
    metric_grad_evals: OracleCounter = field(default_factory=OracleCounter, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if not (0 < self.alpha <= 2):
            raise ValueError("growth exponent alpha must lie in (0, 2]")
        if self.L < 0:
            raise ValueError("smoothness constant must be nonnegative")
        if self.center_shift is None:
            self.center_shift = np.zeros(self.d)
        self.center_shift = np.asarray(self.center_shift, dtype=np.float64)

    # evaluation -------------------------------------------------------------

    def _shifted(self, x):
        X, single = _as_batch(x, self.d)
        if np.any(self.center_shift):
            X = X + self.center_shift
        return X, single

    def potential(self, x):
        X, single = self._shifted(x)
        out = np.asarray(self.potential_fn(X), dtype=np.float64)
        return float(out[0]) if single else out

    def grad(self, x):
        """Gradient of ``F``; adds one to ``oracle_calls`` per row."""
        X, single = self._shifted(x)
        self.oracle_calls.add(X.shape[0])
        G = np.asarray(self.grad_fn(X), dtype=np.float64)
        return G[0] if single else G

    def metric_grad(self, x):
        """Gradient for evaluation metrics; counted under ``metric_grad_evals``."""
        X, single = self._shifted(x)
        self.metric_grad_evals.add(X.shape[0])
        G = np.asarray(self.grad_fn(X), dtype=np.float64)
        return G[0] if single else G

    def _grad_uncounted(self, X):
        X, _ = self._shifted(X)
        return np.asarray(self.grad_fn(X), dtype=np.float64)

    def grad_at_origin(self) -> np.ndarray:
        return self._grad_uncounted(np.zeros((1, self.d)))[0]

    def sample(self, m: int, rng) -> np.ndarray:
        """Exact draws from the target in shifted coordinates, when available."""
        if self.sampler is None:
            raise NotImplementedError(f"target {self.name!r} has no exact sampler")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return self.sampler(m, rng) - self.center_shift

    # constants ---------------------------------------------------------------

    def constants(self) -> dict:
        return {
            "d": self.d,
            "L": self.L,
            "L_source": self.L_source,
            "alpha": self.alpha,
            "d1": self.d1,
            "d2": self.d2,
            "growth_source": self.growth_source,
            "center_shift": self.center_shift.tolist(),
        }

    def shifted_by(self, shift) -> "TargetModel":
        """Copy with ``center_shift`` replaced and growth constants adjusted.

        ``F(x + c) >= d1 |x + c|^a - d2 >= d1 2^{min(0, 1-a)} |x|^a - (d2 + d1 |c|^a)``.
        """
        shift = np.asarray(shift, dtype=np.float64)
        extra = shift - self.center_shift
        c = float(np.linalg.norm(extra))
        d1 = self.d1 * 2.0 ** min(0.0, 1.0 - self.alpha) if c > 0 else self.d1
        d2 = self.d2 + self.d1 * c**self.alpha
        return replace(
            self,
            center_shift=shift,
            d1=d1,
            d2=d2,
            oracle_calls=OracleCounter(),
            metric_grad_evals=OracleCounter(),
        )


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


def gradient_audit(model: TargetModel, probes: int = 100, radius: float = 3.0, rtol: float = 1e-5, seed: int = 0):
    """Compare ``grad F`` with central differences along random unit directions.

    Returns the worst relative error, measured against ``max(1, |grad F|)``.
    Raises :class:`GradientAuditError` if it exceeds ``rtol``.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    X = rng.standard_normal((probes, d)) * radius / math.sqrt(d)
    V = rng.standard_normal((probes, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    G = model._grad_uncounted(X)
    worst = 0.0
    for i in range(probes):
        eps = 1e-5 * (1.0 + np.linalg.norm(X[i]))
        fp = model.potential(X[i] + eps * V[i])
        fm = model.potential(X[i] - eps * V[i])
        fd = (fp - fm) / (2.0 * eps)
        ref = float(G[i] @ V[i])
        scale = max(1.0, float(np.linalg.norm(G[i])))
        # rounding in F itself limits the attainable accuracy
        floor = 1e-13 * max(1.0, abs(fp)) / eps
        err = max(0.0, abs(fd - ref) - floor) / scale
        worst = max(worst, err)
    if worst > rtol:
        raise GradientAuditError(f"{model.name}: gradient audit relative error {worst:.3e} exceeds {rtol:g}")
    return worst


def growth_audit(model: TargetModel, probes: int = 10_000, radius: float = 50.0, seed: int = 0):
    """Check ``F(x) >= d1 |x|^alpha - d2`` on random points of a ball.

    Returns ``(passed, worst_margin, witness)``; ``worst_margin`` is the most
    negative value of ``F(x) - d1 |x|^alpha + d2``.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    z = rng.standard_normal((probes, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    X = z * (radius * rng.random(probes) ** (1.0 / d))[:, None]
    F = np.concatenate([model.potential(X[i : i + 512]) for i in range(0, probes, 512)])
    margin = F - model.d1 * np.linalg.norm(X, axis=1) ** model.alpha + model.d2
    i = int(np.argmin(margin))
    return bool(margin[i] >= -1e-9), float(margin[i]), X[i]


def estimate_smoothness(model: TargetModel, probes: np.ndarray, iters: int = 30, seed: int = 0) -> float:
    """Largest Hessian spectral norm over ``probes`` by power iteration.

    Hessian-vector products are central differences of the gradient.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    for x in np.atleast_2d(probes):
        v = rng.standard_normal(model.d)
        v /= np.linalg.norm(v)
        lam = 0.0
        eps = 1e-5 * (1.0 + np.linalg.norm(x))
        for _ in range(iters):
            G = model._grad_uncounted(np.stack([x + eps * v, x - eps * v]))
            hv = (G[0] - G[1]) / (2.0 * eps)
            lam = float(np.linalg.norm(hv))
            if lam == 0:
                break
            v = hv / lam
        best = max(best, lam)
    return best


# ---------------------------------------------------------------------------
# Gaussian and mixture targets
# ---------------------------------------------------------------------------


def gaussian_target(mean, diag_cov, audit: bool = True) -> TargetModel:
    """``F(x) = sum_i (x_i - m_i)^2 / (2 s_i)`` for a diagonal covariance ``s``."""
    m = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    s = np.atleast_1d(np.asarray(diag_cov, dtype=np.float64))
    if m.ndim != 1 or s.shape != m.shape:
        raise ValueError("mean and diag_cov must be vectors of equal length")
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("covariance entries must be positive")
    if not np.all(np.isfinite(m)):
        raise ValueError("mean must be finite")
    prec = 1.0 / s
    smax = float(s.max())

    def potential_fn(X):
        r = X - m
        return 0.5 * (r * r * prec).sum(axis=1)

    def grad_fn(X):
        return (X - m) * prec

    def sampler(k, rng):
        return m + rng.standard_normal((k, m.shape[0])) * np.sqrt(s)

    model = TargetModel(
        d=m.shape[0],
        potential_fn=potential_fn,
        grad_fn=grad_fn,
        L=float(prec.max()),
        alpha=2.0,
        d1=1.0 / (4.0 * smax),
        d2=float(m @ m) / (2.0 * smax),
        name="gaussian",
        sampler=sampler,
        info={"mean": m.tolist(), "diag_cov": s.tolist()},
    )
    if audit:
        gradient_audit(model)
    return model


def mixture_target(weights, means, shared_cov, audit: bool = True, seed: int = 0) -> TargetModel:
    """Gaussian mixture with a shared covariance.

    ``F(x) = -log sum_j w_j exp(-(x - mu_j)^T P (x - mu_j) / 2)`` with
    ``P = shared_cov^{-1}``; the common Gaussian normalizer is dropped.
    ``shared_cov`` may be a vector (diagonal) or a full matrix.  ``L`` is a
    power-iteration estimate over probe points.
    """
    w = np.atleast_1d(np.asarray(weights, dtype=np.float64))
    if w.size == 0:
        raise ValueError("mixture needs at least one component")
    if np.any(w <= 0) or not math.isclose(float(w.sum()), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("mixture weights must be positive and sum to 1")
    mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if mu.shape[0] != w.size:
        raise ValueError("one mean per weight is required")
    d = mu.shape[1]
    cov = np.asarray(shared_cov, dtype=np.float64)
    if cov.ndim == 1:
        if cov.shape != (d,) or np.any(cov <= 0):
            raise ValueError("diagonal covariance must have d positive entries")
        P = np.diag(1.0 / cov)
        cov = np.diag(cov)
    else:
        if cov.shape != (d, d):
            raise ValueError("covariance must be d x d")
        P = np.linalg.inv(cov)
    eig = np.linalg.eigvalsh(P)
    if eig.min() <= 0:
        raise ValueError("covariance must be positive definite")
    logw = np.log(w)
    chol = np.linalg.cholesky(cov)

    def _quad(X):
        R = X[:, None, :] - mu[None, :, :]
        PR = R @ P
        return R, PR, (R * PR).sum(axis=-1)

    def potential_fn(X):
        _, _, q = _quad(X)
        return -logsumexp(logw - 0.5 * q, axis=1)

    def grad_fn(X):
        _, PR, q = _quad(X)
        a = logw - 0.5 * q
        resp = np.exp(a - logsumexp(a, axis=1, keepdims=True))
        return (resp[:, :, None] * PR).sum(axis=1)

    def sampler(k, rng):
        comp = rng.choice(w.size, size=k, p=w)
        return mu[comp] + rng.standard_normal((k, d)) @ chol.T

    lam_min = float(eig.min())
    model = TargetModel(
        d=d,
        potential_fn=potential_fn,
        grad_fn=grad_fn,
        L=float(eig.max()),
        alpha=2.0,
        d1=lam_min / 4.0,
        d2=lam_min * float((mu * mu).sum(axis=1).max()) / 2.0,
        name="mixture",
        L_source="estimated",
        sampler=sampler,
        info={"weights": w.tolist(), "means": mu.tolist()},
    )
    rng = np.random.default_rng(seed)
    spread = float(np.abs(mu).max()) + 3.0 * math.sqrt(float(np.diag(cov).max()))
    # curvature peaks between components, so probe midpoints explicitly
    i, j = np.triu_indices(w.size, k=1)
    mids = 0.5 * (mu[i] + mu[j])
    probes = np.vstack([mu, mids, w @ mu, rng.uniform(-spread, spread, size=(32, d))])
    model.L = max(estimate_smoothness(model, probes, seed=seed), 1e-12)
    if audit:
        gradient_audit(model)
    return model


# ---------------------------------------------------------------------------
# recentering
# ---------------------------------------------------------------------------


def recenter(model: TargetModel, max_iters: int = 10_000) -> TargetModel:
    """Shift coordinates so that ``||grad F(0)|| <= sqrt(L)``.

    Runs gradient descent with step ``1/L`` from the current origin.  Returns
    the model itself when the condition already holds.
    """
    if model.L <= 0:
        raise ValueError("recentering needs a positive smoothness constant")
    target = math.sqrt(model.L)
    x = np.zeros(model.d)
    g = model._grad_uncounted(x[None, :])[0]
    if np.linalg.norm(g) <= target:
        return model
    for _ in range(max_iters):
        x = x - g / model.L
        g = model._grad_uncounted(x[None, :])[0]
        if np.linalg.norm(g) <= target:
            break
    else:
        raise RecenterError(
            f"recentering did not reach |grad F| <= sqrt(L) in {max_iters} iterations; "
            f"last gradient norm {np.linalg.norm(g):.6g}"
        )
    return model.shifted_by(model.center_shift + x)


# ---------------------------------------------------------------------------
# Bayesian logistic regression
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be N x p and labels length N")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def test(self):
        return self.features[self.test_idx], self.labels[self.test_idx]


@dataclass(frozen=True)
class LogRegPrior:
    """``w | a ~ N(0, I / a)``, ``a ~ Gamma(a0, rate=b0)``; sampled as ``log a``."""

    a0: float = 1.0
    b0: float = 0.01

    def sample(self, m: int, p: int, rng) -> np.ndarray:
        alpha = rng.gamma(self.a0, 1.0 / self.b0, size=m)
        w = rng.standard_normal((m, p)) / np.sqrt(alpha)[:, None]
        return np.hstack([w, np.log(alpha)[:, None]])


def bayes_logreg_target(
    dataset: Dataset,
    prior: LogRegPrior = LogRegPrior(),
    subsample: Optional[int] = 50_000,
    seed: int = 0,
    minibatch: Optional[int] = None,
    audit: bool = True,
) -> TargetModel:
    """Posterior over ``theta = [w, log a]`` for logistic regression.

    ``F = sum_i log(1 + exp(-y_i x_i^T w)) + a |w|^2 / 2 - (p/2) log a
    + b0 a - a0 log a``, where the last term includes the change of variables
    to ``log a``.  Uses a fixed seeded subsample of the training rows
    (``subsample=None`` uses all of them).  With ``minibatch`` set, every
    gradient call draws a fresh data batch from a seeded stream and rescales
    the likelihood term.
    """
    Xtr, ytr = dataset.train()
    rng = np.random.default_rng(seed)
    if subsample is not None and subsample < Xtr.shape[0]:
        rows = np.sort(rng.choice(Xtr.shape[0], size=subsample, replace=False))
        Xtr, ytr = Xtr[rows], ytr[rows]
    Z = Xtr * ytr[:, None]  # rows y_i x_i
    N, p = Z.shape
    a0, b0 = prior.a0, prior.b0
    batch_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])

    def _split(X):
        if X.shape[1] != p + 1:
            raise ValueError(f"parameter dimension {X.shape[1]} does not match {p} features + 1")
        return X[:, :p], X[:, p]

    def potential_fn(X):
        W, eta = _split(X)
        alpha = np.exp(eta)
        lik = -log_expit(W @ Z.T).sum(axis=1) if N else np.zeros(X.shape[0])
        return lik + 0.5 * alpha * (W * W).sum(axis=1) - (0.5 * p + a0) * eta + b0 * alpha

    def grad_fn(X):
        W, eta = _split(X)
        alpha = np.exp(eta)
        if N and minibatch is not None and minibatch < N:
            idx = batch_rng.choice(N, size=minibatch, replace=False)
            Zb, scale = Z[idx], N / minibatch
        else:
            Zb, scale = Z, 1.0
        if N:
            s = expit(-(W @ Zb.T))  # 1 - sigmoid(y x^T w)
            gw = -scale * (s @ Zb)
        else:
            gw = np.zeros_like(W)
        gw = gw + alpha[:, None] * W
        geta = -0.5 * p + 0.5 * alpha * (W * W).sum(axis=1) + b0 * alpha - a0
        return np.hstack([gw, geta[:, None]])

    def prior_sampler(k, r):
        return prior.sample(k, p, r)

    model = TargetModel(
        d=p + 1,
        potential_fn=potential_fn,
        grad_fn=grad_fn,
        L=1.0,
        alpha=1.0,
        d1=1.0,
        d2=0.0,
        name="bayes_logreg",
        L_source="estimated",
        growth_source="estimated",
        info={"rows": N, "features": p, "a0": a0, "b0": b0, "minibatch": minibatch},
    )
    model.info["prior_sampler"] = prior_sampler
    probe_rng = np.random.default_rng(seed + 1)
    probes = prior.sample(4, p, probe_rng)
    probes[:, p] = np.clip(probes[:, p], -3.0, 3.0)
    if minibatch is None:
        model.L = max(estimate_smoothness(model, probes, iters=20, seed=seed), 1e-12)
    else:
        model.L = 0.25 * N + 1.0
    model.d1, model.d2 = _estimate_growth(model, probe_rng)
    if audit and minibatch is None:
        gradient_audit(model, probes=20, radius=1.0)
    return model


def _estimate_growth(model: TargetModel, rng, probes: int = 512, radius: float = 50.0):
    """Empirical ``alpha = 1`` growth constants with a safety margin."""
    d = model.d
    z = rng.standard_normal((probes, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    X = z * (radius * rng.random(probes) ** (1.0 / d))[:, None]
    r = np.linalg.norm(X, axis=1)
    F = np.concatenate([model.potential(X[i : i + 128]) for i in range(0, probes, 128)])
    far = r > radius / 2
    ratio = F[far] / r[far]
    d1 = 0.5 * float(ratio.min()) if ratio.min() > 0 else 1e-3
    d2 = float(np.max(d1 * r - F))
    d2 = max(d2, 0.0) * 1.5 + 1.0
    return d1, d2


# ---------------------------------------------------------------------------
# Covertype loading
# ---------------------------------------------------------------------------

COVERTYPE_COLUMNS = 55
CACHE_MAGIC = b"STFLDST1"


def write_dataset_cache(path, raw: np.ndarray) -> None:
    """Binary cache: magic, uint64 rows, uint64 cols, float64 data column-major."""
    raw = np.asarray(raw, dtype="<f8")
    rows, cols = raw.shape
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.asfortranarray(raw).tobytes(order="F"))


def read_dataset_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CACHE_MAGIC:
            raise DatasetFormatError(f"{path}: not a dataset cache (bad magic {magic!r})")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        buf = fh.read()
    if len(buf) != rows * cols * 8:
        raise DatasetFormatError(f"{path}: cache truncated")
    return np.frombuffer(buf, dtype="<f8").reshape((rows, cols), order="F").astype(np.float64)


def _is_header(line: str) -> bool:
    first = line.split(",")[0].strip()
    try:
        float(first)
        return False
    except ValueError:
        return True


def _open_text(path):
    if path.endswith(".gz"):
        return gzip.open(path, "rt", newline="")
    return open(path, "r", newline="")


def read_covertype_csv(path) -> np.ndarray:
    """Parse a 55-column numeric CSV (optionally gzipped); a non-numeric first line is skipped."""
    path = os.fspath(path)
    with _open_text(path) as fh:
        first = fh.readline()
    skip = 1 if first and _is_header(first) else 0
    try:
        fast = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2, dtype=np.float64)
        if fast.shape[1] == COVERTYPE_COLUMNS and fast.shape[0] > 0:
            return fast
    except ValueError:
        pass
    # slow path pinpoints the offending line
    reader_rows = []
    with _open_text(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno <= skip or not row:
                continue
            if len(row) != COVERTYPE_COLUMNS:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {COVERTYPE_COLUMNS} columns, found {len(row)}"
                )
            try:
                reader_rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric field ({exc})") from None
    if not reader_rows:
        raise DatasetFormatError(f"{path}: no data rows")
    return np.asarray(reader_rows, dtype=np.float64)


def load_covertype(
    path,
    seed: int = 0,
    test_fraction: float = 0.2,
    expected_rows: Optional[int] = None,
    cache_path=None,
) -> Dataset:
    """Load Covertype, binarize labels (class 2 vs rest) and standardize.

    The split is a seeded permutation; features are standardized with the
    training rows' mean and standard deviation.  If ``cache_path`` exists it
    is read instead of the CSV, otherwise it is written after parsing.
    """
    if cache_path is not None and os.path.exists(cache_path):
        raw = read_dataset_cache(cache_path)
    else:
        raw = read_covertype_csv(path)
        if cache_path is not None:
            write_dataset_cache(cache_path, raw)
    if raw.shape[1] != COVERTYPE_COLUMNS:
        raise DatasetFormatError(f"expected {COVERTYPE_COLUMNS} columns, found {raw.shape[1]}")
    if expected_rows is not None and raw.shape[0] != expected_rows:
        raise DatasetFormatError(f"expected {expected_rows} rows, found {raw.shape[0]}")
    X = raw[:, :-1]
    y = np.where(raw[:, -1] == 2, 1.0, -1.0)
    N = X.shape[0]
    perm = np.random.default_rng(seed).permutation(N)
    n_test = int(round(test_fraction * N))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    sd[sd == 0] = 1.0
    return Dataset((X - mu) / sd, y, train_idx, test_idx)


def predictive_accuracy(particles: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of the particle-averaged sigmoid prediction thresholded at 0.5."""
    W = np.asarray(particles)[:, : features.shape[1]]
    prob = expit(features @ W.T).mean(axis=1)
    pred = np.where(prob >= 0.5, 1.0, -1.0)
    return float(np.mean(pred == labels))
