"""Radial kernels, their derivatives, and RKHS Stein inner products.

All four supported families are radial, ``k(x, y) = phi(||x - y||)``, so the
gradient with respect to the second argument always has the form

    grad_y k(x, y) = psi(||x - y||) * (x - y)

and the trace of the mixed second derivative is ``d * psi + rho * psi'``.
Every routine below is written in terms of ``(k, psi, trace)`` computed from
squared distances, which keeps the scalar and the batched code paths on the
same arithmetic.

Conventions (``h`` is ``KernelSpec.bandwidth``):

* ``rbf``:      ``exp(-||x - y||^2 / (2 h))``, so ``h`` is a squared length scale
* ``imq``:      ``(1 + ||x - y||^2 / h) ** -0.5``
* ``matern32``: ``(1 + a r) exp(-a r)`` with ``a = sqrt(3) / h``
* ``laplace``:  ``exp(-||x - y|| / h)``

The Laplace kernel is not differentiable on the diagonal.  Its gradient there is
defined as the zero vector (a valid subgradient) and the scalar API emits a
:class:`DiagonalSubgradientWarning`; second derivatives on the diagonal raise
:class:`KernelDiagonalError`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

FAMILIES = ("rbf", "imq", "matern32", "laplace")

# Pairwise routines process row blocks so that the (rows, cols, d) difference
# tensor stays below this many float64 entries.
_BLOCK_ENTRIES = 1 << 22

_CONSTANT_FLOOR = 1e-12


class DiagonalSubgradientWarning(UserWarning):
    """Laplace kernel gradient requested at x == y."""


class KernelDiagonalError(ValueError):
    """A second derivative of a non-smooth kernel was requested on the diagonal."""


class UnsupportedKernelError(ValueError):
    """The kernel lacks the smoothness an estimator needs."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        h = float(self.bandwidth)
        if not (math.isfinite(h) and h > 0):
            raise ValueError(f"bandwidth must be a positive finite number, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)

    @property
    def smooth(self) -> bool:
        """True when the kernel is twice differentiable everywhere."""
        return self.family != "laplace"

    def to_dict(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(family=data["family"], bandwidth=data.get("bandwidth", 1.0))


@dataclass(frozen=True)
class KernelConstants:
    """Constants of the bounded-norm and kernel-decay assumptions.

    ``B`` bounds both ``||k(., y)||`` and ``||grad_2 k(., y)||`` in the RKHS;
    ``A1``-``A3`` are the decay constants.  ``probe`` describes the sampling
    region whenever the constants were estimated rather than derived.
    """

    B: float
    A1: float
    A2: float
    A3: float
    source: str = "analytic"
    probe: Optional[str] = None

    def __post_init__(self):
        for name in ("B", "A1", "A2", "A3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"kernel constant {name} must be positive and finite, got {v}")
        if self.source not in ("analytic", "empirical"):
            raise ValueError(f"source must be 'analytic' or 'empirical', got {self.source!r}")
        if self.source == "empirical" and not self.probe:
            raise ValueError("empirical kernel constants must record the probe region")

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "A1": self.A1,
            "A2": self.A2,
            "A3": self.A3,
            "source": self.source,
            "probe": self.probe,
        }


# ---------------------------------------------------------------------------
# radial profiles
# ---------------------------------------------------------------------------


def _profile(spec: KernelSpec, sq: np.ndarray):
    """Return ``(k, psi)`` for squared distances ``sq``.

    For the Laplace kernel ``psi`` is set to zero where ``sq == 0``.
    """
    h = spec.bandwidth
    fam = spec.family
    if fam == "rbf":
        k = np.exp(-sq / (2.0 * h))
        psi = k / h
    elif fam == "imq":
        u = 1.0 + sq / h
        k = 1.0 / np.sqrt(u)
        psi = k / (u * h)
    elif fam == "matern32":
        a = math.sqrt(3.0) / h
        ar = a * np.sqrt(sq)
        e = np.exp(-ar)
        k = (1.0 + ar) * e
        psi = (a * a) * e
    else:  # laplace
        r = np.sqrt(sq)
        k = np.exp(-r / h)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(r > 0, k / (h * np.where(r > 0, r, 1.0)), 0.0)
    return k, psi


def _trace_profile(spec: KernelSpec, sq: np.ndarray, d: int) -> np.ndarray:
    """Mixed partial trace ``sum_i d^2 k / dx_i dy_i`` as a function of ``sq``."""
    h = spec.bandwidth
    fam = spec.family
    if fam == "rbf":
        k = np.exp(-sq / (2.0 * h))
        return k * (d / h - sq / (h * h))
    if fam == "imq":
        u = 1.0 + sq / h
        return d / h * u**-1.5 - 3.0 * sq / (h * h) * u**-2.5
    if fam == "matern32":
        a = math.sqrt(3.0) / h
        ar = a * np.sqrt(sq)
        return (a * a) * np.exp(-ar) * (d - ar)
    r = np.sqrt(sq)
    if np.any(r == 0):
        raise KernelDiagonalError(
            "laplace kernel has no second derivative on the diagonal x == y"
        )
    k = np.exp(-r / h)
    return k * ((d - 1) / (h * r) - 1.0 / (h * h))


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------


def _check_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("kernel arguments must be 1-d vectors")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("kernel arguments must be finite")
    return x, y


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x, y = _check_pair(x, y)
    r = x - y
    k, _ = _profile(spec, np.dot(r, r))
    return float(k)


def kernel_grad2(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(x, y)`` with respect to ``y``."""
    x, y = _check_pair(x, y)
    r = x - y
    sq = np.dot(r, r)
    if spec.family == "laplace" and sq == 0:
        warnings.warn(
            "laplace kernel is not differentiable at x == y; returning the zero subgradient",
            DiagonalSubgradientWarning,
            stacklevel=2,
        )
        return np.zeros_like(x)
    _, psi = _profile(spec, sq)
    return psi * r


def mixed_partial_trace(spec: KernelSpec, x, y) -> float:
    x, y = _check_pair(x, y)
    r = x - y
    return float(_trace_profile(spec, np.dot(r, r), x.shape[0]))


def stein_inner(spec: KernelSpec, x, gx, y, gy) -> float:
    """Closed-form ``<h(., x), h(., y)>_H`` with ``h(., y) = k(., y) gy - grad_2 k(., y)``.

    ``gx`` and ``gy`` are the potential gradients at ``x`` and ``y``.
    """
    x, y = _check_pair(x, y)
    gx, gy = _check_pair(gx, gy)
    if gx.shape != x.shape:
        raise ValueError("gradient and point dimensions differ")
    r = x - y
    sq = np.dot(r, r)
    k, psi = _profile(spec, sq)
    tr = _trace_profile(spec, sq, x.shape[0])
    return float(k * np.dot(gx, gy) - psi * np.dot(gx - gy, r) + tr)


# ---------------------------------------------------------------------------
# batched API
# ---------------------------------------------------------------------------


def _row_block(rows: int, cols: int, d: int) -> int:
    return max(1, min(rows, _BLOCK_ENTRIES // max(1, cols * d)))


def pairwise_diff(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``X[i] - Y[j]`` as an ``(m, p, d)`` array."""
    return X[:, None, :] - Y[None, :, :]


def sq_norms(diff: np.ndarray) -> np.ndarray:
    return (diff * diff).sum(axis=-1)


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Kernel matrix ``k(X[i], Y[j])``."""
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]))
    step = _row_block(X.shape[0], Y.shape[0], X.shape[1])
    for i in range(0, X.shape[0], step):
        k, _ = _profile(spec, sq_norms(pairwise_diff(X[i : i + step], Y)))
        out[i : i + step] = k
    return out


def interaction_terms(spec: KernelSpec, X: np.ndarray, Y: np.ndarray):
    """Kernel values and ``grad_2 k(X[i], Y[j])`` for every pair.

    Returns ``(k, grad2)`` with shapes ``(m, p)`` and ``(m, p, d)``.  Every
    entry depends only on its own pair, so the result for a given row does
    not depend on which other rows are present.
    """
    diff = pairwise_diff(X, Y)
    k, psi = _profile(spec, sq_norms(diff))
    return k, psi[..., None] * diff


def stein_matrix(spec: KernelSpec, X, GX, Y, GY) -> np.ndarray:
    """Matrix of ``stein_inner(X[i], GX[i], Y[j], GY[j])``."""
    if not spec.smooth:
        raise UnsupportedKernelError(
            f"{spec.family} kernel is not twice differentiable; Stein inner products are undefined"
        )
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    GX = np.asarray(GX, dtype=np.float64)
    GY = np.asarray(GY, dtype=np.float64)
    d = X.shape[1]
    # expanded into matrix products; avoids the (m, p, d) difference tensor
    gxx = (GX * X).sum(axis=1)
    gyy = (GY * Y).sum(axis=1)
    out = np.empty((X.shape[0], Y.shape[0]))
    step = _row_block(X.shape[0], Y.shape[0], 4)
    for i in range(0, X.shape[0], step):
        sl = slice(i, i + step)
        sq = cdist(X[sl], Y, "sqeuclidean")
        k, psi = _profile(spec, sq)
        gr = gxx[sl, None] - GX[sl] @ Y.T - X[sl] @ GY.T + gyy[None, :]
        out[sl] = k * (GX[sl] @ GY.T) - psi * gr + _trace_profile(spec, sq, d)
    return out


def stein_sum(spec: KernelSpec, X, GX, Y, GY, *, drop_diagonal: bool = False) -> float:
    """Sum of all Stein inner products between two point sets.

    Row blocks are reduced in ascending order, so the result is reproducible
    for a fixed input.  ``drop_diagonal`` removes the ``i == j`` terms and
    requires ``X is Y``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    step = _row_block(X.shape[0], Y.shape[0], X.shape[1])
    total = 0.0
    for i in range(0, X.shape[0], step):
        block = stein_matrix(spec, X[i : i + step], GX[i : i + step], Y, GY)
        if drop_diagonal:
            idx = np.arange(block.shape[0])
            block[idx, i + idx] = 0.0
        total += float(block.sum())
    return total


def median_bandwidth(X) -> float:
    """Median-heuristic bandwidth for the ``rbf`` convention used here.

    Returns ``h = med^2 / (2 log(m + 1))`` where ``med`` is the median pairwise
    distance.  Not used unless requested explicitly.
    """
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    if m < 2:
        return 1.0
    iu = np.triu_indices(m, k=1)
    sq = sq_norms(pairwise_diff(X, X))[iu]
    med2 = float(np.median(sq))
    if med2 <= 0:
        return 1.0
    return med2 / (2.0 * math.log(m + 1.0))


# ---------------------------------------------------------------------------
# assumption audits
# ---------------------------------------------------------------------------


def analytic_constants(spec: KernelSpec, d: int) -> Optional[KernelConstants]:
    """Closed-form constants, or ``None`` for families without one.

    For the rbf kernel with ``k = exp(-s / 2h)``::

        A1 = sup_s (1 + s) e^{-s/2h} = 2h e^{-(2h-1)/2h}   (h > 1/2), else 1
        A2 = sup_r (r/h) e^{-r^2/2h} = e^{-1/2} / sqrt(h)
        A3 = sup_r (r^2/h^2) e^{-r^2/2h} = 2 / (e h)
        B  = max(sqrt(k(y, y)), sqrt(trace(y, y))) = max(1, sqrt(d/h))
    """
    if spec.family != "rbf":
        return None
    h = spec.bandwidth
    A1 = 2.0 * h * math.exp(-(2.0 * h - 1.0) / (2.0 * h)) if h > 0.5 else 1.0
    A2 = math.exp(-0.5) / math.sqrt(h)
    A3 = 2.0 / (math.e * h)
    B = max(1.0, math.sqrt(d / h))
    return KernelConstants(B=B, A1=A1, A2=A2, A3=A3, source="analytic")


@dataclass(frozen=True)
class ProbeRegion:
    """Ball of probe points used by the empirical audit."""

    radius: float
    center: Optional[tuple] = None
    pairs: int = 10_000

    def describe(self, d: int) -> str:
        c = "origin" if self.center is None else f"center={list(self.center)}"
        return f"uniform ball radius={self.radius:g} {c} d={d} pairs={self.pairs}"


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    witness: Optional[tuple] = None
    detail: str = ""


@dataclass
class KernelAuditReport:
    spec: KernelSpec
    d: int
    probe: str
    checks: list = field(default_factory=list)
    diagonal_non_differentiable: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def violations(self) -> list:
        return [c for c in self.checks if not c.passed]


def _ball_points(rng, n, d, radius, center):
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    pts = z * r[:, None]
    if center is not None:
        pts = pts + np.asarray(center, dtype=np.float64)
    return pts


def audit_kernel_assumptions(spec: KernelSpec, d: int, probe: ProbeRegion, rng_seed=0):
    """Estimate the kernel constants on random probe pairs and audit them.

    Returns ``(constants, report)``.  The empirical constants are the smallest
    values for which every inequality holds on the probes (floored at 1e-12 so
    they stay strictly positive).  When closed-form constants exist, the
    report checks every probe against them and names the first witness of any
    violation.  Diagonal pairs ``(x, x)`` are always included.
    """
    if probe.pairs < 1:
        raise ValueError("probe must contain at least one pair")
    rng = np.random.default_rng(rng_seed)
    X = _ball_points(rng, probe.pairs, d, probe.radius, probe.center)
    Y = _ball_points(rng, probe.pairs, d, probe.radius, probe.center)
    diag = X[: max(1, probe.pairs // 100)]
    X = np.vstack([X, diag])
    Y = np.vstack([Y, diag])
    r = X - Y
    sq = (r * r).sum(axis=1)
    k, psi = _profile(spec, sq)
    g = psi[:, None] * r
    gnorm = np.linalg.norm(g, axis=1)
    desc = probe.describe(d)
    report = KernelAuditReport(spec=spec, d=d, probe=desc)

    nonneg = k >= 0
    report.checks.append(
        AssumptionCheck(
            "k >= 0",
            bool(nonneg.all()),
            None if nonneg.all() else (X[~nonneg][0], Y[~nonneg][0]),
        )
    )

    offdiag = sq > 0
    if spec.family == "laplace":
        report.diagonal_non_differentiable = True
        report.checks.append(
            AssumptionCheck(
                "diagonal differentiability",
                True,
                detail="laplace kernel is not differentiable at x == y; grad_2 k(x, x) := 0 "
                "and the diagonal is excluded from gradient audits",
            )
        )
        mask = offdiag
    else:
        mask = np.ones_like(offdiag)

    A1 = float(np.max(k * (1.0 + sq)))
    A2 = float(np.max(gnorm[mask])) if mask.any() else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((k > 0) & mask, gnorm**2 / np.where(k > 0, k, 1.0), 0.0)
    A3 = float(np.max(ratio))
    # first clause of the bounded-norm assumption: sqrt(k(y, y))
    kdiag, _ = _profile(spec, np.zeros(1))
    B = float(np.sqrt(kdiag[0]))
    if spec.smooth:
        B = max(B, float(np.sqrt(np.max(_trace_profile(spec, np.zeros(1), d)))))
    else:
        report.checks.append(
            AssumptionCheck(
                "grad_2 k(., y) in H",
                True,
                detail="trace of mixed partials undefined on the diagonal; B covers only ||k(., y)||",
            )
        )

    emp = KernelConstants(
        B=max(B, _CONSTANT_FLOOR),
        A1=max(A1, _CONSTANT_FLOOR),
        A2=max(A2, _CONSTANT_FLOOR),
        A3=max(A3, _CONSTANT_FLOOR),
        source="empirical",
        probe=desc,
    )

    ref = analytic_constants(spec, d)
    if ref is not None:
        tol = 1e-12
        for name, lhs, rhs in (
            ("k <= A1 / (1 + |x-y|^2)", k * (1.0 + sq), ref.A1),
            ("|grad_2 k| <= A2", gnorm, ref.A2),
            ("|grad_2 k|^2 <= A3 k", gnorm**2 - ref.A3 * k, 0.0),
        ):
            bad = lhs > rhs + tol
            bad &= mask
            w = None
            if bad.any():
                i = int(np.argmax(bad))
                w = (X[i].copy(), Y[i].copy())
            report.checks.append(AssumptionCheck(name, not bad.any(), w))
    return emp, report


def kernel_constants(spec: KernelSpec, d: int, probe: Optional[ProbeRegion] = None) -> KernelConstants:
    """Analytic constants when available, otherwise an empirical audit."""
    ref = analytic_constants(spec, d)
    if ref is not None:
        return ref
    if probe is None:
        probe = ProbeRegion(radius=max(5.0, 3.0 * math.sqrt(d)))
    consts, _ = audit_kernel_assumptions(spec, d, probe)
    return consts
