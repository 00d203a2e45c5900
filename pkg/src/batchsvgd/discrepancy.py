"""Kernel Stein discrepancy and maximum mean discrepancy estimators.

Everything is a dense double sum over particle pairs, reduced in a fixed
row-block order.  Score evaluations made here are metric-side and go to
``TargetModel.metric_grad_evals``, never to the sampling oracle counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import (
    KernelSpec,
    UnsupportedKernelError,
    _row_block,
    gram,
    stein_matrix,
    stein_sum,
)


@dataclass(frozen=True)
class DiscrepancyReport:
    value: float
    estimator: str
    n_points: int
    kernel: KernelSpec
    target: Optional[str] = None
    std_err: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "estimator": self.estimator,
            "n_points": self.n_points,
            "kernel": self.kernel.to_dict(),
            "target": self.target,
            "std_err": self.std_err,
        }


def _points(P) -> np.ndarray:
    arr = np.asarray(getattr(P, "data", P), dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("particle set must be a nonempty (m, d) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("particle set contains non-finite entries")
    return arr


def _require_smooth(kernel: KernelSpec):
    if not kernel.smooth:
        raise UnsupportedKernelError(
            f"{kernel.family} kernel is not twice differentiable on the diagonal; "
            "use a smooth kernel for Stein discrepancies"
        )


def _check_estimator(estimator):
    if estimator not in ("vstat", "ustat"):
        raise ValueError(f"estimator must be 'vstat' or 'ustat', got {estimator!r}")


def _ustat_moments(kernel, X, G):
    """Off-diagonal total, per-row sums and sum of squares of the Stein matrix."""
    m, d = X.shape
    rows = np.empty(m)
    sumsq = 0.0
    step = _row_block(m, m, d)
    for i in range(0, m, step):
        block = stein_matrix(kernel, X[i : i + step], G[i : i + step], X, G)
        idx = np.arange(block.shape[0])
        block[idx, i + idx] = 0.0
        rows[i : i + step] = block.sum(axis=1)
        sumsq += float((block * block).sum())
    return float(rows.sum()), rows, sumsq


def ksd2_to_target(particles, target, kernel: KernelSpec, estimator: str = "vstat") -> DiscrepancyReport:
    """Squared KSD between the empirical measure of ``particles`` and the target.

    ``vstat`` averages the Stein matrix over all ``m^2`` pairs; ``ustat`` drops
    the diagonal and normalizes by ``m (m - 1)``, and reports a standard error
    from the first-order Hoeffding decomposition.
    """
    _require_smooth(kernel)
    _check_estimator(estimator)
    X = _points(particles)
    m = X.shape[0]
    G = target.metric_grad(X)
    if estimator == "vstat":
        value = stein_sum(kernel, X, G, X, G) / (m * m)
        return DiscrepancyReport(value, "vstat", m, kernel, target.name)
    if m < 2:
        raise ValueError("the U-statistic needs at least two particles")
    total, rows, sumsq = _ustat_moments(kernel, X, G)
    pairs = m * (m - 1)
    value = total / pairs
    zeta2 = max(sumsq / pairs - value * value, 0.0)
    row_means = rows / (m - 1)
    zeta1 = float(np.var(row_means)) if m > 2 else 0.0
    var = 4.0 * (m - 2) / pairs * zeta1 + 2.0 / pairs * zeta2
    return DiscrepancyReport(value, "ustat", m, kernel, target.name, math.sqrt(var))


def ksd2_between(particles_a, particles_b, target, kernel: KernelSpec) -> DiscrepancyReport:
    """``||h_A - h_B||_H^2`` for two empirical measures (V-statistic form)."""
    _require_smooth(kernel)
    A = _points(particles_a)
    B = _points(particles_b)
    if A.shape[1] != B.shape[1]:
        raise ValueError("particle sets have different dimensions")
    GA = target.metric_grad(A)
    GB = target.metric_grad(B)
    a, b = A.shape[0], B.shape[0]
    saa = stein_sum(kernel, A, GA, A, GA) / (a * a)
    sab = stein_sum(kernel, A, GA, B, GB) / (a * b)
    sbb = stein_sum(kernel, B, GB, B, GB) / (b * b)
    value = saa - 2.0 * sab + sbb
    return DiscrepancyReport(value, "vstat", a + b, kernel, target.name)


def _gram_sum(kernel, X, Y, drop_diagonal=False):
    total = 0.0
    step = _row_block(X.shape[0], Y.shape[0], X.shape[1])
    for i in range(0, X.shape[0], step):
        block = gram(kernel, X[i : i + step], Y)
        if drop_diagonal:
            idx = np.arange(block.shape[0])
            block[idx, i + idx] = 0.0
        total += float(block.sum())
    return total


def mmd_self_term(particles, kernel: KernelSpec, estimator: str = "vstat") -> float:
    """Mean of ``k(b_i, b_j)`` over a set (off-diagonal for ``ustat``)."""
    _check_estimator(estimator)
    B = _points(particles)
    b = B.shape[0]
    if estimator == "vstat":
        return _gram_sum(kernel, B, B) / (b * b)
    if b < 2:
        raise ValueError("the U-statistic needs at least two points per set")
    return _gram_sum(kernel, B, B, True) / (b * (b - 1))


def mmd2(particles_a, particles_b, kernel: KernelSpec, estimator: str = "vstat", self_b: Optional[float] = None) -> DiscrepancyReport:
    """Squared MMD between two empirical measures.

    ``self_b`` may supply a cached :func:`mmd_self_term` of ``particles_b``.
    """
    _check_estimator(estimator)
    A = _points(particles_a)
    B = _points(particles_b)
    if A.shape[1] != B.shape[1]:
        raise ValueError("particle sets have different dimensions")
    a, b = A.shape[0], B.shape[0]
    sab = _gram_sum(kernel, A, B) / (a * b)
    saa = mmd_self_term(A, kernel, estimator)
    sbb = mmd_self_term(B, kernel, estimator) if self_b is None else float(self_b)
    return DiscrepancyReport(saa - 2.0 * sab + sbb, estimator, a + b, kernel)


def rkhs_norm_g(batch, target, kernel: KernelSpec, grads=None) -> float:
    """``||g||_H`` for ``g = (1/K) sum_b h(., x_b)``.

    ``grads`` may carry already computed scores of the batch; otherwise they
    are evaluated on the metric counter.
    """
    _require_smooth(kernel)
    X = _points(batch)
    G = target.metric_grad(X) if grads is None else np.asarray(grads, dtype=np.float64)
    K = X.shape[0]
    return math.sqrt(max(stein_sum(kernel, X, G, X, G) / (K * K), 0.0))


def h_bound(batch, target, B: float) -> float:
    """Average of ``B L |x_b| + B |grad F(0)| + B`` over a batch."""
    X = _points(batch)
    g0 = float(np.linalg.norm(target.grad_at_origin()))
    return float(np.mean(B * target.L * np.linalg.norm(X, axis=1) + B * g0 + B))
