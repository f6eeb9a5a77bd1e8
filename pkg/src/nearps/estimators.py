"""M-estimators, lagged IRLS weights, and self-shadow operators.

An estimator provides phi, phi' and phi'' and must satisfy phi'(x)/x >= phi''(x)
everywhere; that inequality is what makes the reweighted quadratic surrogate a
majorant of the true objective, so it is checked numerically rather than
assumed (:func:`check_majorization`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LeastSquares:
    """phi(x) = x^2."""

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x * x

    def dphi(self, x):
        return 2.0 * np.asarray(x, dtype=np.float64)

    def ddphi(self, x):
        return np.full_like(np.asarray(x, dtype=np.float64), 2.0)


@dataclass(frozen=True)
class Cauchy:
    """phi(x) = lam^2 * log(1 + x^2/lam^2), the Cauchy robust M-estimator."""

    lam: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def phi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.lam ** 2 * np.log1p((x / self.lam) ** 2)

    def dphi(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 2.0 * x / (1.0 + (x / self.lam) ** 2)

    def ddphi(self, x):
        x = np.asarray(x, dtype=np.float64)
        t = (x / self.lam) ** 2
        return 2.0 * (1.0 - t) / (1.0 + t) ** 2


def make_estimator(kind: str, lam: float = 0.1):
    if kind == "ls":
        return LeastSquares()
    if kind == "cauchy":
        return Cauchy(lam)
    raise ValueError(f"unknown estimator {kind!r}")


def weight(est, r):
    """Lagged IRLS weight phi'(r)/r, with the r = 0 case defined as 0."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    nz = r != 0.0
    np.divide(est.dphi(r), r, out=out, where=nz)
    return out


def check_majorization(est, grid) -> tuple[bool, float]:
    """Verify phi'(x)/x >= phi''(x) on a grid; returns (ok, worst margin).

    At x = 0 the analytic limit of phi'(x)/x for a smooth even phi is phi''(0),
    so the margin there is exactly zero.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    margin = np.zeros_like(grid)
    nz = grid != 0.0
    ratio = np.divide(est.dphi(grid), grid, out=np.zeros_like(grid), where=nz)
    margin[nz] = ratio[nz] - est.ddphi(grid[nz])
    worst = float(margin.min())
    return worst >= -1e-12, worst


@dataclass(frozen=True)
class ShadowOperator:
    """Either the identity or the positive part {x}_+, with its subderivative chi.

    chi(0) = 0 for the positive part: a residual exactly on the shadow boundary
    contributes no depth gradient.
    """

    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in ("identity", "positive_part"):
            raise ValueError(f"unknown shadow operator {self.kind!r}")

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x if self.kind == "identity" else np.maximum(x, 0.0)

    def chi(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return np.ones_like(x)
        return (x > 0.0).astype(np.float64)
