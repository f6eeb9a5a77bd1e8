"""Integration of a target log-depth gradient field over a mask.

The least-squares integrator minimizes |G z - g|^2 with G the package's
forward-difference operator; the additive-constant kernel is fixed afterwards
by anchoring one pixel.  A single-path integrator is kept as a test reference
(on non-integrable fields its result depends on the path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import LinearOperator, cg

from .camera import LogDepthMap, PixelMask, stacked_gradient_matrix
from .errors import SolverError

CG_RTOL = 1e-9


@dataclass(frozen=True)
class GradientField:
    """Per-pixel target gradient pairs (g_u, g_v) over a mask."""

    mask: PixelMask
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.mask.n, 2):
            raise ValueError(f"expected ({self.mask.n},2) gradients, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("gradient values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def _require_connected(mask: PixelMask):
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, count = ndimage.label(mask.inside, structure=structure)
    if count > 1:
        sizes = ndimage.sum_labels(mask.inside, labels, index=range(1, count + 1))
        raise ValueError(
            f"mask is disconnected: {count} components with sizes "
            f"{[int(s) for s in sizes]}"
        )


def jacobi_cg(A, b, rtol, x0=None, maxiter=None, callback=None):
    """Conjugate gradient with a Jacobi preconditioner (zero diagonals kept at 1)."""
    diag = A.diagonal() if sparse.issparse(A) else np.asarray(A).diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    M = LinearOperator(A.shape, matvec=lambda x: inv * x)
    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, M=M,
                 maxiter=maxiter, callback=callback)
    if info < 0:
        raise SolverError(f"conjugate gradient breakdown (info={info})")
    if not np.all(np.isfinite(x)):
        raise SolverError("conjugate gradient produced non-finite values")
    return x


def integrate_least_squares(g: GradientField, anchor, return_info: bool = False):
    """Least-squares log-depth from a gradient field, anchored at one pixel.

    ``anchor`` is ((row, col), value).  The normal equations G^T G z = G^T g are
    solved by Jacobi-preconditioned CG to relative residual 1e-9; the constant
    kernel is fixed by shifting so z(anchor) = value.
    """
    (row, col), z0 = anchor
    mask = g.mask
    _require_connected(mask)
    j0 = mask.index_of(row, col)
    G = stacked_gradient_matrix(mask)
    rhs = G.T @ g.values.T.reshape(-1)
    A = (G.T @ G).tocsr()
    history = []
    z = jacobi_cg(A, rhs, rtol=CG_RTOL, maxiter=10 * mask.n,
                  callback=lambda xk: history.append(
                      float(np.linalg.norm(G @ xk - g.values.T.reshape(-1)))))
    z = z + (z0 - z[j0])
    zmap = LogDepthMap(mask, z)
    if return_info:
        return zmap, {"residual_history": history}
    return zmap


def integrate_path(g: GradientField, anchor, path) -> float:
    """Cumulative forward-difference integral along a pixel path from the anchor.

    ``path`` lists the pixels visited after the anchor; each hop must be
    4-adjacent and stay inside the mask.  Returns the value at the last pixel
    (the anchor value itself for an empty path).
    """
    (row, col), z0 = anchor
    mask = g.mask
    mask.index_of(row, col)
    value = float(z0)
    cur = (int(row), int(col))
    for step in path:
        nxt = (int(step[0]), int(step[1]))
        if mask.flat_index[nxt] < 0:
            raise ValueError(f"path leaves the mask at pixel {nxt}")
        dr, dc = nxt[0] - cur[0], nxt[1] - cur[1]
        if (dr, dc) == (0, 1):
            value += g.values[mask.index_of(*cur), 0]
        elif (dr, dc) == (0, -1):
            value -= g.values[mask.index_of(*nxt), 0]
        elif (dr, dc) == (1, 0):
            value += g.values[mask.index_of(*cur), 1]
        elif (dr, dc) == (-1, 0):
            value -= g.values[mask.index_of(*nxt), 1]
        else:
            raise ValueError(f"path hop {cur} -> {nxt} is not 4-adjacent")
        cur = nxt
    return value
