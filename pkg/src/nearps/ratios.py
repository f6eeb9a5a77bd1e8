"""Image-ratio depth solvers: quasi-linear PDE system, fixed-point scheme, and ADMM.

Dividing the irradiance equations of two sources cancels the albedo and the
normalization coefficient, leaving per-pixel linear constraints on the
log-depth gradient whose coefficients still depend (pointwise) on the log
depth itself.  The fixed-point scheme freezes those coefficients between
linear solves; the ADMM variant splits depth into a "gradient" copy and a
"coefficient" copy coupled by a penalty, with the coefficient copy updated
pixelwise by a scalar Levenberg-Marquardt step.

Neither method can recover the global scale: the system is solved better and
better as the whole shape recedes, so a good initialization is required.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse

from .camera import (CameraIntrinsics, LogDepthMap, PixelMask, gradient,
                     gradient_matrices, normal_from_depth)
from .errors import SolverError
from .integrate import jacobi_cg
from .leds import LedRig, rig_t_derivatives, rig_t_fields
from .render import ImageStack
from .solution import SurfaceEstimate


@dataclass(frozen=True)
class RatioSystem:
    """Stacked pairwise PDE rows a^{ij} . grad(z) = b^{ij} over the mask.

    ``a`` has shape (P, n, 2) and ``b`` shape (P, n) with P = C(m, 2); rows
    dropped by the prefilter are marked invalid and excluded everywhere.
    """

    mask: PixelMask
    pairs: tuple[tuple[int, int], ...]
    a: np.ndarray
    b: np.ndarray
    valid: np.ndarray

    @property
    def row_count(self) -> int:
        return int(self.valid.sum())


def _pixel_coeffs(cam: CameraIntrinsics, u, v, t):
    """Per-source PDE pieces a^i = f [t1, t2] - t3 p, b^i = t3 (shapes (m,n,2), (m,n))."""
    a = np.empty(t.shape[:2] + (2,))
    a[..., 0] = cam.f * t[..., 0] - t[..., 2] * u[None, :]
    a[..., 1] = cam.f * t[..., 1] - t[..., 2] * v[None, :]
    return a, t[..., 2]


def ratio_coefficients(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                       zmap: LogDepthMap,
                       discard: np.ndarray | None = None) -> RatioSystem:
    """Assemble a^{ij} = I^i a^j - I^j a^i and b^{ij} = I^i b^j - I^j b^i for all pairs."""
    mask = stack.mask
    I = stack.gray()
    u, v = cam.pixel_coords(mask)
    t = rig_t_fields(rig, cam, np.stack([u, v], axis=1), zmap.values)
    a_i, b_i = _pixel_coeffs(cam, u, v, t)
    pairs = tuple(combinations(range(stack.m), 2))
    a = np.empty((len(pairs), mask.n, 2))
    b = np.empty((len(pairs), mask.n))
    valid = np.ones((len(pairs), mask.n), dtype=bool)
    for k, (i, j) in enumerate(pairs):
        a[k] = I[i][:, None] * a_i[j] - I[j][:, None] * a_i[i]
        b[k] = I[i] * b_i[j] - I[j] * b_i[i]
        if discard is not None:
            valid[k] = ~(discard[i] | discard[j])
    return RatioSystem(mask, pairs, a, b, valid)


def ratio_residual(system: RatioSystem, grad_values: np.ndarray) -> np.ndarray:
    """Residuals a . g - b of every (pair, pixel) row; invalid rows are zero."""
    res = np.einsum("pnk,nk->pn", system.a, grad_values) - system.b
    res[~system.valid] = 0.0
    return res


def energy_ratio(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                 zmap: LogDepthMap, discard: np.ndarray | None = None) -> float:
    """Sum of squared PDE residuals at the given log depth."""
    system = ratio_coefficients(stack, rig, cam, zmap, discard)
    res = ratio_residual(system, gradient(stack.mask, zmap.values))
    return float(np.sum(res ** 2))


def _system_matrix(system: RatioSystem):
    """Sparse (P*n, n) operator z -> stacked a . (grad z) rows, plus the rhs."""
    du, dv = gradient_matrices(system.mask)
    blocks = []
    for k in range(len(system.pairs)):
        au = np.where(system.valid[k], system.a[k, :, 0], 0.0)
        av = np.where(system.valid[k], system.a[k, :, 1], 0.0)
        blocks.append(sparse.diags(au) @ du + sparse.diags(av) @ dv)
    M = sparse.vstack(blocks).tocsr()
    rhs = np.where(system.valid, system.b, 0.0).ravel()
    return M, rhs


def solve_fixed_point(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                      init: LogDepthMap, iters: int,
                      discard: np.ndarray | None = None,
                      cg_rel: float = 1e-6) -> SurfaceEstimate:
    """Freeze coefficients, solve the linear system, refresh, repeat.

    The linear solve is rank-1 deficient (additive constant); the kernel is
    handled by pinning the anchor pixel at its current value.  The energy is
    recorded each iteration but is not guaranteed to decrease.
    """
    mask = stack.mask
    z = init.values.copy()
    j0 = mask.index_of(*mask.centroid_pixel())
    free = np.arange(mask.n) != j0
    trace = [energy_ratio(stack, rig, cam, LogDepthMap(mask, z), discard)]
    elapsed = [0.0]
    t_start = time.perf_counter()
    for k in range(iters):
        system = ratio_coefficients(stack, rig, cam, LogDepthMap(mask, z), discard)
        M, rhs = _system_matrix(system)
        Mf = M[:, free]
        rhs_f = rhs - M[:, [j0]].toarray().ravel() * z[j0]
        try:
            zf = jacobi_cg((Mf.T @ Mf).tocsr(), Mf.T @ rhs_f, rtol=cg_rel,
                           x0=z[free], maxiter=10 * mask.n)
        except SolverError as exc:
            raise SolverError(f"fixed-point iteration {k}: {exc}") from exc
        z[free] = zf
        trace.append(energy_ratio(stack, rig, cam, LogDepthMap(mask, z), discard))
        elapsed.append(time.perf_counter() - t_start)
    zmap = LogDepthMap(mask, z)
    return SurfaceEstimate(zmap, None, normal_from_depth(cam, zmap), trace, iters,
                           info={"elapsed_s": elapsed})


@dataclass(frozen=True)
class AdmmConfig:
    """Step, penalty-adaptation, and stopping parameters of the ADMM scheme.

    nu is the descent step of the quadratic coupling 1/(2 nu) |z - zbar + h|^2;
    it is adapted by residual balancing (factor ``tau`` whenever the primal and
    dual residuals differ by more than a factor ``mu_adapt``).  The scalar
    Levenberg-Marquardt subproblems use additive damping, x10 on reject and
    /10 on accept.
    """

    nu0: float = 1.0
    mu_adapt: float = 10.0
    tau: float = 2.0
    stop_rel: float = 1e-4
    max_outer: int = 50
    cg_rel: float = 1e-6
    lm_damping0: float = 1e-3
    lm_max_iter: int = 30

    def __post_init__(self):
        for name in ("nu0", "mu_adapt", "tau", "stop_rel", "cg_rel", "lm_damping0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.lm_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")


class _PixelwiseObjective:
    """Residuals and derivatives of the coefficient-copy subproblem per pixel."""

    def __init__(self, stack, rig, cam, discard):
        self.rig = rig
        self.cam = cam
        self.mask = stack.mask
        self.I = stack.gray()
        u, v = cam.pixel_coords(stack.mask)
        self.u, self.v = u, v
        self.pixels = np.stack([u, v], axis=1)
        self.pairs = tuple(combinations(range(stack.m), 2))
        if discard is None:
            self.valid = np.ones((len(self.pairs), stack.mask.n), dtype=bool)
        else:
            self.valid = np.array([~(discard[i] | discard[j])
                                   for i, j in self.pairs])

    def residuals(self, zbar, grad_values, with_jacobian=False):
        """Pair residuals (P, n) at the candidate zbar, optionally with d/dzbar."""
        t = rig_t_fields(self.rig, self.cam, self.pixels, zbar)
        a, b = _pixel_coeffs(self.cam, self.u, self.v, t)
        zeta = np.einsum("mnk,nk->mn", a, grad_values) - b
        res = np.empty((len(self.pairs), zbar.size))
        for k, (i, j) in enumerate(self.pairs):
            res[k] = self.I[i] * zeta[j] - self.I[j] * zeta[i]
        res[~self.valid] = 0.0
        if not with_jacobian:
            return res, None
        dt = rig_t_derivatives(self.rig, self.cam, self.pixels, zbar)
        da, db = _pixel_coeffs(self.cam, self.u, self.v, dt)
        dzeta = np.einsum("mnk,nk->mn", da, grad_values) - db
        jac = np.empty_like(res)
        for k, (i, j) in enumerate(self.pairs):
            jac[k] = self.I[i] * dzeta[j] - self.I[j] * dzeta[i]
        jac[~self.valid] = 0.0
        return res, jac

    def cost(self, zbar, grad_values, target, half_inv_nu):
        res, _ = self.residuals(zbar, grad_values)
        return np.sum(res ** 2, axis=0) + half_inv_nu * (zbar - target) ** 2


def _lm_update(obj: _PixelwiseObjective, zbar, grad_values, target, nu, cfg):
    """Vectorized scalar Levenberg-Marquardt over pixels.

    Minimizes sum_pairs (a(zbar).g - b(zbar))^2 + (z + h - zbar)^2 / (2 nu)
    independently in each pixel.  Accepted steps never increase the local
    cost; pixels whose damping saturates keep their previous value.
    """
    half_inv_nu = 0.5 / nu
    z = zbar.copy()
    lam = np.full(z.size, cfg.lm_damping0)
    cost = obj.cost(z, grad_values, target, half_inv_nu)
    accepted = np.zeros(z.size, dtype=bool)
    for _ in range(cfg.lm_max_iter):
        res, jac = obj.residuals(z, grad_values, with_jacobian=True)
        grad = 2.0 * np.sum(res * jac, axis=0) + 2.0 * half_inv_nu * (z - target)
        hess = 2.0 * np.sum(jac ** 2, axis=0) + 2.0 * half_inv_nu
        step = -grad / (hess + lam)
        cand = z + step
        cand_cost = obj.cost(cand, grad_values, target, half_inv_nu)
        better = cand_cost < cost
        z[better] = cand[better]
        cost[better] = cand_cost[better]
        accepted |= better
        lam[better] /= 10.0
        lam[~better] *= 10.0
        if np.all(lam > 1e12) or np.max(np.abs(step)) < 1e-14:
            break
    return z, int(np.count_nonzero(~accepted))


def solve_admm(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
               init: LogDepthMap, cfg: AdmmConfig | None = None,
               discard: np.ndarray | None = None) -> SurfaceEstimate:
    """ADMM on the split problem min |A(zbar) grad(z) - b(zbar)| s.t. z = zbar."""
    cfg = cfg or AdmmConfig()
    mask = stack.mask
    du, dv = gradient_matrices(mask)
    obj = _PixelwiseObjective(stack, rig, cam, discard)
    z = init.values.copy()
    zbar = z.copy()
    h = np.zeros(mask.n)
    nu = cfg.nu0
    stalled_total = 0
    trace = [energy_ratio(stack, rig, cam, LogDepthMap(mask, z), discard)]
    elapsed = [0.0]
    iters = 0
    t_start = time.perf_counter()
    for k in range(cfg.max_outer):
        system = ratio_coefficients(stack, rig, cam, LogDepthMap(mask, zbar), discard)
        M, rhs = _system_matrix(system)
        reg = 0.5 / nu
        A = (M.T @ M + reg * sparse.identity(mask.n)).tocsr()
        b = M.T @ rhs + reg * (zbar - h)
        try:
            z = jacobi_cg(A, b, rtol=cfg.cg_rel, x0=z, maxiter=10 * mask.n)
        except SolverError as exc:
            raise SolverError(f"ADMM iteration {k}: {exc}") from exc
        grad_values = np.stack([du @ z, dv @ z], axis=1)
        zbar_old = zbar
        zbar, stalled = _lm_update(obj, zbar, grad_values, z + h, nu, cfg)
        stalled_total += stalled
        h = h + z - zbar
        trace.append(energy_ratio(stack, rig, cam, LogDepthMap(mask, z), discard))
        elapsed.append(time.perf_counter() - t_start)
        iters = k + 1
        r_norm = float(np.linalg.norm(z - zbar))
        s_norm = float(np.linalg.norm(zbar - zbar_old)) / nu
        if r_norm > cfg.mu_adapt * s_norm:
            nu /= cfg.tau
            h /= cfg.tau
        elif s_norm > cfg.mu_adapt * r_norm:
            nu *= cfg.tau
            h *= cfg.tau
        if abs(trace[-2] - trace[-1]) <= cfg.stop_rel * abs(trace[-2]):
            break
    zmap = LogDepthMap(mask, z)
    return SurfaceEstimate(zmap, None, normal_from_depth(cam, zmap), trace, iters,
                           info={"lm_stalled": stalled_total, "nu_final": nu,
                                 "elapsed_s": elapsed})
