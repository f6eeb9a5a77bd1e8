"""Alternating reweighted least-squares for joint log-depth and albedo estimation.

The image model is written per pixel as I_i = rho_tilde * {zeta_i}_+ with the
shading scalar

    zeta_i(z) = [Q(p) t_i(z)(p)] . [grad(z)(p); -1],

where rho_tilde absorbs the normal-length coefficient so the residual is
linear in it.  Each outer iteration minimizes a reweighted quadratic surrogate:
a closed-form per-pixel albedo update (an exact majorize-minimize step, so the
energy never increases there), then one Gauss-Newton step on the depth with the
weights lagged.  The estimator phi and the self-shadow operator are pluggable;
with the Cauchy estimator and the positive-part operator the scheme is robust
to shadows and outliers.  RGB stacks contribute three residual blocks per
source to the depth step while each channel's albedo is updated independently.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .camera import CameraIntrinsics, LogDepthMap, PixelMask, gradient_matrices, \
    normal_from_depth
from .errors import SolverError
from .estimators import LeastSquares, ShadowOperator, weight
from .integrate import jacobi_cg
from .leds import LedRig, rig_t_derivatives, rig_t_fields
from .render import ImageStack
from .solution import SurfaceEstimate


@dataclass(frozen=True)
class ArlsConfig:
    """Estimator, shadow handling, initialization, and stopping parameters."""

    z0: float
    estimator: object = field(default_factory=LeastSquares)
    shadow: ShadowOperator = field(default_factory=ShadowOperator)
    rho0: float | None = None
    stop_rel: float = 1e-3
    cg_rel: float = 1e-4
    max_outer: int = 50

    def __post_init__(self):
        if not self.z0 > 0:
            raise ValueError("z0 must be positive")
        if not (self.stop_rel > 0 and self.cg_rel > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


class _Geometry:
    """Mask-dependent arrays reused across iterations."""

    def __init__(self, mask: PixelMask, cam: CameraIntrinsics):
        self.mask = mask
        self.cam = cam
        self.u, self.v = cam.pixel_coords(mask)
        self.pixels = np.stack([self.u, self.v], axis=1)
        self.du, self.dv = gradient_matrices(mask)
        self.right = mask.neighbor_index(0, 1)
        self.down = mask.neighbor_index(1, 0)
        self.has_right = self.right >= 0
        self.has_down = self.down >= 0

    def grad(self, z):
        return np.stack([self.du @ z, self.dv @ z], axis=1)

    def normal_coefficient(self, z):
        """d(z) = sqrt(f^2 |g|^2 + (1 + p.g)^2), the normal-length factor."""
        g = self.grad(z)
        return np.sqrt(self.cam.f ** 2 * (g[:, 0] ** 2 + g[:, 1] ** 2)
                       + (1.0 + self.u * g[:, 0] + self.v * g[:, 1]) ** 2)


def _shading_pieces(geom: _Geometry, rig: LedRig, z, g):
    """Unit-intensity (qt_u, qt_v, t3, zeta) arrays, each (m, n)."""
    t = rig_t_fields(rig, geom.cam, geom.pixels, z, unit_intensity=True)
    qtu = geom.cam.f * t[:, :, 0] - t[:, :, 2] * geom.u[None, :]
    qtv = geom.cam.f * t[:, :, 1] - t[:, :, 2] * geom.v[None, :]
    t3 = t[:, :, 2]
    zeta_unit = qtu * g[:, 0][None, :] + qtv * g[:, 1][None, :] - t3
    return qtu, qtv, zeta_unit


def _shading_rate_pieces(geom: _Geometry, rig: LedRig, z, g):
    """d/dz counterparts of the shading pieces (pointwise part only)."""
    dt = rig_t_derivatives(rig, geom.cam, geom.pixels, z, unit_intensity=True)
    dqtu = geom.cam.f * dt[:, :, 0] - dt[:, :, 2] * geom.u[None, :]
    dqtv = geom.cam.f * dt[:, :, 1] - dt[:, :, 2] * geom.v[None, :]
    alpha = dqtu * g[:, 0][None, :] + dqtv * g[:, 1][None, :] - dt[:, :, 2]
    return alpha


def zeta(rig: LedRig, cam: CameraIntrinsics, mask: PixelMask, z_tilde,
         channel: int | None = None) -> np.ndarray:
    """Shading scalars zeta_i(p) of every source at every pixel, shape (m, n)."""
    geom = _Geometry(mask, cam)
    z = np.asarray(z_tilde, dtype=np.float64)
    _, _, zeta_unit = _shading_pieces(geom, rig, z, geom.grad(z))
    psi = rig.intensities[:, 0 if channel is None else channel]
    return psi[:, None] * zeta_unit


def _channel_scale(rig: LedRig, channels: int) -> np.ndarray:
    """(channels, m) table of per-channel source intensities."""
    psi = rig.intensities
    if psi.shape[1] == channels:
        return psi.T
    if psi.shape[1] == 1:
        return np.repeat(psi.T, channels, axis=0)
    raise ValueError("rig channel count does not match the image stack")


def energy_arls(est, shadow: ShadowOperator, rho, zeta_values, images) -> float:
    """Robust energy sum(phi(rho * {zeta}_+ - I)) over channels, sources, pixels."""
    r = rho[:, None, :] * shadow.apply(zeta_values) - images
    return float(np.sum(est.phi(r)))


def update_albedo(rho_prev, zeta_plus, images, weights) -> np.ndarray:
    """Closed-form weighted albedo update; pixels with zero curvature keep
    their previous value (the minimal-distance solution)."""
    num = np.sum(weights * zeta_plus * images, axis=1)
    den = np.sum(weights * zeta_plus ** 2, axis=1)
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), rho_prev)


def assemble_depth_system(geom: _Geometry, rig: LedRig, z, rho, weights, images,
                          shadow: ShadowOperator):
    """Gauss-Newton Jacobian J and weighted residual of the depth subproblem.

    Row (channel, source, pixel) of J is sqrt(w) * rho * chi(zeta) * d(zeta)/dz;
    d(zeta)/dz couples the pixel itself (through t) and its forward-difference
    stencil (through grad z).  Returns (J, sqrt(w) * residual).
    """
    channels = rho.shape[0]
    g = geom.grad(z)
    qtu, qtv, zeta_unit = _shading_pieces(geom, rig, z, g)
    alpha_unit = _shading_rate_pieces(geom, rig, z, g)
    scale = _channel_scale(rig, channels)          # (c, m)
    zeta_values = scale[:, :, None] * zeta_unit[None]
    qtu_c = scale[:, :, None] * qtu[None]
    qtv_c = scale[:, :, None] * qtv[None]
    alpha_c = scale[:, :, None] * alpha_unit[None]

    res = rho[:, None, :] * shadow.apply(zeta_values) - images
    sqrt_w = np.sqrt(weights)
    s = sqrt_w * rho[:, None, :] * shadow.chi(zeta_values)   # (c, m, n)

    n = geom.mask.n
    blocks = channels * rig.m
    rows = (np.arange(blocks)[:, None] * n + np.arange(n)[None, :]).ravel()
    diag = (s * (alpha_c
                 - qtu_c * geom.has_right[None, None, :]
                 - qtv_c * geom.has_down[None, None, :])).reshape(blocks, n)
    data = [diag.ravel()]
    row_ids = [rows]
    col_ids = [np.tile(np.arange(n), blocks)]
    for has, nb, coeff in ((geom.has_right, geom.right, qtu_c),
                           (geom.has_down, geom.down, qtv_c)):
        vals = (s * coeff).reshape(blocks, n)[:, has]
        data.append(vals.ravel())
        row_ids.append(rows.reshape(blocks, n)[:, has].ravel())
        col_ids.append(np.tile(nb[has], blocks))
    J = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(row_ids), np.concatenate(col_ids))),
        shape=(blocks * n, n)).tocsr()
    return J, (sqrt_w * res).reshape(blocks * n)


def update_depth(geom: _Geometry, rig: LedRig, z, rho, weights, images,
                 shadow: ShadowOperator, cg_rel: float) -> np.ndarray:
    """One Gauss-Newton step: solve J^T J delta = -J^T r_w by CG from zero."""
    J, wres = assemble_depth_system(geom, rig, z, rho, weights, images, shadow)
    H = (J.T @ J).tocsr()
    grad = J.T @ wres
    try:
        delta = jacobi_cg(H, -grad, rtol=cg_rel, maxiter=10 * geom.mask.n)
    except SolverError as exc:
        raise SolverError(f"depth step: {exc}") from exc
    return delta


def _initial_albedo(cfg: ArlsConfig, images, zeta_values) -> np.ndarray:
    channels, _, n = images.shape
    if cfg.rho0 is not None:
        return np.full((channels, n), float(cfg.rho0))
    zp = np.maximum(zeta_values, 0.0)
    denom = zp.mean(axis=(1, 2))
    denom = np.where(denom > 0, denom, 1.0)
    return np.repeat((images.mean(axis=(1, 2)) / denom)[:, None], n, axis=1)


def solve_arls(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
               cfg: ArlsConfig) -> SurfaceEstimate:
    """Run ARLS from a fronto-parallel plane with constant albedo.

    Works for single-channel and RGB stacks alike; with three channels the
    depth step uses all 3m residual blocks and each colored albedo is updated
    independently.  The recovered output albedo is rho_tilde * d(z).
    """
    mask = stack.mask
    if stack.channels == 3 and rig.channels != 3:
        raise ValueError("RGB stacks need per-channel source intensities")
    geom = _Geometry(mask, cam)
    est, shadow = cfg.estimator, cfg.shadow
    images = np.moveaxis(stack.data, 2, 0)         # (c, m, n)
    channels = images.shape[0]
    scale = _channel_scale(rig, channels)

    z = np.full(mask.n, np.log(cfg.z0))
    _, _, zeta_unit = _shading_pieces(geom, rig, z, geom.grad(z))
    zeta_values = scale[:, :, None] * zeta_unit[None]
    rho = _initial_albedo(cfg, images, zeta_values)

    trace = [energy_arls(est, shadow, rho, zeta_values, images)]
    elapsed = [0.0]
    albedo_updates = []
    iters = 0
    t_start = time.perf_counter()
    for k in range(cfg.max_outer):
        zp = shadow.apply(zeta_values)
        w = weight(est, rho[:, None, :] * zp - images)
        rho = update_albedo(rho, zp, images, w)
        albedo_updates.append(
            (trace[-1], energy_arls(est, shadow, rho, zeta_values, images)))
        w = weight(est, rho[:, None, :] * zp - images)
        delta = update_depth(geom, rig, z, rho, w, images, shadow, cfg.cg_rel)
        z = z + delta
        _, _, zeta_unit = _shading_pieces(geom, rig, z, geom.grad(z))
        zeta_values = scale[:, :, None] * zeta_unit[None]
        trace.append(energy_arls(est, shadow, rho, zeta_values, images))
        elapsed.append(time.perf_counter() - t_start)
        iters = k + 1
        if abs(trace[-2] - trace[-1]) <= cfg.stop_rel * abs(trace[-2]):
            break

    zmap = LogDepthMap(mask, z)
    d = geom.normal_coefficient(z)
    albedo = (rho * d[None, :]).T
    if channels == 1:
        albedo = albedo[:, 0]
    return SurfaceEstimate(zmap, np.maximum(albedo, 0.0),
                           normal_from_depth(cam, zmap), trace, iters,
                           info={"albedo_updates": albedo_updates,
                                 "elapsed_s": elapsed})


def solve_arls_rgb(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                   cfg: ArlsConfig) -> SurfaceEstimate:
    """ARLS on a 3-channel stack (thin wrapper enforcing the channel count)."""
    if stack.channels != 3:
        raise ValueError("solve_arls_rgb expects a 3-channel stack")
    return solve_arls(stack, rig, cam, cfg)
