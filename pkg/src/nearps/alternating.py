"""Alternating solver: per-pixel inversion with frozen lighting, normal
integration, and global scale estimation by reprojection error.

Each iteration (i) inverts the image model per pixel with the lighting matrix
frozen at the current 3-D shape, (ii) normalizes the result into a normal
field, (iii) integrates the implied log-depth gradient (which determines depth
only up to a global factor), and (iv) recovers the absolute scale by a 1-D
search on the reprojection error.  The classical directional solver is kept as
a baseline.  Self-shadows are neglected; robustness comes from the prefilter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .camera import (CameraIntrinsics, GRAZING_EPS, LogDepthMap, NormalField,
                     backproject, gradient, normal_from_depth)
from .errors import SolverError
from .integrate import GradientField, integrate_least_squares
from .leds import LedRig, rig_t_fields
from .render import ImageStack, prefilter_robust
from .solution import SurfaceEstimate

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class AlternatingConfig:
    """Initial plane depth, iteration cap, and scale-search parameters.

    The scale bracket defaults to (z0/4, 4*z0); the search runs on log-spaced
    golden sections to the given relative tolerance.  ``energy_stop``, when
    set, stops early once the relative energy change drops below it.
    """

    z0: float
    k_max: int = 15
    scale_bracket: tuple[float, float] | None = None
    scale_tol: float = 1e-6
    prefilter: bool = True
    energy_stop: float | None = None

    def __post_init__(self):
        if not self.z0 > 0:
            raise ValueError("z0 must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        lo, hi = self.bracket
        if not 0 < lo < hi:
            raise ValueError(f"bad scale bracket ({lo}, {hi})")

    @property
    def bracket(self) -> tuple[float, float]:
        return self.scale_bracket if self.scale_bracket else (self.z0 / 4, 4 * self.z0)


def classical_ps(stack: ImageStack, S: np.ndarray):
    """Directional photometric stereo: m = pinv(S) I, albedo |m|, normal m/|m|.

    Returns (albedo, normals, valid); pixels with m = 0 get albedo 0, a
    placeholder normal (0,0,-1) and valid = False.
    """
    S = np.asarray(S, dtype=np.float64)
    I = stack.gray()
    if S.shape != (stack.m, 3):
        raise ValueError(f"lighting matrix must be ({stack.m},3), got {S.shape}")
    if np.linalg.matrix_rank(S) < 3:
        raise ValueError("lighting matrix is rank deficient")
    mvec = (np.linalg.pinv(S) @ I).T
    rho = np.linalg.norm(mvec, axis=1)
    valid = rho > 0
    vecs = np.where(valid[:, None], mvec / np.where(valid, rho, 1.0)[:, None],
                    np.array([0.0, 0.0, -1.0]))
    return rho, NormalField(stack.mask, vecs), valid


def invert_frozen_lighting(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                           zmap: LogDepthMap, discard: np.ndarray | None = None,
                           prev: np.ndarray | None = None):
    """Per-pixel least squares m = T(x)^+ I with T frozen at the current depth.

    ``discard`` (m, n) marks excluded observations.  Rank-deficient pixels are
    flagged and keep their previous value (zeros when no previous estimate is
    given).  Returns (mbar (n,3), ok (n,) bool).
    """
    mask = stack.mask
    I = stack.gray()
    u, v = cam.pixel_coords(mask)
    t = rig_t_fields(rig, cam, np.stack([u, v], axis=1), zmap.values)
    w = np.ones((stack.m, mask.n)) if discard is None else (~discard).astype(float)
    if np.any(w.sum(axis=0) < 3):
        raise SolverError("fewer than 3 surviving observations at some pixel")
    A = np.einsum("mni,mnk,mn->nik", t, t, w)
    b = np.einsum("mni,mn,mn->ni", t, w, I)
    eig = np.linalg.eigvalsh(A)
    ok = eig[:, 0] > _RANK_TOL * np.maximum(eig[:, 2], 1e-300)
    mbar = np.zeros((mask.n, 3)) if prev is None else np.array(prev, dtype=np.float64)
    if np.any(ok):
        mbar[ok] = np.linalg.solve(A[ok], b[ok])
    return mbar, ok


def _reprojection_energy(I, t, mbar, keep):
    pred = np.einsum("mnk,nk->mn", t, mbar)
    return float(np.sum(keep * (I - pred) ** 2))


def _scale_energy(stack, rig, cam, pixels, z_shape, mbar, keep):
    """E(w) = reprojection error with depth field w * exp(z_shape)."""
    I = stack.gray()

    def energy(w):
        t = rig_t_fields(rig, cam, pixels, np.log(w) + z_shape)
        return _reprojection_energy(I, t, mbar, keep)

    return energy


def _golden_section(fun, a, b, tol):
    """Golden-section minimizer on [a, b] to absolute tolerance tol."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = (a + b) / 2.0
    return x, fun(x)


def estimate_scale(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                   g: GradientField, mbar: np.ndarray, anchor_pixel,
                   bracket, tol: float = 1e-6,
                   discard: np.ndarray | None = None) -> float:
    """Absolute depth at the anchor pixel by 1-D reprojection-error search.

    Integrates the gradient field (anchored at zero), then minimizes the
    reprojection energy over w in ``bracket`` by golden-section search on
    log w.  Raises if no strictly interior minimum exists.
    """
    z_shape = integrate_least_squares(g, (anchor_pixel, 0.0)).values
    u, v = cam.pixel_coords(g.mask)
    pixels = np.stack([u, v], axis=1)
    keep = 1.0 if discard is None else (~discard).astype(float)
    w, _ = _search_scale(_scale_energy(stack, rig, cam, pixels, z_shape, mbar, keep),
                         bracket, tol)
    return w


def _search_scale(energy, bracket, tol):
    lo, hi = bracket
    f = lambda s: energy(np.exp(s))
    a, b = np.log(lo), np.log(hi)
    fa, fb = f(a), f(b)
    s, fs = _golden_section(f, a, b, tol)
    slack = 1e-12 * (1.0 + min(fa, fb))
    if not (fs < fa - slack and fs < fb - slack):
        raise SolverError(
            "no interior minimum of the reprojection error in the scale "
            f"bracket ({lo:g}, {hi:g}); widen the bracket")
    if min(s - a, b - s) < 3 * tol:
        raise SolverError(
            f"scale minimum sits at the bracket edge ({np.exp(s):g}); "
            "widen the bracket")
    return float(np.exp(s)), fs


def solve_alternating(stack: ImageStack, rig: LedRig, cam: CameraIntrinsics,
                      cfg: AlternatingConfig) -> SurfaceEstimate:
    """Run the alternating scheme from a fronto-parallel plane at depth z0."""
    mask = stack.mask
    u, v = cam.pixel_coords(mask)
    pixels = np.stack([u, v], axis=1)
    if cfg.prefilter:
        discard = prefilter_robust(stack).discarded
        keep = (~discard).astype(float)
    else:
        discard, keep = None, 1.0
    anchor = mask.centroid_pixel()

    z_tilde = np.full(mask.n, np.log(cfg.z0))
    mbar = None
    prev_g = np.zeros((mask.n, 2))
    trace: list[float] = []
    elapsed: list[float] = []
    k_done = 0
    t_start = time.perf_counter()
    for k in range(cfg.k_max):
        zmap = LogDepthMap(mask, z_tilde)
        mbar, ok = invert_frozen_lighting(stack, rig, cam, zmap,
                                          discard=discard, prev=mbar)
        norms = np.linalg.norm(mbar, axis=1)
        nz = norms > 0
        nvec = np.zeros_like(mbar)
        nvec[nz] = mbar[nz] / norms[nz, None]
        denom = u * nvec[:, 0] + v * nvec[:, 1] + cam.f * nvec[:, 2]
        valid = ok & nz & (np.abs(denom) >= GRAZING_EPS)
        g = prev_g.copy()
        g[valid] = -nvec[valid, :2] / denom[valid, None]
        prev_g = g
        z_shape = integrate_least_squares(GradientField(mask, g), (anchor, 0.0)).values
        try:
            w, energy = _search_scale(
                _scale_energy(stack, rig, cam, pixels, z_shape, mbar, keep),
                cfg.bracket, cfg.scale_tol)
        except SolverError as exc:
            raise SolverError(f"iteration {k}: {exc}") from exc
        z_tilde = np.log(w) + z_shape
        trace.append(energy)
        elapsed.append(time.perf_counter() - t_start)
        k_done = k + 1
        if (cfg.energy_stop is not None and k >= 1
                and abs(trace[-2] - trace[-1]) <= cfg.energy_stop * abs(trace[-2])):
            break

    zmap = LogDepthMap(mask, z_tilde)
    if mbar is None:
        albedo = np.zeros(mask.n)
        normals = normal_from_depth(cam, zmap)
    else:
        albedo = np.linalg.norm(mbar, axis=1)
        nz = albedo > 0
        vecs = np.where(nz[:, None], mbar / np.where(nz, albedo, 1.0)[:, None],
                        normal_from_depth(cam, zmap).vectors)
        normals = NormalField(mask, vecs)
    return SurfaceEstimate(zmap, albedo, normals, trace, k_done,
                           info={"elapsed_s": elapsed})
