"""LED calibration: position by ray triangulation, then direction and intensity
from Lambertian-plane observations.

The position stage consumes reflected rays (one 3-D line per mirror-sphere
pose, each passing through the source).  The photometric stage consumes plane
poses with known normals and sample points, and solves the linearized
least-squares problem in m_s = Psi^(1/mu) * n_s; for color images the three
channels are solved independently and the direction estimates fused by an
intensity-weighted mean in spherical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError

_RANK_TOL = 1e-9
CHANNEL_NAMES = ("R", "G", "B")


@dataclass(frozen=True)
class ReflectedRayBundle:
    """Lines in camera frame, each passing through the source position."""

    origins: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        origins = np.array(self.origins, dtype=np.float64)
        directions = np.array(self.directions, dtype=np.float64)
        if origins.ndim != 2 or origins.shape[1] != 3 or origins.shape != directions.shape:
            raise ValueError("origins and directions must both be (k, 3)")
        if origins.shape[0] < 2:
            raise ValueError("need at least two rays")
        norms = np.linalg.norm(directions, axis=1)
        if np.any(norms == 0):
            raise ValueError("ray directions must be nonzero")
        directions = directions / norms[:, None]
        origins.setflags(write=False)
        directions.setflags(write=False)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "directions", directions)


@dataclass(frozen=True)
class PlanePoseObservation:
    """One pose of the Lambertian plane: its normal plus (point, intensity) samples."""

    normal: np.ndarray
    points: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        normal = np.array(self.normal, dtype=np.float64)
        points = np.array(self.points, dtype=np.float64)
        intensities = np.array(self.intensities, dtype=np.float64)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
            raise ValueError("pose normal must be unit length")
        normal /= np.linalg.norm(normal)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must be (k, 3)")
        if intensities.ndim == 1:
            intensities = intensities[:, None]
        if intensities.shape[0] != points.shape[0] or intensities.shape[1] not in (1, 3):
            raise ValueError("intensities must be (k,) or (k, 3)")
        if np.any(intensities < 0):
            raise ValueError("intensities must be nonnegative")
        for a in (normal, points, intensities):
            a.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "intensities", intensities)

    @property
    def channels(self) -> int:
        return self.intensities.shape[1]


def triangulate_source(bundle: ReflectedRayBundle) -> tuple[np.ndarray, float]:
    """Least-squares point closest to all rays, plus the RMS point-to-line distance."""
    d = bundle.directions
    o = bundle.origins
    # sum of projectors I - d d^T
    proj = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    A = proj.sum(axis=0)
    b = np.einsum("kij,kj->i", proj, o)
    w = np.linalg.eigvalsh(A)
    if w[0] < _RANK_TOL * max(w[-1], 1.0):
        raise CalibrationError("rays are parallel: triangulation is rank deficient")
    x = np.linalg.solve(A, b)
    resid = np.einsum("kij,kj->ki", proj, x[None] - o)
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return x, rms


def _shading(points: np.ndarray, normal: np.ndarray, x_s: np.ndarray) -> np.ndarray:
    """(x_s - x^j) . n^j for every sample of a pose."""
    return (x_s[None] - points) @ normal


def calibrate_isotropic(observations, x_s) -> float:
    """Closed-form Psi for an isotropic (mu = 0) source from plane observations."""
    x_s = np.asarray(x_s, dtype=np.float64)
    num = 0.0
    den = 0.0
    for obs in observations:
        if obs.channels != 1:
            raise CalibrationError("isotropic calibration expects gray intensities")
        dot = _shading(obs.points, obs.normal, x_s)
        r = np.linalg.norm(x_s[None] - obs.points, axis=1)
        s = np.maximum(dot, 0.0) / r ** 3
        num += float(obs.intensities[:, 0] @ s)
        den += float(s @ s)
    if den == 0.0:
        raise CalibrationError("all samples are self-shadowed")
    return num / den


def _anisotropic_system(observations, x_s, mu, channel):
    """Rows (x^j - x_s) and transformed intensities for the m_s least squares.

    Samples with nonpositive shading or zero intensity are dropped: the 1/mu
    power transform is undefined there.
    """
    lhs = []
    rhs = []
    for obs in observations:
        dot = _shading(obs.points, obs.normal, x_s)
        inten = obs.intensities[:, channel]
        keep = (dot > 0) & (inten > 0)
        if not np.any(keep):
            continue
        pts = obs.points[keep]
        r = np.linalg.norm(np.asarray(x_s)[None] - pts, axis=1)
        lhs.append(pts - np.asarray(x_s)[None])
        rhs.append((inten[keep] * r ** (3.0 + mu) / dot[keep]) ** (1.0 / mu))
    if not lhs:
        raise CalibrationError("no usable samples (all self-shadowed or dark)")
    return np.concatenate(lhs), np.concatenate(rhs)


def calibrate_anisotropic(observations, x_s, mu) -> tuple[np.ndarray, float]:
    """(n_s, Psi) of an anisotropic source from plane observations.

    Solves the linear least squares for m_s = Psi^(1/mu) n_s, then splits it
    into the unit direction and the intensity |m_s|^mu.
    """
    if not mu > 0:
        raise ValueError("anisotropic calibration needs mu > 0")
    lhs, rhs = _anisotropic_system(observations, x_s, mu, channel=0)
    m_s, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < 3:
        raise CalibrationError("degenerate pose geometry: design matrix rank < 3")
    norm = np.linalg.norm(m_s)
    if norm == 0.0:
        raise CalibrationError("estimated m_s is zero")
    return m_s / norm, float(norm ** mu)


@dataclass(frozen=True)
class RgbCalibration:
    """Per-channel direction/intensity estimates and the fused direction."""

    directions: np.ndarray    # (3, 3): one unit direction per channel
    psis: np.ndarray          # (3,): Psi_R, Psi_G, Psi_B
    fused_direction: np.ndarray


def calibrate_rgb(observations, x_s, mu) -> RgbCalibration:
    """Three independent channel solves plus a weighted spherical-mean fusion.

    The weights are the per-channel intensities (brighter channels carry more
    signal); azimuths are averaged circularly, elevations linearly.
    """
    directions = np.empty((3, 3))
    psis = np.empty(3)
    for c in range(3):
        try:
            directions[c], psis[c] = _calibrate_channel(observations, x_s, mu, c)
        except CalibrationError as exc:
            raise CalibrationError(f"channel {CHANNEL_NAMES[c]}: {exc}") from exc
    az = np.arctan2(directions[:, 1], directions[:, 0])
    el = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
    w = psis / psis.sum()
    az_mean = np.arctan2(w @ np.sin(az), w @ np.cos(az))
    el_mean = w @ el
    fused = np.array([
        np.cos(el_mean) * np.cos(az_mean),
        np.cos(el_mean) * np.sin(az_mean),
        np.sin(el_mean),
    ])
    fused /= np.linalg.norm(fused)
    return RgbCalibration(directions, psis, fused)


def _calibrate_channel(observations, x_s, mu, channel):
    if not mu > 0:
        raise ValueError("anisotropic calibration needs mu > 0")
    for obs in observations:
        if obs.channels != 3:
            raise CalibrationError("color calibration expects 3-channel intensities")
    lhs, rhs = _anisotropic_system(observations, x_s, mu, channel)
    m_s, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < 3:
        raise CalibrationError("degenerate pose geometry: design matrix rank < 3")
    norm = np.linalg.norm(m_s)
    if norm == 0.0:
        raise CalibrationError("estimated m_s is zero")
    return m_s / norm, float(norm ** mu)
