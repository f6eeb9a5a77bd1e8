"""Anisotropic point-light (LED) model: lighting vectors and depth-dependent t-fields.

A source emits Phi(theta) = Phi0 * cos(theta)^mu about its principal direction.
Only the grouped intensity Psi (Phi0 folded together with the camera gain, the
reference albedo and 1/pi) is identifiable from images, so Psi is what a source
stores; all evaluations are linear in it.  For mu = 0 the source is isotropic
and lights the full sphere; for mu > 0 points behind the emission half-space
receive nothing (the cosine is clamped at zero before exponentiation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, backproject

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class LedSource:
    """One LED: position, unit principal direction, anisotropy mu, intensity.

    Exactly one of psi (gray) and psi_rgb (three-channel) must be given.
    """

    position: tuple[float, float, float]
    direction: tuple[float, float, float]
    mu: float
    psi: float | None = None
    psi_rgb: tuple[float, float, float] | None = None

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        nrm = float(np.linalg.norm(d))
        if abs(nrm - 1.0) > _UNIT_TOL:
            raise ValueError(f"principal direction must be unit length, |n_s|={nrm}")
        object.__setattr__(self, "direction", tuple(d / nrm))
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        if self.mu < 0:
            raise ValueError("anisotropy exponent mu must be >= 0")
        if (self.psi is None) == (self.psi_rgb is None):
            raise ValueError("give exactly one of psi and psi_rgb")
        if self.psi is not None and not self.psi > 0:
            raise ValueError("psi must be positive")
        if self.psi_rgb is not None:
            rgb = tuple(float(c) for c in self.psi_rgb)
            if len(rgb) != 3 or any(not c > 0 for c in rgb):
                raise ValueError("psi_rgb must be three positive values")
            object.__setattr__(self, "psi_rgb", rgb)

    @property
    def channels(self) -> int:
        return 1 if self.psi is not None else 3

    @property
    def intensities(self) -> np.ndarray:
        """Per-channel intensity, shape (1,) for gray sources, (3,) for color."""
        if self.psi is not None:
            return np.array([self.psi])
        return np.array(self.psi_rgb)


@dataclass(frozen=True)
class LedRig:
    """An ordered collection of sources sharing the same channel count."""

    sources: tuple[LedSource, ...]

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) < 1:
            raise ValueError("a rig needs at least one source")
        if len({s.channels for s in sources}) != 1:
            raise ValueError("all sources must be gray or all color")
        object.__setattr__(self, "sources", sources)

    @property
    def m(self) -> int:
        return len(self.sources)

    @property
    def channels(self) -> int:
        return self.sources[0].channels

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sources])

    @property
    def directions(self) -> np.ndarray:
        return np.array([s.direction for s in self.sources])

    @property
    def mus(self) -> np.ndarray:
        return np.array([s.mu for s in self.sources])

    @property
    def intensities(self) -> np.ndarray:
        """(m, channels) intensity table."""
        return np.stack([s.intensities for s in self.sources])


def mu_from_half_angle(theta_half: float) -> float:
    """Anisotropy exponent from the manufacturer's half-intensity angle."""
    if not 0 < theta_half < np.pi / 2:
        raise ValueError("half angle must lie in (0, pi/2)")
    return -np.log(2.0) / np.log(np.cos(theta_half))


def _falloff(position, direction, mu, x):
    """Psi-free emission vector {cos}_+^mu * (x_s - x)/r^3 and its behind flag.

    Uses the 0^0 = 1 convention so an isotropic source (mu = 0) lights the full
    sphere independently of its principal direction; the flag still reports
    points outside the emission half-space.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(position) - x
    r = np.linalg.norm(v, axis=-1)
    if np.any(r == 0.0):
        raise ValueError("evaluation point coincides with the source")
    cos_theta = -(v @ np.asarray(direction)) / r
    behind = cos_theta < 0
    aniso = np.power(np.maximum(cos_theta, 0.0), mu)
    vec = aniso[..., None] * v / (r ** 3)[..., None]
    return vec, behind


def lighting_vector(src: LedSource, x, channel: int | None = None):
    """Lighting vector at scene point(s) x plus a behind-source flag.

    For gray sources omit ``channel``; for color sources pass 0, 1 or 2.
    """
    vec, behind = _falloff(src.position, src.direction, src.mu, x)
    if channel is None:
        if src.psi is None:
            raise ValueError("color source: specify a channel")
        scale = src.psi
    else:
        scale = src.intensities[channel]
    return scale * vec, behind


def t_field(src: LedSource, cam: CameraIntrinsics, p, z_tilde, channel: int | None = None):
    """t(z_tilde)(p): the lighting vector at the backprojection of p at depth e^z."""
    z = np.exp(np.asarray(z_tilde, dtype=np.float64))
    return lighting_vector(src, backproject(cam, p, z), channel=channel)


def t_field_rgb(src: LedSource, cam: CameraIntrinsics, p, z_tilde):
    """Per-channel t vectors, shape (3, ..., 3), plus the shared behind flag."""
    vec, behind = _falloff(
        src.position, src.direction, src.mu,
        backproject(cam, p, np.exp(np.asarray(z_tilde, dtype=np.float64))),
    )
    return np.stack([psi * vec for psi in src.intensities]), behind


def rig_t_fields(rig: LedRig, cam: CameraIntrinsics, pixels, z_tilde, unit_intensity=False):
    """t vectors of every source at every pixel: shape (m, n, 3).

    ``pixels`` is an (n, 2) array of principal-point-relative coordinates and
    ``z_tilde`` an (n,) log-depth vector.  With ``unit_intensity`` the Psi
    factors are left out (useful for color work, where t is linear in Psi).
    """
    x = backproject(cam, np.asarray(pixels, dtype=np.float64),
                    np.exp(np.asarray(z_tilde, dtype=np.float64)))
    out = np.empty((rig.m, x.shape[0], 3))
    for i, s in enumerate(rig.sources):
        vec, _ = _falloff(s.position, s.direction, s.mu, x)
        if not unit_intensity:
            vec = (s.psi if s.channels == 1 else 1.0) * vec
        out[i] = vec
    return out


def rig_t_derivatives(rig: LedRig, cam: CameraIntrinsics, pixels, z_tilde,
                      unit_intensity=False):
    """d t / d z_tilde for every source and pixel: shape (m, n, 3).

    Analytic chain rule through v(z) = x_s - e^z * [p/f, 1] and the clamped
    cosine factor; identically zero where the point is behind the source.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    z = np.exp(np.asarray(z_tilde, dtype=np.float64))
    x = backproject(cam, pixels, z)          # (n, 3)
    out = np.empty((rig.m, x.shape[0], 3))
    for i, s in enumerate(rig.sources):
        pos = np.asarray(s.position)
        nsd = np.asarray(s.direction)
        v = pos - x
        r = np.linalg.norm(v, axis=1)
        if np.any(r == 0.0):
            raise ValueError("evaluation point coincides with the source")
        dv = -x                               # dv/dz_tilde
        dr = np.einsum("nk,nk->n", v, dv) / r
        cos = -(v @ nsd) / r
        front = cos > 0
        # product rule on {cos}_+^mu * v / r^3
        aniso = np.power(np.maximum(cos, 0.0), s.mu)
        dcos = (x @ nsd) / r - cos * dr / r
        daniso = np.zeros_like(cos)
        if s.mu > 0:
            base = np.power(np.maximum(cos, 0.0), s.mu - 1.0, where=front,
                            out=np.zeros_like(cos))
            daniso = s.mu * base * dcos * front
        core = v / (r ** 3)[:, None]
        dcore = dv / (r ** 3)[:, None] - 3.0 * v * (dr / r ** 4)[:, None]
        d = daniso[:, None] * core + aniso[:, None] * dcore
        if not unit_intensity:
            d = (s.psi if s.channels == 1 else 1.0) * d
        out[i] = d
    return out
