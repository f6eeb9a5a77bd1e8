"""Forward image formation under the nearby-LED model, plus robust prefiltering.

Rendered intensities follow
    I_i(p) = Psi_i * albedo(p) * {cos theta_i}_+^mu_i * {(x_s_i - x) . n(p)}_+ / |x_s_i - x|^3
with normals derived from the depth map by the package's own discrete gradient,
so solver round-trips are consistent with the discretization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .camera import (CameraIntrinsics, LogDepthMap, NormalField, PixelMask,
                     backproject, normal_from_depth)
from .leds import LedRig, _falloff


@dataclass(frozen=True)
class ImageStack:
    """m corrected-intensity images over a mask; data has shape (m, n, channels)."""

    mask: PixelMask
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1] != self.mask.n or data.shape[2] not in (1, 3):
            raise ValueError(
                f"expected (m, {self.mask.n}, 1 or 3) data, got {data.shape}"
            )
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("intensities must be finite and nonnegative")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def gray(self) -> np.ndarray:
        """(m, n) view of a single-channel stack."""
        if self.channels != 1:
            raise ValueError("stack has 3 channels")
        return self.data[:, :, 0]


@dataclass(frozen=True)
class SceneTruth:
    """Ground-truth depth and albedo, with an optional normal override."""

    zmap: LogDepthMap
    albedo: np.ndarray
    normals: NormalField | None = None

    def __post_init__(self):
        albedo = np.array(self.albedo, dtype=np.float64)
        if albedo.ndim == 1:
            albedo = albedo[:, None]
        if albedo.shape[0] != self.zmap.mask.n or albedo.shape[1] not in (1, 3):
            raise ValueError(f"bad albedo shape {albedo.shape}")
        if np.any(albedo < 0):
            raise ValueError("albedo must be nonnegative")
        albedo.setflags(write=False)
        object.__setattr__(self, "albedo", albedo)

    @property
    def channels(self) -> int:
        return self.albedo.shape[1]


def render(scene: SceneTruth, rig: LedRig, cam: CameraIntrinsics) -> ImageStack:
    """Synthesize the m corrected-intensity images of a scene under a rig."""
    mask = scene.zmap.mask
    if scene.channels not in (1, rig.channels) and rig.channels not in (1, scene.channels):
        raise ValueError("albedo channels and rig channels are incompatible")
    channels = max(scene.channels, rig.channels)
    nf = scene.normals if scene.normals is not None else normal_from_depth(cam, scene.zmap)
    u, v = cam.pixel_coords(mask)
    x = backproject(cam, np.stack([u, v], axis=1), scene.zmap.depth)

    data = np.empty((rig.m, mask.n, channels))
    for i, s in enumerate(rig.sources):
        pos = np.asarray(s.position)
        dist = np.linalg.norm(pos - x, axis=1)
        if np.any(dist == 0.0):
            j = int(np.argmin(dist))
            r, c = mask.rows[j], mask.cols[j]
            raise ValueError(f"source {i} coincides with surface point at pixel ({r},{c})")
        vec, _ = _falloff(s.position, s.direction, s.mu, x)
        shading = np.maximum(np.einsum("nk,nk->n", vec, nf.vectors), 0.0)
        psi = s.intensities if rig.channels == channels else np.full(channels, s.intensities[0])
        data[i] = psi[None, :] * scene.albedo * shading[:, None]
    return ImageStack(mask, data)


def render_noisy(scene: SceneTruth, rig: LedRig, cam: CameraIntrinsics,
                 noise_sigma: float, seed: int) -> ImageStack:
    """Rendering plus i.i.d. zero-mean Gaussian noise, clamped at zero."""
    if noise_sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    clean = render(scene, rig, cam)
    if noise_sigma == 0:
        return clean
    rng = np.random.default_rng(seed)
    noisy = clean.data + rng.normal(0.0, noise_sigma, size=clean.data.shape)
    return ImageStack(clean.mask, np.maximum(noisy, 0.0))


def correct_gray_levels(raw: ImageStack, cam: CameraIntrinsics) -> ImageStack:
    """Undo the cos^4(alpha) off-axis darkening: I = J / cos^4(alpha)."""
    u, v = cam.pixel_coords(raw.mask)
    cos_alpha = cam.f / np.sqrt(u * u + v * v + cam.f * cam.f)
    return ImageStack(raw.mask, raw.data / (cos_alpha ** 4)[None, :, None])


def uncorrect_gray_levels(corrected: ImageStack, cam: CameraIntrinsics) -> ImageStack:
    """Inverse of :func:`correct_gray_levels` (multiply back by cos^4(alpha))."""
    u, v = cam.pixel_coords(corrected.mask)
    cos_alpha = cam.f / np.sqrt(u * u + v * v + cam.f * cam.f)
    return ImageStack(corrected.mask, corrected.data * (cos_alpha ** 4)[None, :, None])


class PrefilterResult(NamedTuple):
    stack: ImageStack
    discarded: np.ndarray  # (m, n) bool, True where an observation is excluded


def prefilter_robust(stack: ImageStack) -> PrefilterResult:
    """Mark, per pixel, the highest and the two lowest gray levels as excluded.

    The highest value may be a specular highlight and the lowest two shadows.
    Ties go to the lowest image index: the maximum is picked first, then the
    two smallest among the remaining images.  Requires a single-channel stack
    with m >= 4 so at least one observation survives (m - 3 >= 3 is needed for
    per-pixel well-posedness in the solvers that invert three unknowns).
    """
    if stack.channels != 1:
        raise ValueError("prefilter operates on single-channel stacks")
    m, n = stack.m, stack.mask.n
    if m < 4:
        raise ValueError(f"prefilter needs m >= 4 images, got {m}")
    values = stack.gray()
    discarded = np.zeros((m, n), dtype=bool)
    cols = np.arange(n)
    i_max = np.argmax(values, axis=0)
    discarded[i_max, cols] = True
    masked = values.copy()
    masked[i_max, cols] = np.inf
    order = np.argsort(masked, axis=0, kind="stable")
    discarded[order[0], cols] = True
    discarded[order[1], cols] = True
    return PrefilterResult(stack, discarded)
