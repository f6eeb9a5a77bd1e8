"""Built-in synthetic scenes and the desk-scale test rig.

The standard benchmark is a radius-80 hemisphere bulging toward the camera
out of a fronto-parallel plane at depth 700 (scene units, think mm), seen
through a 64x64 mask, lit by 8 LEDs on a radius-300 ring in the camera plane,
each aimed at the scene center, with mu = 1 and Psi = 1e6.  The albedo is a
two-level checker (0.5 / 1.0) in 8-pixel blocks.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics, LogDepthMap, PixelMask
from .leds import LedRig, LedSource
from .render import SceneTruth


def default_camera(size: int = 64, f: float = 200.0) -> CameraIntrinsics:
    c = (size - 1) / 2.0
    return CameraIntrinsics(f=f, principal_point=(c, c), width=size, height=size)


def ring_rig(m: int = 8, radius: float = 300.0, aim=(0.0, 0.0, 700.0),
             mu: float = 1.0, psi: float = 1e6,
             psi_rgb: tuple[float, float, float] | None = None) -> LedRig:
    """m LEDs on a ring of the given radius in the camera plane, aimed at one point."""
    sources = []
    aim = np.asarray(aim, dtype=np.float64)
    for i in range(m):
        angle = 2.0 * np.pi * i / m
        pos = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.0])
        direction = aim - pos
        direction /= np.linalg.norm(direction)
        if psi_rgb is None:
            sources.append(LedSource(tuple(pos), tuple(direction), mu, psi=psi))
        else:
            sources.append(LedSource(tuple(pos), tuple(direction), mu,
                                     psi_rgb=psi_rgb))
    return LedRig(tuple(sources))


def checker_albedo(mask: PixelMask, levels=(0.5, 1.0), block: int = 8) -> np.ndarray:
    parity = (mask.rows // block + mask.cols // block) % 2
    return np.where(parity == 0, levels[0], levels[1]).astype(np.float64)


def plane_depth(cam: CameraIntrinsics, mask: PixelMask, z0: float) -> LogDepthMap:
    return LogDepthMap.from_depth(mask, np.full(mask.n, float(z0)))


def hemisphere_depth(cam: CameraIntrinsics, mask: PixelMask, z0: float,
                     radius: float) -> LogDepthMap:
    """Depth along each pixel ray: the near side of a sphere centered at
    (0, 0, z0) where the ray hits it, the plane z = z0 elsewhere."""
    if not 0 < radius < z0:
        raise ValueError("need 0 < radius < z0")
    u, v = cam.pixel_coords(mask)
    s = np.stack([u / cam.f, v / cam.f, np.ones(mask.n)], axis=1)
    s2 = np.sum(s * s, axis=1)
    sc = z0 * s[:, 2]
    disc = sc ** 2 - s2 * (z0 ** 2 - radius ** 2)
    hit = disc > 0
    z = np.full(mask.n, float(z0))
    z[hit] = (sc[hit] - np.sqrt(disc[hit])) / s2[hit]
    return LogDepthMap.from_depth(mask, z)


def make_scene(name: str, cam: CameraIntrinsics, z0: float = 700.0,
               radius: float = 80.0, albedo: str = "checker",
               albedo_levels=(0.5, 1.0), channels: int = 1) -> SceneTruth:
    """Built-in scene by name: 'plane' or 'hemisphere'."""
    mask = PixelMask.full(cam.height, cam.width)
    if name == "plane":
        zmap = plane_depth(cam, mask, z0)
    elif name == "hemisphere":
        zmap = hemisphere_depth(cam, mask, z0, radius)
    else:
        raise ValueError(f"unknown scene {name!r}")
    if albedo == "uniform":
        rho = np.ones(mask.n)
    elif albedo == "checker":
        rho = checker_albedo(mask, albedo_levels)
    else:
        raise ValueError(f"unknown albedo pattern {albedo!r}")
    if channels == 3:
        # offset checker phases so the three channels differ
        rho = np.stack([rho,
                        checker_albedo(mask, albedo_levels, block=5),
                        checker_albedo(mask, (albedo_levels[1], albedo_levels[0]))],
                       axis=1)
    return SceneTruth(zmap, rho)
