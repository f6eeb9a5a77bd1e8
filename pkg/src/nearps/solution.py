"""Common output type for the reconstruction solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import LogDepthMap, NormalField


@dataclass(frozen=True)
class SurfaceEstimate:
    """Joint depth/albedo/normal estimate with per-iteration diagnostics.

    ``albedo`` is None for methods that do not estimate it (the image-ratio
    solvers); otherwise it has shape (n,) or (n, 3).
    """

    zmap: LogDepthMap
    albedo: np.ndarray | None
    normals: NormalField
    energy_trace: list[float]
    iterations: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        trace = [float(e) for e in self.energy_trace]
        if not np.all(np.isfinite(trace)):
            raise ValueError("energy trace must be finite")
        object.__setattr__(self, "energy_trace", trace)
        if self.albedo is not None:
            albedo = np.asarray(self.albedo, dtype=np.float64)
            if np.any(albedo < 0):
                raise ValueError("albedo must be nonnegative")
            object.__setattr__(self, "albedo", albedo)
