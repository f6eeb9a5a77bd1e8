"""Depth-map evaluation: point-to-point distances between backprojected surfaces."""

from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics, LogDepthMap


def point_distances(estimate: LogDepthMap, truth: LogDepthMap,
                    cam: CameraIntrinsics) -> np.ndarray:
    """Per-pixel Euclidean distance between the two backprojected 3-D points.

    Both maps must share the same mask; at a pixel p the points differ only
    along the ray, so the distance is |z_est - z_true| * |p_bar| / f.
    """
    if not np.array_equal(estimate.mask.inside, truth.mask.inside):
        raise ValueError("estimate and truth masks differ")
    u, v = cam.pixel_coords(estimate.mask)
    ray_len = np.sqrt(u * u + v * v + cam.f * cam.f) / cam.f
    return np.abs(estimate.depth - truth.depth) * ray_len


def summarize(distances: np.ndarray) -> dict:
    return {
        "median": float(np.median(distances)),
        "mean": float(np.mean(distances)),
        "rmse": float(np.sqrt(np.mean(distances ** 2))),
    }


def histogram(distances: np.ndarray, bin_width: float = 0.1):
    """(bin_edges, counts) with fixed-width bins from zero past the maximum."""
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    top = max(float(distances.max()), bin_width)
    edges = np.arange(0.0, top + bin_width, bin_width)
    counts, edges = np.histogram(distances, bins=edges)
    return edges, counts


def relative_depth_rmse(estimate: LogDepthMap, truth: LogDepthMap) -> float:
    """RMS depth error divided by the RMS true depth (dimensionless)."""
    if not np.array_equal(estimate.mask.inside, truth.mask.inside):
        raise ValueError("estimate and truth masks differ")
    err = estimate.depth - truth.depth
    return float(np.sqrt(np.mean(err ** 2)) / np.sqrt(np.mean(truth.depth ** 2)))
