"""File formats: PFM float images, PGM masks, JSON configs, CSV traces.

All writers go through a write-temp-then-rename step so partial files never
appear under the final name.  PFM files are little-endian (negative scale
token) with the standard bottom-to-top scanline order; masks are binary PGM
(P5, maxval 255) with 0 marking pixels outside the domain.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .calibrate import PlanePoseObservation, ReflectedRayBundle
from .camera import CameraIntrinsics, PixelMask
from .leds import LedRig, LedSource
from .render import ImageStack


def _atomic_write(path, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pfm(path, grid: np.ndarray):
    """Write a (H, W) or (H, W, 3) float array as a little-endian PFM."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim == 2:
        header = b"Pf"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM grids must be (H,W) or (H,W,3), got {grid.shape}")
    h, w = grid.shape[:2]
    payload = np.flipud(grid).astype("<f4").tobytes()
    _atomic_write(path, header + f"\n{w} {h}\n-1.0\n".encode("ascii") + payload)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        header = fh.readline().rstrip()
        if header == b"Pf":
            channels = 1
        elif header == b"PF":
            channels = 3
        else:
            raise ValueError(f"{path}: not a PFM file (header {header!r})")
        w, h = (int(tok) for tok in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        data = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pgm_mask(path, inside: np.ndarray):
    inside = np.asarray(inside, dtype=bool)
    h, w = inside.shape
    payload = np.where(inside, 255, 0).astype(np.uint8).tobytes()
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + payload)


def read_pgm_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(tok) for tok in line.split())
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    return (data.reshape(h, w) > 0)


def save_json(path, obj):
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


_CAMERA_KEYS = {"f", "principal_point", "width", "height"}
_SOURCE_KEYS = {"x_s", "n_s", "mu", "psi", "psi_rgb"}


def camera_from_dict(d: dict) -> CameraIntrinsics:
    unknown = set(d) - _CAMERA_KEYS
    if unknown:
        raise ValueError(f"unknown camera keys: {sorted(unknown)}")
    missing = _CAMERA_KEYS - set(d)
    if missing:
        raise ValueError(f"missing camera keys: {sorted(missing)}")
    return CameraIntrinsics(f=float(d["f"]),
                            principal_point=tuple(float(c) for c in d["principal_point"]),
                            width=int(d["width"]), height=int(d["height"]))


def camera_to_dict(cam: CameraIntrinsics) -> dict:
    return {"f": cam.f, "principal_point": list(cam.principal_point),
            "width": cam.width, "height": cam.height}


def rig_from_dict(d: dict) -> tuple[CameraIntrinsics, LedRig]:
    unknown = set(d) - {"camera", "sources"}
    if unknown:
        raise ValueError(f"unknown rig-config keys: {sorted(unknown)}")
    cam = camera_from_dict(d["camera"])
    sources = []
    for i, s in enumerate(d["sources"]):
        unknown = set(s) - _SOURCE_KEYS
        if unknown:
            raise ValueError(f"source {i}: unknown keys {sorted(unknown)}")
        kwargs = {}
        if "psi" in s:
            kwargs["psi"] = float(s["psi"])
        if "psi_rgb" in s:
            kwargs["psi_rgb"] = tuple(float(c) for c in s["psi_rgb"])
        sources.append(LedSource(position=tuple(float(c) for c in s["x_s"]),
                                 direction=tuple(float(c) for c in s["n_s"]),
                                 mu=float(s["mu"]), **kwargs))
    return cam, LedRig(tuple(sources))


def rig_to_dict(cam: CameraIntrinsics, rig: LedRig) -> dict:
    sources = []
    for s in rig.sources:
        entry = {"x_s": list(s.position), "n_s": list(s.direction), "mu": s.mu}
        if s.psi is not None:
            entry["psi"] = s.psi
        else:
            entry["psi_rgb"] = list(s.psi_rgb)
        sources.append(entry)
    return {"camera": camera_to_dict(cam), "sources": sources}


def load_ray_bundle(path) -> ReflectedRayBundle:
    rays = load_json(path)
    return ReflectedRayBundle(
        origins=np.array([r["origin"] for r in rays], dtype=np.float64),
        directions=np.array([r["direction"] for r in rays], dtype=np.float64))


def save_ray_bundle(path, bundle: ReflectedRayBundle):
    save_json(path, [{"origin": list(map(float, o)), "direction": list(map(float, d))}
                     for o, d in zip(bundle.origins, bundle.directions)])


def load_pose_observations(path) -> list[PlanePoseObservation]:
    doc = load_json(path)
    observations = []
    for pose in doc["poses"]:
        points = np.array([s["x"] for s in pose["samples"]], dtype=np.float64)
        if pose["samples"] and "I_rgb" in pose["samples"][0]:
            inten = np.array([s["I_rgb"] for s in pose["samples"]], dtype=np.float64)
        else:
            inten = np.array([s["I"] for s in pose["samples"]], dtype=np.float64)
        observations.append(PlanePoseObservation(
            normal=np.asarray(pose["normal"], dtype=np.float64),
            points=points, intensities=inten))
    return observations


def save_pose_observations(path, observations):
    poses = []
    for obs in observations:
        samples = []
        for x, inten in zip(obs.points, obs.intensities):
            entry = {"x": [float(c) for c in x]}
            if inten.size == 1:
                entry["I"] = float(inten[0])
            else:
                entry["I_rgb"] = [float(c) for c in inten]
            samples.append(entry)
        poses.append({"normal": [float(c) for c in obs.normal], "samples": samples})
    save_json(path, {"poses": poses})


def write_stack(directory, stack: ImageStack, prefix: str = "img") -> list[str]:
    """One PFM per image (zeros outside the mask); returns the file names."""
    names = []
    for i in range(stack.m):
        if stack.channels == 1:
            grid = stack.mask.to_grid(stack.data[i, :, 0], fill=0.0)
        else:
            grid = stack.mask.to_grid(stack.data[i], fill=0.0)
        name = f"{prefix}_{i:03d}.pfm"
        write_pfm(os.path.join(directory, name), grid)
        names.append(name)
    return names


def read_stack(directory, names, mask: PixelMask) -> ImageStack:
    frames = []
    for name in names:
        grid = read_pfm(os.path.join(directory, name)).astype(np.float64)
        if grid.shape[:2] != mask.inside.shape:
            raise ValueError(f"{name}: image size {grid.shape[:2]} does not match mask")
        if grid.ndim == 2:
            grid = grid[:, :, None]
        frames.append(grid[mask.rows, mask.cols])
    return ImageStack(mask, np.stack(frames))


def write_energy_csv(path, energies, elapsed=None):
    rows = ["iteration,energy,wall_time_s"]
    for k, e in enumerate(energies):
        t = "" if elapsed is None or k >= len(elapsed) else f"{elapsed[k]:.6f}"
        rows.append(f"{k},{e!r},{t}")
    _atomic_write(path, ("\n".join(rows) + "\n").encode())


def read_energy_csv(path):
    with open(path) as fh:
        reader = csv.DictReader(fh)
        return [(int(r["iteration"]), float(r["energy"])) for r in reader]
