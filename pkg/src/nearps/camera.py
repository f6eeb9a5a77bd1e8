"""Perspective camera model, pixel masks, discrete gradients, and depth/normal conversions.

Conventions used throughout the package:

* The camera sits at the origin and looks along +z; scene depths are positive.
* Pixel coordinates (u, v) are relative to the principal point: the grid pixel
  at (row, col) has u = col - u0 and v = row - v0, with u parallel to x and
  v parallel to y.  The focal length f is in pixel units.
* A surface facing the camera has outgoing unit normals with n3 < 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DegenerateGeometryError

# |p_bar . n| below this means the surface is seen edge-on and the log-depth
# gradient is undefined there.
GRAZING_EPS = 1e-9


def _readonly(a, dtype=None):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal length (pixels), principal point, image size."""

    f: float
    principal_point: tuple[float, float]
    width: int
    height: int

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        u0, v0 = self.principal_point
        if not (0 <= u0 < self.width and 0 <= v0 < self.height):
            raise ValueError(
                f"principal point {self.principal_point} outside image "
                f"[0,{self.width})x[0,{self.height})"
            )

    def pixel_coords(self, mask: "PixelMask") -> tuple[np.ndarray, np.ndarray]:
        """(u, v) coordinates of the mask's member pixels, principal-point relative."""
        u0, v0 = self.principal_point
        return mask.cols - u0, mask.rows - v0


@dataclass(frozen=True)
class PixelMask:
    """Boolean reconstruction domain with a dense index over member pixels.

    Member pixels are enumerated in row-major order; ``flat_index`` maps grid
    positions to that dense index (-1 outside the domain).
    """

    inside: np.ndarray
    rows: np.ndarray = field(init=False)
    cols: np.ndarray = field(init=False)
    flat_index: np.ndarray = field(init=False)

    def __post_init__(self):
        inside = _readonly(self.inside, dtype=bool)
        if inside.ndim != 2:
            raise ValueError("mask must be a 2-D boolean array")
        object.__setattr__(self, "inside", inside)
        rr, cc = np.nonzero(inside)
        if rr.size == 0:
            raise ValueError("mask must contain at least one pixel")
        flat = np.full(inside.shape, -1, dtype=np.int64)
        flat[rr, cc] = np.arange(rr.size)
        object.__setattr__(self, "rows", _readonly(rr, np.int64))
        object.__setattr__(self, "cols", _readonly(cc, np.int64))
        object.__setattr__(self, "flat_index", _readonly(flat))

    @property
    def n(self) -> int:
        return self.rows.size

    @property
    def height(self) -> int:
        return self.inside.shape[0]

    @property
    def width(self) -> int:
        return self.inside.shape[1]

    @classmethod
    def full(cls, height: int, width: int) -> "PixelMask":
        return cls(np.ones((height, width), dtype=bool))

    def neighbor_index(self, drow: int, dcol: int) -> np.ndarray:
        """Dense index of each member pixel's (drow, dcol) neighbor, -1 if outside."""
        r = self.rows + drow
        c = self.cols + dcol
        ok = (r >= 0) & (r < self.height) & (c >= 0) & (c < self.width)
        out = np.full(self.n, -1, dtype=np.int64)
        out[ok] = self.flat_index[r[ok], c[ok]]
        return out

    def index_of(self, row: int, col: int) -> int:
        j = int(self.flat_index[row, col])
        if j < 0:
            raise ValueError(f"pixel ({row},{col}) is outside the mask")
        return j

    def centroid_pixel(self) -> tuple[int, int]:
        """Member pixel closest to the mask centroid."""
        rc, cc = self.rows.mean(), self.cols.mean()
        j = int(np.argmin((self.rows - rc) ** 2 + (self.cols - cc) ** 2))
        return int(self.rows[j]), int(self.cols[j])

    def to_grid(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        """Scatter per-pixel values back onto the (height, width) grid."""
        values = np.asarray(values)
        out = np.full(self.inside.shape + values.shape[1:], fill, dtype=float)
        out[self.rows, self.cols] = values
        return out


@dataclass(frozen=True)
class LogDepthMap:
    """Per-pixel log-depth over a mask; depths are exp(values), always positive."""

    mask: PixelMask
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values, dtype=np.float64)
        if values.shape != (self.mask.n,):
            raise ValueError(f"expected {self.mask.n} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("log-depth values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def depth(self) -> np.ndarray:
        return np.exp(self.values)

    @classmethod
    def from_depth(cls, mask: PixelMask, z: np.ndarray) -> "LogDepthMap":
        z = np.asarray(z, dtype=np.float64)
        if np.any(z <= 0):
            raise ValueError("depths must be positive")
        return cls(mask, np.log(z))


@dataclass(frozen=True)
class NormalField:
    """Unit outgoing normals per member pixel, camera-facing (n3 < 0)."""

    mask: PixelMask
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.shape != (self.mask.n, 3):
            raise ValueError(f"expected ({self.mask.n},3) normals, got {vectors.shape}")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("normals must have unit length")
        # Snap to exactly unit length so downstream algebra sees <=1e-12 drift.
        vectors /= norms[:, None]
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)


def backproject(cam: CameraIntrinsics, p, z):
    """3-D point(s) conjugate to pixel(s) p at depth(s) z: x = (z/f) [u, v, f]."""
    p = np.asarray(p, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("depth must be positive")
    pb = homogeneous_pixel(cam, p)
    return (z / cam.f)[..., None] * pb if pb.ndim > 1 else (z / cam.f) * pb


def homogeneous_pixel(cam: CameraIntrinsics, p) -> np.ndarray:
    """p_bar = [u, v, f] for one pixel (shape (2,)) or many (shape (n,2))."""
    p = np.asarray(p, dtype=np.float64)
    f_col = np.full(p.shape[:-1] + (1,), cam.f)
    return np.concatenate([p, f_col], axis=-1)


def project(cam: CameraIntrinsics, x) -> np.ndarray:
    """Perspective projection u = f*x/z, v = f*y/z (principal-point relative)."""
    x = np.asarray(x, dtype=np.float64)
    return cam.f * x[..., :2] / x[..., 2:3]


def q_matrix(cam: CameraIntrinsics, p) -> np.ndarray:
    """Per-pixel matrix [[f,0,-u],[0,f,-v],[0,0,1]]; batched when p is (n,2)."""
    p = np.asarray(p, dtype=np.float64)
    shape = p.shape[:-1]
    q = np.zeros(shape + (3, 3))
    q[..., 0, 0] = cam.f
    q[..., 1, 1] = cam.f
    q[..., 2, 2] = 1.0
    q[..., 0, 2] = -p[..., 0]
    q[..., 1, 2] = -p[..., 1]
    return q


def gradient_matrices(mask: PixelMask) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Forward-difference operators (Du, Dv) on the mask, n x n sparse each.

    At pixels whose forward neighbor leaves the mask the row is zero
    (Neumann condition), so each row has at most two nonzeros.
    """
    n = mask.n
    mats = []
    for drow, dcol in ((0, 1), (1, 0)):
        nb = mask.neighbor_index(drow, dcol)
        has = nb >= 0
        j = np.nonzero(has)[0]
        data = np.concatenate([-np.ones(j.size), np.ones(j.size)])
        rows = np.concatenate([j, j])
        cols = np.concatenate([j, nb[has]])
        mats.append(sparse.csr_matrix((data, (rows, cols)), shape=(n, n)))
    return mats[0], mats[1]


def gradient(mask: PixelMask, values: np.ndarray) -> np.ndarray:
    """Per-pixel forward-difference gradient (d_u, d_v) of a field over the mask."""
    du, dv = gradient_matrices(mask)
    values = np.asarray(values, dtype=np.float64)
    return np.stack([du @ values, dv @ values], axis=1)


def stacked_gradient_matrix(mask: PixelMask) -> sparse.csr_matrix:
    """The (2n x n) operator stacking Du above Dv."""
    du, dv = gradient_matrices(mask)
    return sparse.vstack([du, dv]).tocsr()


def unnormalized_normals(cam: CameraIntrinsics, zmap: LogDepthMap) -> np.ndarray:
    """Raw surface normals z * [f*g_u, f*g_v, -1 - p.g] with g the log-depth gradient."""
    u, v = cam.pixel_coords(zmap.mask)
    g = gradient(zmap.mask, zmap.values)
    z = zmap.depth
    nbar = np.empty((zmap.mask.n, 3))
    nbar[:, 0] = cam.f * g[:, 0]
    nbar[:, 1] = cam.f * g[:, 1]
    nbar[:, 2] = -1.0 - (u * g[:, 0] + v * g[:, 1])
    return z[:, None] * nbar


def normal_from_depth(cam: CameraIntrinsics, zmap: LogDepthMap) -> NormalField:
    """Unit camera-facing normal field of the discrete depth map."""
    nbar = unnormalized_normals(cam, zmap)
    norms = np.linalg.norm(nbar, axis=1)
    bad = norms == 0.0
    if np.any(bad):
        j = int(np.nonzero(bad)[0][0])
        r, c = zmap.mask.rows[j], zmap.mask.cols[j]
        raise DegenerateGeometryError(f"zero-length normal at pixel ({r},{c})")
    return NormalField(zmap.mask, nbar / norms[:, None])


def gradient_from_normal(cam: CameraIntrinsics, nf: NormalField) -> np.ndarray:
    """Log-depth gradient -[n1, n2] / (p_bar . n) implied by a normal field."""
    u, v = cam.pixel_coords(nf.mask)
    nvec = nf.vectors
    denom = u * nvec[:, 0] + v * nvec[:, 1] + cam.f * nvec[:, 2]
    grazing = np.abs(denom) < GRAZING_EPS
    if np.any(grazing):
        j = int(np.nonzero(grazing)[0][0])
        r, c = nf.mask.rows[j], nf.mask.cols[j]
        raise DegenerateGeometryError(
            f"grazing surface at pixel ({r},{c}): |p_bar . n| < {GRAZING_EPS}"
        )
    return -nvec[:, :2] / denom[:, None]
