"""Pose algebra and explicit mappings between canonical and observed views.

Pixel coordinates are (u, v) = (column, row) with integer values at pixel
centres. A pose maps head-frame points into a camera frame, so the relative
transform from view c to view o is ``T_o @ inv(T_c)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diffcore as dc

EPS_Z = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"pose must be 4x4, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def R(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = t
        return cls(m)

    def is_valid(self, tol: float = 1e-6) -> bool:
        R = self.R
        return (
            np.linalg.norm(R.T @ R - np.eye(3)) < tol
            and np.linalg.det(R) > 0
            and np.array_equal(self.matrix[3], [0.0, 0.0, 0.0, 1.0])
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.matrix @ other.matrix)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def as_list(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy]


@dataclass
class DepthMap:
    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.shape != self.valid_mask.shape:
            raise GeometryError("depth values and mask differ in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def full(cls, values) -> "DepthMap":
        values = np.asarray(values)
        return cls(values, np.ones(values.shape, dtype=bool))

    def log_depth(self) -> np.ndarray:
        return np.log(np.where(self.valid_mask, self.values, 1.0))


@dataclass
class CorrespondenceField:
    targets: np.ndarray  # (H, W, 2) continuous (u, v)
    target_depth: np.ndarray  # (H, W)
    valid_mask: np.ndarray  # (H, W)

    @property
    def u(self) -> np.ndarray:
        return self.targets[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.targets[..., 1]


def invert_pose(T: Pose) -> Pose:
    R, t = T.R, T.t
    return Pose.from_rt(R.T, -R.T @ t)


def relative_pose(T_o: Pose, T_c: Pose) -> Pose:
    """Transform taking camera-c coordinates to camera-o coordinates."""
    return Pose(T_o.matrix @ invert_pose(T_c).matrix)


def pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return u, v


def map_point(T_rel: Pose, K: Intrinsics, depth: float, p) -> tuple[np.ndarray, float, bool]:
    """Lift p at `depth`, move it by T_rel and project it again.

    Returns (p', depth', valid); valid is False when depth' <= EPS_Z.
    """
    u, v = float(p[0]), float(p[1])
    X = depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    Xp = T_rel.R @ X + T_rel.t
    z = float(Xp[2])
    if z <= EPS_Z:
        return np.array([np.nan, np.nan]), z, False
    return np.array([K.fx * Xp[0] / z + K.cx, K.fy * Xp[1] / z + K.cy]), z, True


def _transform_grid(T_rel: Pose, K: Intrinsics, depth: np.ndarray, u: np.ndarray, v: np.ndarray):
    rx = (u - K.cx) / K.fx
    ry = (v - K.cy) / K.fy
    R, t = T_rel.R, T_rel.t
    X = depth * (R[0, 0] * rx + R[0, 1] * ry + R[0, 2]) + t[0]
    Y = depth * (R[1, 0] * rx + R[1, 1] * ry + R[1, 2]) + t[1]
    Z = depth * (R[2, 0] * rx + R[2, 1] * ry + R[2, 2]) + t[2]
    return X, Y, Z


def build_correspondence(
    T_rel: Pose, K: Intrinsics, D_src: DepthMap, shape: tuple[int, int] | None = None, target_shape=None
) -> CorrespondenceField:
    """Dense map of every source pixel into the other view.

    `target_shape` bounds the validity test (defaults to the source shape).
    """
    h, w = D_src.shape
    if shape is not None and tuple(shape) != (h, w):
        raise GeometryError(f"depth map is {h}x{w} but the grid requested is {shape[0]}x{shape[1]}")
    th, tw = target_shape if target_shape is not None else (h, w)
    u, v = pixel_grid(h, w)
    depth = np.where(D_src.valid_mask, D_src.values, 1.0).astype(np.float64)
    X, Y, Z = _transform_grid(T_rel, K, depth, u, v)
    front = Z > EPS_Z
    Zs = np.where(front, Z, 1.0)
    tu = K.fx * X / Zs + K.cx
    tv = K.fy * Y / Zs + K.cy
    inb = (tu >= 0) & (tu <= tw - 1) & (tv >= 0) & (tv <= th - 1)
    valid = D_src.valid_mask & front & inb
    return CorrespondenceField(np.stack([tu, tv], axis=-1), Z, valid)


def correspondence_tensor(T_rel: Pose, K: Intrinsics, log_depth: dc.Tensor, u=None, v=None):
    """Differentiable version of `build_correspondence` driven by log-depth.

    `u`, `v` optionally restrict the source pixels (same shape as log_depth).
    Returns Tensors (tu, tv, z).
    """
    if u is None:
        u, v = pixel_grid(*log_depth.shape)
    dtype = log_depth.dtype
    rx = (u - K.cx) / K.fx
    ry = (v - K.cy) / K.fy
    R, t = T_rel.R, T_rel.t
    d = dc.exp(log_depth)
    a = [(R[i, 0] * rx + R[i, 1] * ry + R[i, 2]).astype(dtype) for i in range(3)]
    X = d * a[0] + float(t[0])
    Y = d * a[1] + float(t[1])
    Z = d * a[2] + float(t[2])
    tu = dc.div(X, Z) * K.fx + K.cx
    tv = dc.div(Y, Z) * K.fy + K.cy
    return tu, tv, Z


def sampling_valid(u: np.ndarray, v: np.ndarray, h: int, w: int) -> np.ndarray:
    """True where every bilinear tap with nonzero weight is inside the image."""
    return (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)


def backward_warp(src: np.ndarray, corr: CorrespondenceField) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample `src` at each correspondence target.

    Returns (image, mask); invalid pixels are zero.
    """
    h, w = src.shape[:2]
    mask = corr.valid_mask & sampling_valid(corr.u, corr.v, h, w)
    u = np.where(mask, corr.u, 0)
    v = np.where(mask, corr.v, 0)
    out = dc.bilinear_sample(np.asarray(src), u, v).data
    out = np.where(mask[..., None], out, 0).astype(src.dtype)
    return out, mask


def backward_warp_tensor(src, tu: dc.Tensor, tv: dc.Tensor, valid: np.ndarray) -> dc.Tensor:
    """Differentiable backward warp; gradients reach `src` and the coordinates."""
    out = dc.bilinear_sample(src, tu, tv)
    return out * valid[..., None].astype(out.dtype)


def forward_warp(
    src: np.ndarray, D_src: DepthMap, T_rel: Pose, K: Intrinsics, return_depth: bool = False
):
    """Nearest-pixel z-buffered splat of `src` into the view reached by T_rel.

    Nearer depth wins; equal depths go to the earliest source pixel in
    row-major order. Returns (image, hole_mask[, depth]).
    """
    h, w = D_src.shape
    corr = build_correspondence(T_rel, K, D_src, target_shape=(h, w))
    src_valid = D_src.valid_mask & (corr.target_depth > EPS_Z)
    ru = np.rint(np.where(src_valid, corr.u, -1))
    rv = np.rint(np.where(src_valid, corr.v, -1))
    ok = src_valid & (ru >= 0) & (ru <= w - 1) & (rv >= 0) & (rv <= h - 1)
    src_idx = np.flatnonzero(ok)
    tgt = (rv.ravel()[src_idx] * w + ru.ravel()[src_idx]).astype(np.int64)
    z = corr.target_depth.ravel()[src_idx]
    order = np.lexsort((src_idx, z, tgt))
    tgt_sorted = tgt[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = tgt_sorted[1:] != tgt_sorted[:-1]
    winners = order[first]
    channels = src.shape[2] if src.ndim == 3 else 1
    flat_src = src.reshape(h * w, channels)
    out = np.zeros((h * w, channels), dtype=src.dtype)
    depth = np.zeros(h * w)
    out[tgt[winners]] = flat_src[src_idx[winners]]
    depth[tgt[winners]] = z[winners]
    hole = np.ones(h * w, dtype=bool)
    hole[tgt[winners]] = False
    out = out.reshape(src.shape)
    hole = hole.reshape(h, w)
    if return_depth:
        return out, hole, DepthMap(depth.reshape(h, w), ~hole)
    return out, hole


def complete_depth(partial: DepthMap, tol: float = 1e-4) -> DepthMap:
    """Fill invalid pixels with the harmonic interpolant of the valid ones.

    The fill is the fixed point of 4-neighbour averaging (neighbours outside
    the grid are dropped), solved directly as a sparse linear system; the
    residual of one averaging sweep is checked against `tol`.
    """
    valid = partial.valid_mask
    if not valid.any():
        raise GeometryError("cannot complete a depth map with no valid pixels")
    values = np.where(valid, partial.values, 0).astype(np.float64)
    if valid.all():
        return DepthMap(partial.values.copy(), valid.copy())
    h, w = values.shape
    unknown = np.flatnonzero(~valid.ravel())
    pos = -np.ones(h * w, dtype=np.int64)
    pos[unknown] = np.arange(len(unknown))
    rows, cols, data = [], [], []
    rhs = np.zeros(len(unknown))
    deg = np.zeros(len(unknown))
    yy, xx = np.divmod(unknown, w)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = yy + dy, xx + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        deg += inside
        nb = ny[inside] * w + nx[inside]
        me = np.flatnonzero(inside)
        nb_pos = pos[nb]
        known = nb_pos < 0
        np.add.at(rhs, me[known], values.ravel()[nb[known]])
        rows.append(me[~known])
        cols.append(nb_pos[~known])
        data.append(-np.ones((~known).sum()))
    n = len(unknown)
    A = sp.csr_matrix(
        (np.concatenate(data + [deg]), (np.concatenate(rows + [np.arange(n)]), np.concatenate(cols + [np.arange(n)]))),
        shape=(n, n),
    )
    filled = values.ravel().copy()
    filled[unknown] = spla.spsolve(A.tocsc(), rhs)
    out = filled.reshape(h, w)
    res = diffusion_residual(out, valid)
    if res >= tol:
        raise GeometryError(f"depth completion did not converge (residual {res:.2e})")
    return DepthMap(out.astype(partial.values.dtype), np.ones((h, w), dtype=bool))


def diffusion_residual(values: np.ndarray, fixed: np.ndarray) -> float:
    """Max |neighbour average - value| over the non-fixed pixels."""
    h, w = values.shape
    total = np.zeros_like(values)
    count = np.zeros_like(values)
    total[1:] += values[:-1]
    count[1:] += 1
    total[:-1] += values[1:]
    count[:-1] += 1
    total[:, 1:] += values[:, :-1]
    count[:, 1:] += 1
    total[:, :-1] += values[:, 1:]
    count[:, :-1] += 1
    diff = np.abs(total / count - values)
    free = ~fixed
    return float(diff[free].max()) if free.any() else 0.0


def project_depth(D_c: DepthMap, T_rel: Pose, K: Intrinsics, fill: bool = True) -> DepthMap:
    """Carry a depth map into another view by z-buffered splatting.

    Splat gaps are filled by diffusion when `fill` is set.
    """
    h, w = D_c.shape
    _, hole, depth = forward_warp(np.zeros((h, w, 1)), D_c, T_rel, K, return_depth=True)
    if fill and hole.any() and (~hole).any():
        return complete_depth(depth)
    return depth
