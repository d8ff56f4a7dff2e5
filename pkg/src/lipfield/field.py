"""Speech-conditioned implicit image of the canonical mouth region.

The field maps a continuous pixel coordinate, a 64-d speech feature and a
normalised timestamp to an RGB colour. Training renders each pixel as the
area-weighted blend of the field at the corners of a random rectangle around
it, which supervises off-grid coordinates with on-grid targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .nn import Linear, Module

SPEECH_DIM = 64


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Pixel box (x0, y0, x1, y1), end-exclusive, in the canonical frame."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def normalize(self, u, v):
        """Pixel coordinates to the [-1, 1]^2 range spanned by the pixel centres."""
        nu = 2 * (np.asarray(u) - self.x0) / max(self.width - 1, 1) - 1
        nv = 2 * (np.asarray(v) - self.y0) / max(self.height - 1, 1) - 1
        return nu, nv

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        v, u = np.mgrid[self.y0 : self.y1, self.x0 : self.x1].astype(np.float64)
        return u, v


def positional_encode(x, L: int):
    """Per component: [x, sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^(L-1) pi x)].

    Accepts numpy arrays or Tensors of shape (..., D); returns (..., D*(1+2L)).
    """
    if L < 0:
        raise FieldError("band count must be non-negative")
    as_t = isinstance(x, dc.Tensor)
    xt = x if as_t else dc.Tensor(np.asarray(x, dtype=np.float64))
    if L == 0:
        return x
    d = xt.shape[-1]
    freqs = (np.pi * 2.0 ** np.arange(L)).astype(xt.dtype)
    cols = []
    for j in range(d):
        c = xt[..., j : j + 1]
        scaled = c * freqs
        sc = dc.stack([dc.sin(scaled), dc.cos(scaled)], axis=-1)  # (..., L, 2)
        cols.append(c)
        cols.append(sc.reshape(c.shape[:-1] + (2 * L,)))
    out = dc.concat(cols, axis=-1)
    return out if as_t else out.data


class FieldParams(Module):
    """Fully connected ReLU network with a sigmoid RGB head."""

    def __init__(self, seed: int = 0, hidden: int = 128, depth: int = 6, bands: int = 10, time_bands: int = 4,
                 zero_last: bool = False, dtype=np.float32):
        rng = np.random.default_rng([seed, 0xF1E1D])
        self.bands = bands
        self.time_bands = time_bands
        self.hidden = hidden
        self.depth = depth
        n_in = 2 * (1 + 2 * bands) + SPEECH_DIM + (1 + 2 * time_bands)
        dims = [n_in] + [hidden] * depth
        self.layers = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        self.head = Linear(rng, dims[-1], 3, init="zero" if zero_last else "small")
        if dtype != np.float32:
            for p in self.parameters():
                p.data = p.data.astype(dtype)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    def config(self) -> dict:
        return {"hidden": self.hidden, "depth": self.depth, "bands": self.bands, "time_bands": self.time_bands}


def encode_inputs(theta: FieldParams, x, a, t) -> dc.Tensor:
    """Rows of [enc(x), a, enc(t)] for N coordinates sharing or not sharing a, t."""
    x = dc.as_tensor(x)
    n = x.shape[0]
    dtype = theta.layers[0].weight.dtype
    if x.dtype != dtype:
        x = dc.Tensor(x.data.astype(dtype), requires_grad=x.requires_grad) if not x.requires_grad else x
    a = dc.as_tensor(a)
    if a.data.dtype != dtype and not a.requires_grad:
        a = dc.Tensor(a.data.astype(dtype))
    if a.shape[-1] != SPEECH_DIM:
        raise FieldError(f"speech feature must have {SPEECH_DIM} entries, got {a.shape[-1]}")
    if a.ndim == 1:
        a = a.reshape(1, SPEECH_DIM) + np.zeros((n, 1), dtype=dtype)
    t_arr = np.broadcast_to(np.asarray(t, dtype=dtype).reshape(-1, 1), (n, 1))
    te = positional_encode(dc.Tensor(np.ascontiguousarray(t_arr)), theta.time_bands)
    return dc.concat([positional_encode(x, theta.bands), a, te], axis=-1)


def eval_field(theta: FieldParams, x, a, t) -> dc.Tensor:
    """RGB in [0, 1] at normalised coordinates x (N, 2)."""
    h = encode_inputs(theta, x, a, t)
    for layer in theta.layers:
        h = dc.relu(layer(h))
    return dc.sigmoid(theta.head(h))


def bilinear_weights(xc, yc, x0, y0, x1, y1):
    """Area weights for corners (x0,y0), (x1,y0), (x0,y1), (x1,y1).

    Each corner is weighted by the area of the sub-rectangle opposite it.
    """
    S = (x1 - x0) * (y1 - y0)
    return (
        (x1 - xc) * (y1 - yc) / S,
        (xc - x0) * (y1 - yc) / S,
        (x1 - xc) * (yc - y0) / S,
        (xc - x0) * (yc - y0) / S,
    )


def sample_continuous(theta: FieldParams, x_c, rect, a, t) -> dc.Tensor:
    """Area-weighted blend of the field at the four corners of `rect`.

    `rect` is a (4, 2) array of axis-aligned corner coordinates; x_c must lie
    in the closed rectangle.
    """
    rect = np.asarray(rect, dtype=np.float64)
    if rect.shape != (4, 2):
        raise FieldError("rectangle needs four (x, y) corners")
    x0, y0 = rect.min(axis=0)
    x1, y1 = rect.max(axis=0)
    xs, ys = np.unique(rect[:, 0]), np.unique(rect[:, 1])
    if (x1 - x0) * (y1 - y0) <= 0:
        raise FieldError("rectangle has zero area")
    if len(xs) != 2 or len(ys) != 2:
        raise FieldError("rectangle must be axis aligned")
    xc, yc = float(x_c[0]), float(x_c[1])
    if not (x0 <= xc <= x1 and y0 <= yc <= y1):
        raise FieldError("query point lies outside the rectangle")
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
    colors = eval_field(theta, corners, a, t)
    w = np.array(bilinear_weights(xc, yc, x0, y0, x1, y1), dtype=colors.dtype).reshape(4, 1)
    return (colors * w).sum(axis=0)


def render_batch(theta: FieldParams, region: Region, feats, ts, train_mode: bool = False,
                 rng: np.random.Generator | None = None, r_max: float = 1.0, coords=None) -> dc.Tensor:
    """Render F frames of the region; returns (F, h, w, 3).

    `coords` optionally replaces the pixel-centre grid with arbitrary (h, w, 2)
    pixel coordinates (used to render at other resolutions). In train mode
    each pixel blends a random rectangle with corner offsets in (0, r_max]
    pixels.
    """
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float32))
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float32))
    n_frames = feats.shape[0]
    if coords is None:
        u, v = region.grid()
    else:
        u, v = coords[..., 0], coords[..., 1]
    h, w = u.shape
    npx = h * w
    su = max(region.width - 1, 1) / 2.0
    sv = max(region.height - 1, 1) / 2.0
    dtype = theta.layers[0].weight.dtype
    if train_mode:
        if rng is None:
            raise FieldError("train mode needs a random generator")
        off = r_max * (1.0 - rng.random((n_frames, 4, npx)))  # (0, r_max]
        uc, vc = u.ravel(), v.ravel()
        cu = np.stack([uc - off[:, 0], uc + off[:, 1], uc - off[:, 0], uc + off[:, 1]], axis=1)
        cv = np.stack([vc - off[:, 2], vc - off[:, 2], vc + off[:, 3], vc + off[:, 3]], axis=1)
        wts = np.stack(bilinear_weights(uc, vc, cu[:, 0], cv[:, 0], cu[:, 1], cv[:, 2]), axis=1)
        nu, nv = region.normalize(cu, cv)  # (F, 4, npx)
        xy = np.stack([nu, nv], axis=-1).reshape(-1, 2)
        rows_per_frame = 4 * npx
    else:
        nu, nv = region.normalize(u.ravel(), v.ravel())
        xy = np.tile(np.stack([nu, nv], axis=-1), (n_frames, 1))
        rows_per_frame = npx
    a = np.repeat(feats, rows_per_frame, axis=0)
    t = np.repeat(ts, rows_per_frame)
    rgb = eval_field(theta, xy.astype(dtype), a.astype(dtype), t)
    if train_mode:
        rgb = rgb.reshape(n_frames, 4, npx, 3)
        rgb = (rgb * wts[..., None].astype(dtype)).sum(axis=1)
    return rgb.reshape(n_frames, h, w, 3)


def render_canonical_mouth(theta: FieldParams, region: Region, a, t, train_mode: bool = False,
                           rng: np.random.Generator | None = None, r_max: float = 1.0) -> dc.Tensor:
    """One frame of the canonical mouth region, (h, w, 3)."""
    out = render_batch(theta, region, np.asarray(a)[None], [t], train_mode, rng, r_max)
    return out.reshape(region.height, region.width, 3)
