"""Composition: paste the warped mouth, augment with holes, residual blending."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .nn import Conv2d, Module


class ComposeError(ValueError):
    pass


@dataclass(frozen=True)
class MouthPlacement:
    """Mouth box (x0, y0, x1, y1), end-exclusive, plus the 4 lip keypoints."""

    box: tuple[int, int, int, int]
    keypoints: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.box[3] - self.box[1]

    @property
    def width(self) -> int:
        return self.box[2] - self.box[0]

    def check(self, shape: tuple[int, int]) -> None:
        x0, y0, x1, y1 = self.box
        h, w = shape
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ComposeError(f"placement box {self.box} outside {w}x{h} frame")
        if self.keypoints is not None:
            k = np.asarray(self.keypoints)
            if np.any(k[:, 0] < x0) or np.any(k[:, 0] > x1 - 1) or np.any(k[:, 1] < y0) or np.any(k[:, 1] > y1 - 1):
                raise ComposeError("keypoints must lie inside the placement box")


def _pad_to(block: dc.Tensor, shape: tuple[int, int], box) -> dc.Tensor:
    """Embed an (h, w, C) block at `box` in a zero (H, W, C) canvas."""
    x0, y0, x1, y1 = box
    H, W = shape
    c = block.shape[-1]
    dt = block.dtype
    parts = []
    if x0:
        parts.append(dc.Tensor(np.zeros((y1 - y0, x0, c), dtype=dt)))
    parts.append(block)
    if W - x1:
        parts.append(dc.Tensor(np.zeros((y1 - y0, W - x1, c), dtype=dt)))
    row = dc.concat(parts, axis=1) if len(parts) > 1 else block
    parts = []
    if y0:
        parts.append(dc.Tensor(np.zeros((y0, W, c), dtype=dt)))
    parts.append(row)
    if H - y1:
        parts.append(dc.Tensor(np.zeros((H - y1, W, c), dtype=dt)))
    return dc.concat(parts, axis=0) if len(parts) > 1 else row


def paste_mouth(frame, mouth, placement: MouthPlacement, validity=None):
    """Replace box pixels of `frame` by valid `mouth` pixels.

    Returns a Tensor when `mouth` is a Tensor (differentiable in the mouth),
    otherwise a numpy array. Pixels outside the box are copied exactly.
    """
    fr = frame.data if isinstance(frame, dc.Tensor) else np.asarray(frame)
    placement.check(fr.shape[:2])
    x0, y0, x1, y1 = placement.box
    mshape = mouth.shape[:2]
    if tuple(mshape) != (placement.height, placement.width):
        raise ComposeError(f"mouth of shape {tuple(mshape)} does not fit box {placement.box}")
    valid = np.ones(mshape, dtype=bool) if validity is None else np.asarray(validity, dtype=bool)
    if not isinstance(mouth, dc.Tensor):
        out = np.array(fr, copy=True)
        region = out[y0:y1, x0:x1]
        region[valid] = np.asarray(mouth)[valid]
        return out
    full_mask = np.zeros(fr.shape[:2], dtype=bool)
    full_mask[y0:y1, x0:x1] = valid
    m = full_mask[..., None].astype(mouth.dtype)
    keep = dc.as_tensor(frame) * (1.0 - m) if isinstance(frame, dc.Tensor) else dc.Tensor((fr * (1.0 - m)).astype(mouth.dtype))
    return keep + _pad_to(mouth * valid[..., None].astype(mouth.dtype), fr.shape[:2], placement.box)


def blank_box(frame: np.ndarray, box, value: float = 0.0) -> np.ndarray:
    out = np.array(frame, copy=True)
    x0, y0, x1, y1 = box
    out[y0:y1, x0:x1] = value
    return out


def sample_holes(shape: tuple[int, int], rng: np.random.Generator, count=(3, 8), area=(0.02, 0.10)) -> np.ndarray:
    """Union mask of `count` random axis-aligned rectangles, each `area` of the image."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    n = int(rng.integers(count[0], count[1] + 1))
    for _ in range(n):
        frac = rng.uniform(area[0], area[1])
        aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
        px = frac * h * w
        rh = int(np.clip(round(np.sqrt(px / aspect)), 1, h))
        rw = int(np.clip(round(px / rh), 1, w))
        y = int(rng.integers(0, h - rh + 1))
        x = int(rng.integers(0, w - rw + 1))
        mask[y : y + rh, x : x + rw] = True
    return mask


def hole_augment(image, probability: float = 0.5, rng=None, count=(3, 8), area=(0.02, 0.10)):
    """With `probability`, black out random rectangles; returns (image, hole mask)."""
    if not 0.0 <= probability <= 1.0:
        raise ComposeError("hole probability must lie in [0, 1]")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    shape = image.shape[:2]
    if rng.random() >= probability:
        return image, np.zeros(shape, dtype=bool)
    mask = sample_holes(shape, rng, count, area)
    keep = (~mask)[..., None]
    if isinstance(image, dc.Tensor):
        return image * keep.astype(image.dtype), mask
    return np.asarray(image) * keep, mask


class BlendParams(Module):
    """U-shaped conv encoder/decoder predicting a tanh-bounded RGB residual.

    Four stride-2 downsampling convs (base, base, 2*base, 2*base channels)
    and four nearest-upsample + conv stages with skip connections. The
    residual head is zero-initialised so blending starts as the identity.
    """

    def __init__(self, seed: int = 0, base: int = 32, use_mask: bool = False, zero_last: bool = True):
        rng = np.random.default_rng([seed, 0xB1E4D])
        c_in = 4 if use_mask else 3
        self.use_mask = use_mask
        self.base = base
        ch = [base, base, 2 * base, 2 * base]
        self.d1 = Conv2d(rng, c_in, ch[0], 3, 2)
        self.d2 = Conv2d(rng, ch[0], ch[1], 3, 2)
        self.d3 = Conv2d(rng, ch[1], ch[2], 3, 2)
        self.d4 = Conv2d(rng, ch[2], ch[3], 3, 2)
        self.u4 = Conv2d(rng, ch[3] + ch[2], ch[2], 3, 1)
        self.u3 = Conv2d(rng, ch[2] + ch[1], ch[1], 3, 1)
        self.u2 = Conv2d(rng, ch[1] + ch[0], ch[0], 3, 1)
        self.u1 = Conv2d(rng, ch[0] + c_in, base // 2, 3, 1)
        self.out = Conv2d(rng, base // 2, 3, 3, 1, init="zero" if zero_last else "he")

    def config(self) -> dict:
        return {"base": self.base, "use_mask": self.use_mask}


MULTIPLE = 16


def _edge_pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return np.pad(x, ((0, ph), (0, pw)) + ((0, 0),) * (x.ndim - 2), mode="edge")


def blend_residual(params: BlendParams, pasted, hole_mask=None) -> dc.Tensor:
    """Residual in [-1, 1] for an (H, W, 3) image; any H, W (edge-padded internally)."""
    if not isinstance(pasted, dc.Tensor):
        pasted = dc.Tensor(np.asarray(pasted, dtype=np.float32))
    H, W = pasted.shape[:2]
    ph, pw = (-H) % MULTIPLE, (-W) % MULTIPLE
    x = pasted
    if ph or pw:
        # replicate the last row/column via index gathering so gradients flow
        ri = np.minimum(np.arange(H + ph), H - 1)
        ci = np.minimum(np.arange(W + pw), W - 1)
        x = x[ri][:, ci]
    x = x.transpose(2, 0, 1).reshape((1, 3, H + ph, W + pw))
    if params.use_mask:
        m = np.zeros((H, W), np.float32) if hole_mask is None else np.asarray(hole_mask, np.float32)
        m = _edge_pad(m, ph, pw)
        x = dc.concat([x, dc.Tensor(m.reshape(1, 1, H + ph, W + pw))], axis=1)
    x = x - 0.5
    e1 = dc.relu(params.d1(x))
    e2 = dc.relu(params.d2(e1))
    e3 = dc.relu(params.d3(e2))
    e4 = dc.relu(params.d4(e3))
    y = dc.relu(params.u4(dc.concat([dc.upsample2(e4), e3], axis=1)))
    y = dc.relu(params.u3(dc.concat([dc.upsample2(y), e2], axis=1)))
    y = dc.relu(params.u2(dc.concat([dc.upsample2(y), e1], axis=1)))
    y = dc.relu(params.u1(dc.concat([dc.upsample2(y), x], axis=1)))
    r = dc.tanh(params.out(y))
    r = r.reshape((3, H + ph, W + pw)).transpose(1, 2, 0)
    if ph or pw:
        r = r[:H, :W]
    return r


def blend(params: BlendParams, pasted, hole_mask=None) -> dc.Tensor:
    """clamp(pasted + residual, 0, 1)."""
    p = pasted if isinstance(pasted, dc.Tensor) else dc.Tensor(np.asarray(pasted, dtype=np.float32))
    return dc.clip(p + blend_residual(params, p, hole_mask), 0.0, 1.0)
