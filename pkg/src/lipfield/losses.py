"""Training objectives: reconstruction, depth photometric, weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import diffcore as dc
from .nn import Conv2d, Module


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    mouth: float = 1.0
    whole: float = 1.0
    depth: float = 0.5
    sync: float = 0.1

    def __post_init__(self):
        w = (self.mouth, self.whole, self.depth, self.sync)
        if min(w) < 0:
            raise LossError("loss weights must be non-negative")
        if max(w) <= 0:
            raise LossError("at least one loss weight must be positive")


def _as_image(x) -> dc.Tensor:
    return x if isinstance(x, dc.Tensor) else dc.Tensor(np.asarray(x, dtype=np.float32))


def l2_image(a, b, mask=None) -> dc.Tensor:
    """Root of the mean squared difference over masked pixels and channels."""
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise LossError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    sq = diff * diff
    if mask is None:
        return dc.sqrt(sq.mean())
    m = np.asarray(mask, dtype=bool)
    count = int(m.sum()) * (a.shape[-1] if a.ndim == m.ndim + 1 else 1)
    if count == 0:
        raise LossError("empty mask")
    mf = m[..., None] if a.ndim == m.ndim + 1 else m
    return dc.sqrt((sq * mf.astype(sq.dtype)).sum() * (1.0 / count))


class PerceptualProxy(Module):
    """Frozen random 3-layer conv feature extractor."""

    MIN_SIZE = 16

    def __init__(self, seed: int = 1234):
        rng = np.random.default_rng([seed, 0x9E9C])
        self.c1 = Conv2d(rng, 3, 8, 3, 1)
        self.c2 = Conv2d(rng, 8, 16, 3, 2)
        self.c3 = Conv2d(rng, 16, 16, 3, 2)
        self.freeze()

    def features(self, img: dc.Tensor) -> list[dc.Tensor]:
        x = img.transpose(2, 0, 1).reshape((1, 3) + img.shape[:2]) - 0.5
        f1 = dc.relu(self.c1(x))
        f2 = dc.relu(self.c2(f1))
        f3 = dc.relu(self.c3(f2))
        return [f1, f2, f3]


@lru_cache(maxsize=4)
def default_proxy(seed: int = 1234) -> PerceptualProxy:
    return PerceptualProxy(seed)


def perceptual_proxy(a, b, proxy: PerceptualProxy | None = None) -> dc.Tensor:
    """Sum over layers of the mean squared feature difference."""
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise LossError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < PerceptualProxy.MIN_SIZE:
        raise LossError(f"perceptual proxy needs at least 16x16 input, got {a.shape[:2]}")
    proxy = proxy or default_proxy()
    total = None
    for fa, fb in zip(proxy.features(a), proxy.features(b)):
        d = fa - fb
        term = (d * d).mean()
        total = term if total is None else total + term
    return total


def _masked(img: dc.Tensor, mask) -> dc.Tensor:
    if mask is None:
        return img
    return img * np.asarray(mask, dtype=img.dtype)[..., None]


def reconstruction_loss(pred, target, mask=None) -> dc.Tensor:
    """Perceptual proxy plus masked L2, as used for both mouth and frame."""
    pred, target = _as_image(pred), _as_image(target)
    return perceptual_proxy(_masked(pred, mask), _masked(target, mask)) + l2_image(pred, target, mask)


def loss_m(pred_mouth, warped_gt_mouth, mask) -> dc.Tensor:
    return reconstruction_loss(pred_mouth, warped_gt_mouth, mask)


def loss_w(pred_frame, gt_frame) -> dc.Tensor:
    return reconstruction_loss(pred_frame, gt_frame, None)


def loss_d(warped_pred, canonical_gt, mask) -> dc.Tensor:
    """Photometric depth loss between an image warped into canonical space and I_c."""
    return l2_image(warped_pred, canonical_gt, mask)


def total_loss(parts, w: LossWeights) -> dc.Tensor:
    """Weighted sum of (mouth, whole, depth, sync) terms; None terms are skipped."""
    weights = (w.mouth, w.whole, w.depth, w.sync)
    total = None
    for p, wt in zip(parts, weights):
        if p is None:
            continue
        term = dc.as_tensor(p) * float(wt)
        total = term if total is None else total + term
    if total is None:
        raise LossError("no loss terms given")
    return total
