"""Audio-visual sync expert: window encoders, contrastive loss, confidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .nn import Conv2d, Linear, Module

WINDOW = 5
EMBED_DIM = 64
MIN_NEGATIVE_SHIFT = 3


class SyncError(ValueError):
    pass


class ExpertParams(Module):
    """Image and audio window encoders mapping into a shared 64-d space.

    Image windows are W grayscale mouth crops of size (h, w) stacked as
    channels; audio windows are W stacked speech features.
    """

    def __init__(self, seed: int = 0, image_size: tuple[int, int] = (16, 24), window: int = WINDOW,
                 feature_dim: int = 64, zero_last: bool = False):
        rng = np.random.default_rng([seed, 0x5C])
        self.image_size = tuple(image_size)
        self.window = window
        self.feature_dim = feature_dim
        h, w = image_size
        self.i1 = Conv2d(rng, window, 16, 3, 2)
        self.i2 = Conv2d(rng, 16, 32, 3, 2)
        self.i3 = Conv2d(rng, 32, 32, 3, 2)
        flat = 32 * _down(_down(_down(h))) * _down(_down(_down(w)))
        last = "zero" if zero_last else "he"
        self.i_out = Linear(rng, flat, EMBED_DIM, init=last)
        self.a1 = Linear(rng, window * feature_dim, 128)
        self.a2 = Linear(rng, 128, 128)
        self.a_out = Linear(rng, 128, EMBED_DIM, init=last)
        # fixed input standardisation for audio, set from training data
        self.feat_mean = np.zeros(feature_dim, dtype=np.float32)
        self.feat_std = np.ones(feature_dim, dtype=np.float32)
        self.frozen = False

    def freeze(self) -> None:
        super().freeze()
        self.frozen = True

    def all_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self._all_named()}
        out["feat_mean"] = self.feat_mean
        out["feat_std"] = self.feat_std
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self._all_named():
            p.data = np.array(arrays[k], dtype=np.float32)
        self.feat_mean = np.array(arrays["feat_mean"], dtype=np.float32)
        self.feat_std = np.array(arrays["feat_std"], dtype=np.float32)

    def _all_named(self):
        mods = {"i1": self.i1, "i2": self.i2, "i3": self.i3, "i_out": self.i_out,
                "a1": self.a1, "a2": self.a2, "a_out": self.a_out}
        return [(f"{m}.{n}", getattr(mod, n)) for m, mod in mods.items() for n in ("weight", "bias")]


def _down(n: int) -> int:
    return (n + 1) // 2


def to_gray(frames) -> dc.Tensor:
    f = dc.as_tensor(frames)
    return f.mean(axis=-1) if f.shape[-1] == 3 else f


def encode_image_window(params: ExpertParams, frames) -> dc.Tensor:
    """Embed image windows: frames (W, h, w[, 3]) or (N, W, h, w[, 3])."""
    g = to_gray(frames)
    single = g.ndim == 3
    if single:
        g = g.reshape((1,) + g.shape)
    n, wlen, h, w = g.shape
    if wlen != params.window or (h, w) != params.image_size:
        raise SyncError(f"expected windows of {params.window} frames of {params.image_size}, got {g.shape[1:]}")
    x = g - 0.5
    x = dc.relu(params.i1(x))
    x = dc.relu(params.i2(x))
    x = dc.relu(params.i3(x))
    out = params.i_out(x.reshape(n, -1))
    return out.reshape(EMBED_DIM) if single else out


def encode_audio_window(params: ExpertParams, features) -> dc.Tensor:
    """Embed audio windows: features (W, 64) or (N, W, 64)."""
    f = dc.as_tensor(features)
    single = f.ndim == 2
    if single:
        f = f.reshape((1,) + f.shape)
    n, wlen, d = f.shape
    if wlen != params.window or d != params.feature_dim:
        raise SyncError(f"expected audio windows of shape ({params.window}, {params.feature_dim}), got {f.shape[1:]}")
    x = (f - params.feat_mean) / params.feat_std
    x = dc.relu(params.a1(x.reshape(n, -1)))
    x = dc.relu(params.a2(x))
    out = params.a_out(x)
    return out.reshape(EMBED_DIM) if single else out


def cosine(i, a) -> dc.Tensor:
    """Row-wise cosine similarity; raises on zero-norm rows."""
    i, a = dc.as_tensor(i), dc.as_tensor(a)
    ni = dc.sqrt((i * i).sum(axis=-1))
    na = dc.sqrt((a * a).sum(axis=-1))
    if np.any(ni.data == 0) or np.any(na.data == 0):
        raise SyncError("cosine similarity of a zero-norm embedding is undefined")
    return (i * a).sum(axis=-1) / (ni * na)


def sync_loss(i, a, y) -> dc.Tensor:
    """y * (1 - cos) + (1 - y) * max(0, cos), averaged over rows."""
    c = cosine(i, a)
    y = np.asarray(y, dtype=c.dtype)
    per = (1.0 - c) * y + dc.relu(c) * (1.0 - y)
    return per.mean() if per.ndim else per


def window_stack(arr: np.ndarray, starts: np.ndarray, window: int = WINDOW) -> np.ndarray:
    idx = np.asarray(starts)[:, None] + np.arange(window)
    return arr[idx]


def negative_starts(starts: np.ndarray, n: int, rng: np.random.Generator, window: int = WINDOW,
                    min_shift: int = MIN_NEGATIVE_SHIFT) -> np.ndarray:
    """Audio window starts at least `min_shift` frames away from each start."""
    last = n - window
    out = np.empty_like(starts)
    for k, s in enumerate(starts):
        cands = np.concatenate([np.arange(0, max(s - min_shift + 1, 0)), np.arange(min(s + min_shift, last + 1), last + 1)])
        out[k] = cands[rng.integers(len(cands))]
    return out


@dataclass
class ExpertReport:
    margin: float
    cos_positive: float
    cos_negative: float
    losses: list[float]


def expert_margin(params: ExpertParams, images: np.ndarray, feats: np.ndarray, seed: int = 0) -> ExpertReport:
    """Mean cos(positive) - mean cos(negative) over all windows of a clip."""
    n = len(images)
    starts = np.arange(n - params.window + 1)
    neg = negative_starts(starts, n, np.random.default_rng([seed, 0xE7A1]), params.window)
    ei = encode_image_window(params, window_stack(images, starts, params.window)).data
    ea = encode_audio_window(params, window_stack(feats, starts, params.window)).data
    en = encode_audio_window(params, window_stack(feats, neg, params.window)).data
    cp = float(cosine(ei, ea).data.mean(dtype=np.float64))
    cn = float(cosine(ei, en).data.mean(dtype=np.float64))
    return ExpertReport(cp - cn, cp, cn, [])


def pretrain_expert(images: np.ndarray, feats: np.ndarray, epochs: int = 40, seed: int = 0,
                    use_negatives: bool = True, lr: float = 1e-3, batch: int = 32,
                    image_size: tuple[int, int] | None = None) -> tuple[ExpertParams, list[float]]:
    """Train both encoders on aligned (y=1) and shifted (y=0) windows, then freeze.

    images: (T, h, w, 3) mouth crops; feats: (T, 64). Returns the frozen
    expert and the per-epoch mean loss.
    """
    n = len(images)
    if n < 2 * WINDOW or len(feats) != n:
        raise SyncError(f"need at least {2 * WINDOW} aligned frames, got {n} images and {len(feats)} features")
    size = image_size or images.shape[1:3]
    params = ExpertParams(seed=seed, image_size=size, feature_dim=feats.shape[1])
    params.feat_mean = feats.mean(axis=0, dtype=np.float64).astype(np.float32)
    params.feat_std = (feats.std(axis=0, dtype=np.float64) + 1e-3).astype(np.float32)
    opt = dc.Adam(params.parameters(), lr=lr)
    rng = np.random.default_rng([seed, 0xE7])
    starts_all = np.arange(n - WINDOW + 1)
    history = []
    for _ in range(epochs):
        order = rng.permutation(starts_all)
        losses = []
        for b in range(0, len(order), batch):
            s = order[b : b + batch]
            ei = encode_image_window(params, window_stack(images, s))
            ea = encode_audio_window(params, window_stack(feats, s))
            loss = sync_loss(ei, ea, np.ones(len(s)))
            if use_negatives:
                neg = negative_starts(s, n, rng)
                en = encode_audio_window(params, window_stack(feats, neg))
                loss = (loss + sync_loss(ei, en, np.zeros(len(s)))) * 0.5
            opt.zero_grad()
            dc.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
    params.freeze()
    return params, history


def offset_cosines(expert: ExpertParams, frames: np.ndarray, feats: np.ndarray, max_offset: int = 7):
    """cos(image window at s, audio window at s + k) for k in [-max_offset, max_offset].

    Returns an array (n_windows, 2 * max_offset + 1).
    """
    n = len(frames)
    w = expert.window
    if len(feats) != n:
        raise SyncError("frame and feature counts differ")
    starts = np.arange(max_offset, n - w - max_offset + 1)
    if len(starts) < 1:
        raise SyncError(f"clip of {n} frames is too short for window {w} and offsets +-{max_offset}")
    ei = encode_image_window(expert, window_stack(frames, starts, w)).data
    ea = encode_audio_window(expert, window_stack(feats, np.arange(n - w + 1), w)).data
    ei = ei / np.linalg.norm(ei, axis=1, keepdims=True)
    ea = ea / np.linalg.norm(ea, axis=1, keepdims=True)
    offs = np.arange(-max_offset, max_offset + 1)
    return np.stack([np.sum(ei * ea[starts + k], axis=1, dtype=np.float64) for k in offs], axis=1)


def sync_confidence(expert: ExpertParams, frames: np.ndarray, feats: np.ndarray, max_offset: int = 7,
                    per_window: bool = False) -> float:
    """cos at offset 0 minus the best cos at offsets 1..max_offset away.

    By default the cosine-vs-offset curve is averaged over all sliding
    windows first (as SyncNet does), so an unsynced clip scores near 0. With
    `per_window` the difference is taken per window and then averaged; the
    max over 2*max_offset noisy values biases that form strongly negative
    for unsynced clips.
    """
    if not expert.frozen:
        raise SyncError("sync confidence needs a frozen expert")
    c = offset_cosines(expert, frames, feats, max_offset)
    if per_window:
        center = c[:, max_offset]
        others = np.delete(c, max_offset, axis=1).max(axis=1)
        return float(np.mean(center - others))
    curve = c.mean(axis=0)
    return float(curve[max_offset] - np.delete(curve, max_offset).max())
