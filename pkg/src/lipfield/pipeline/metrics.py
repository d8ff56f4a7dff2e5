"""Image-quality, lip-geometry and motion diagnostics."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


class MetricError(ValueError):
    pass


def psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) over masked pixels and all channels; capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise MetricError("empty mask")
        sq = sq[m]
    mse = float(sq.mean())
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _gray(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=-1) if x.ndim == 3 else x


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean local SSIM of the channel-mean images (Gaussian 11x11, sigma 1.5).

    Only windows lying fully inside the image are used.
    """
    x, y = _gray(a), _gray(b)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()[::-1, ::-1]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(z):
        return convolve2d(z, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def dilate_box(box, factor: float = 1.25, shape=None) -> tuple[int, int, int, int]:
    """Scale a box's width and height by `factor` about its centre (clipped to `shape`)."""
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    hw, hh = (x1 - x0) * factor / 2, (y1 - y0) * factor / 2
    out = [int(np.floor(cx - hw)), int(np.floor(cy - hh)), int(np.ceil(cx + hw)), int(np.ceil(cy + hh))]
    if shape is not None:
        h, w = shape[:2]
        out = [max(out[0], 0), max(out[1], 0), min(out[2], w), min(out[3], h)]
    return tuple(out)


def mouth_crop(img, box, factor: float = 1.25) -> np.ndarray:
    x0, y0, x1, y1 = dilate_box(box, factor, np.shape(img))
    return np.asarray(img)[y0:y1, x0:x1]


def mouth_psnr(pred, gt, box) -> float:
    return psnr(mouth_crop(pred, box), mouth_crop(gt, box))


DARK_LEVEL = 0.3  # an aperture column must get at least this dark
MIN_CONTRAST = 0.08
RISE = 0.02  # per-pixel increase separating an edge from a plateau
EDGE_FRACTION = 0.3  # an edge ends once its steps fall below this share of the steepest one


def _inside(i: int, n: int) -> bool:
    return 0 <= i < n


def _shoulder(g: np.ndarray, start: int, step: int) -> float:
    """Value at the top of the first rising edge walking away from `start`."""
    n = len(g)
    i = start
    while _inside(i + step, n) and g[i + step] - g[i] < RISE:  # dark floor
        i += step
    steepest = 0.0
    while _inside(i + step, n):  # rising edge, up to the next plateau
        d = g[i + step] - g[i]
        if d < max(RISE, EDGE_FRACTION * steepest):
            break
        steepest = max(steepest, d)
        i += step
    return float(g[i])


def _crossing(g: np.ndarray, start: int, step: int, tau: float) -> float:
    """Walk from `start` until g rises above tau; linear sub-pixel crossing."""
    i = start
    while _inside(i + step, len(g)) and g[i + step] < tau:
        i += step
    j = i + step
    if not _inside(j, len(g)):
        return float(i)
    return i + step * (tau - g[i]) / (g[j] - g[i])


def aperture_extent(pred, box):
    """Top and bottom aperture rows estimated from the darkest run per column.

    For each column of the box's central third, the darkest pixel is taken
    as the aperture floor. On each side the boundary is the sub-pixel row
    where intensity crosses halfway from the floor to the shoulder of the
    first rising edge (the lip). The boundaries are averaged over columns
    and placed at the box's centre column. Returns (x, top, bottom) in frame coordinates or None if no column has
    a dark aperture.
    """
    x0, y0, x1, y1 = box
    g = _gray(pred)[y0:y1, x0:x1]
    w = x1 - x0
    tops, bots = [], []
    for c in range(w // 3, (2 * w + 2) // 3):
        col = g[:, c]
        r = int(np.argmin(col))
        lo = float(col[r])
        if lo > DARK_LEVEL or float(np.median(col)) - lo < MIN_CONTRAST:
            continue
        tops.append(_crossing(col, r, -1, 0.5 * (lo + _shoulder(col, r, -1))))
        bots.append(_crossing(col, r, 1, 0.5 * (lo + _shoulder(col, r, 1))))
    if not tops:
        return None
    return (x0 + x1 - 1) / 2.0, y0 + float(np.mean(tops)), y0 + float(np.mean(bots))


def lmd_aperture(pred, record) -> float:
    """Mean distance between estimated and true top/bottom lip keypoints (pixels)."""
    box = record.mouth_box
    est = aperture_extent(pred, box)
    if est is None:
        return float(box[3] - box[1])
    x, top, bot = est
    kp = np.asarray(record.keypoints, dtype=np.float64)
    d_top = np.hypot(x - kp[2, 0], top - kp[2, 1])
    d_bot = np.hypot(x - kp[3, 0], bot - kp[3, 1])
    return float((d_top + d_bot) / 2)


STATIC_TOL = 1e-9


def motion_heatmap(frames, valid=None) -> np.ndarray:
    """Per-pixel temporal std of intensity, normalised by its maximum.

    `valid` (T, H, W) optionally restricts each pixel's statistics to frames
    where it is valid; pixels valid in fewer than two frames get 0.
    """
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim == 4:
        f = f.mean(axis=-1)
    if f.ndim != 3 or f.shape[0] < 2:
        raise MetricError("motion heatmap needs at least two frames")
    if valid is None:
        std = f.std(axis=0)
    else:
        m = np.asarray(valid, dtype=bool)
        n = m.sum(axis=0)
        s1 = np.where(m, f, 0).sum(axis=0)
        s2 = np.where(m, f * f, 0).sum(axis=0)
        nn = np.maximum(n, 1)
        var = np.maximum(s2 / nn - (s1 / nn) ** 2, 0)
        std = np.where(n >= 2, np.sqrt(var), 0.0)
    std = np.where(std < STATIC_TOL, 0.0, std)  # rounding residue of constant series
    peak = std.max()
    return std / peak if peak > 0 else np.zeros_like(std)


def heat_ratio(heat: np.ndarray, box) -> float:
    """Mean heat inside the box divided by mean heat outside it."""
    x0, y0, x1, y1 = box
    inside = np.zeros(heat.shape, dtype=bool)
    inside[y0:y1, x0:x1] = True
    out = heat[~inside].mean()
    return float(heat[inside].mean() / out) if out > 0 else float("inf")
