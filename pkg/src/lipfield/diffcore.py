"""Reverse-mode automatic differentiation over numpy arrays, plus Adam.

Only the operations the pipeline needs are provided. Every op records a
closure that maps the output gradient to one gradient per parent; `backward`
walks the graph in reverse topological order.

Reductions accumulate in float64 and cast back to the operand dtype, so a
float32 graph is reproducible bit-for-bit on a given machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_ufunc__ = None  # make `ndarray <op> Tensor` defer to the reflected Tensor operator

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)), dtype=np.float64).astype(g.dtype)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(g.dtype)
    return g.reshape(shape)


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(out, (a,), bw, f"pow{p}")


# -- elementwise unary -----------------------------------------------------
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root whose derivative at exactly 0 is taken as 0."""
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1)
        return (np.where(out > 0, 0.5 * g / safe, 0).astype(out.dtype),)

    return _make(out, (a,), bw, "sqrt")


def sin(a: Tensor) -> Tensor:
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a: Tensor) -> Tensor:
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    pos = a.data > 0
    return _make(np.maximum(a.data, 0, dtype=a.dtype), (a,), lambda g: (np.where(pos, g, 0),), "relu")


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- reductions ------------------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)).astype(a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _make(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- shape -----------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def index(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def bw(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select a where mask else b; mask is a constant."""
    a, b = _binary_operands(a, b)
    m = np.asarray(mask, dtype=bool)

    def bw(g):
        return _unbroadcast(np.where(m, g, 0).astype(g.dtype), a.shape), _unbroadcast(
            np.where(m, 0, g).astype(g.dtype), b.shape
        )

    return _make(np.where(m, a.data, b.data), (a, b), bw, "where")


# -- linear algebra --------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b for x of shape (N, in), w (in, out), b (out,)."""
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0, dtype=np.float64).astype(g.dtype)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw, "linear")


# -- convolution -----------------------------------------------------------
def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation. x: (N, C, H, W); w: (O, C, k, k); b: (O,)."""
    n, c, h, wd = x.shape
    o, c2, k, k2 = w.shape
    if c != c2 or k != k2:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(w.shape)
        gcols = (gm @ wmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0, dtype=np.float64).astype(g.dtype)

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of (N, C, H, W)."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def bw(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5), dtype=np.float64).astype(g.dtype),)

    return _make(out, (x,), bw, "upsample2")


# -- sampling --------------------------------------------------------------
def bilinear_sample(img, u, v) -> Tensor:
    """Sample img (H, W, C) at continuous pixel coordinates (u=column, v=row).

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border; callers
    mask those pixels. Differentiable in img and in both coordinate arrays.
    """
    img, u, v = as_tensor(img), as_tensor(u), as_tensor(v)
    h, w, c = img.shape
    uc = np.clip(u.data, 0, w - 1)
    vc = np.clip(v.data, 0, h - 1)
    x0 = np.minimum(np.floor(uc).astype(np.int64), w - 2) if w > 1 else np.zeros(uc.shape, np.int64)
    y0 = np.minimum(np.floor(vc).astype(np.int64), h - 2) if h > 1 else np.zeros(vc.shape, np.int64)
    fx = (uc - x0).astype(img.dtype)[..., None]
    fy = (vc - y0).astype(img.dtype)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    im = img.data
    i00, i01 = im[y0, x0], im[y0, x1]
    i10, i11 = im[y1, x0], im[y1, x1]
    # weighted form: exact at integer coordinates, including the last row/column
    top = (1 - fx) * i00 + fx * i01
    bot = (1 - fx) * i10 + fx * i11
    out = (1 - fy) * top + fy * bot
    inside_u = (u.data >= 0) & (u.data <= w - 1)
    inside_v = (v.data >= 0) & (v.data <= h - 1)

    def bw(g):
        grads = []
        if img.requires_grad:
            flat = np.zeros((h * w, c), dtype=np.float64)
            w00 = (1 - fx) * (1 - fy)
            w01 = fx * (1 - fy)
            w10 = (1 - fx) * fy
            w11 = fx * fy
            for yy, xx, wt in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                lin = (yy * w + xx).ravel()
                contrib = (g * wt).reshape(-1, c)
                for ch in range(c):
                    flat[:, ch] += np.bincount(lin, weights=contrib[:, ch], minlength=h * w)
            grads.append(flat.reshape(h, w, c).astype(img.dtype))
        else:
            grads.append(None)
        if u.requires_grad:
            du = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
            grads.append(((g * du).sum(axis=-1) * inside_u).astype(u.dtype))
        else:
            grads.append(None)
        if v.requires_grad:
            dv = bot - top
            grads.append(((g * dv).sum(axis=-1) * inside_v).astype(v.dtype))
        else:
            grads.append(None)
        return tuple(grads)

    return _make(out, (img, u, v), bw, "bilinear_sample")


# -- backward pass ---------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf.

    Repeated calls add to existing leaf gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- optimizer -------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to `params`."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Adam over a list of parameter Tensors; missing grads count as zero."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)


# -- gradient checking -----------------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    reliable: bool
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray

    @property
    def status(self) -> str:
        if not self.reliable:
            return "unreliable"
        return "pass" if self.passed else "fail"


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    step: float = 1e-6,
    tolerance: float = 1e-6,
    kink_tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode and central-difference gradients of scalar `f`.

    Runs in float64. At a kink the gap between the one-sided slopes stays
    put when the step is halved (it shrinks linearly for smooth f); such a
    point is reported unreliable instead of failed.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(x0)

    def value(arr):
        return float(f(Tensor(arr)).data)

    def shifted(i, h):
        arr = x0.reshape(-1).copy()
        arr[i] += h
        return value(arr.reshape(x0.shape))

    f0 = value(x0)
    numeric = np.zeros(x0.size)
    kinked = False
    for i in range(x0.size):
        fp, fm = shifted(i, step), shifted(i, -step)
        numeric[i] = (fp - fm) / (2 * step)
        gap = abs((fp - f0) - (f0 - fm)) / step
        if gap > kink_tolerance:
            half = step / 2
            gap_half = abs((shifted(i, half) - f0) - (f0 - shifted(i, -half))) / half
            if gap_half > 0.75 * gap:
                kinked = True
    numeric = numeric.reshape(x0.shape)
    errs = rel_error(analytic, numeric)
    max_err = float(errs.max()) if errs.size else 0.0
    return GradCheckReport(
        max_rel_error=max_err,
        passed=max_err < tolerance,
        reliable=not kinked,
        analytic=analytic,
        numeric=numeric,
        rel_errors=errs,
    )


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)
