"""Small parameter containers on top of diffcore."""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc


class Module:
    """Anything that owns named parameter Tensors (possibly via sub-modules)."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, dc.Tensor]]:
        out = []
        for name, val in vars(self).items():
            if isinstance(val, dc.Tensor) and val.requires_grad:
                out.append((prefix + name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(prefix + name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[dc.Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise KeyError(f"state dict keys differ: {missing[:5]}")
        for k, p in params.items():
            if p.shape != state[k].shape:
                raise ValueError(f"{k}: expected {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, init: str = "he"):
        if init == "zero":
            w = np.zeros((n_in, n_out), dtype=np.float32)
        elif init == "small":
            w = (rng.standard_normal((n_in, n_out)) * 0.01).astype(np.float32)
        else:
            w = dc.he_normal(rng, (n_in, n_out), n_in)
        self.weight = dc.Tensor(w, requires_grad=True)
        self.bias = dc.Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: dc.Tensor) -> dc.Tensor:
        return dc.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1, init: str = "he"):
        shape = (c_out, c_in, k, k)
        if init == "zero":
            w = np.zeros(shape, dtype=np.float32)
        else:
            w = dc.he_normal(rng, shape, c_in * k * k)
        self.weight = dc.Tensor(w, requires_grad=True)
        self.bias = dc.Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: dc.Tensor) -> dc.Tensor:
        return dc.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def conv_out_size(n: int, stride: int) -> int:
    return int(math.ceil(n / stride))
