"""Layer helpers over ``tensor`` ops plus an Adam optimizer.

Parameters live in flat ``dict[str, Tensor]`` mappings so checkpoints, the
optimizer and the gradient checker can all walk them by name.
"""

from __future__ import annotations

from pathlib import Path
import json

import numpy as np

from . import tensor as T
from .errors import MissingCheckpoint
from .tensor import Tensor
from .tensorfile import load_tensor, save_tensor

Params = dict[str, Tensor]


def init_linear(params: Params, name: str, d_in: int, d_out: int, rng: np.random.Generator, dtype) -> None:
    params[f"{name}.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out)).astype(dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)


def init_norm(params: Params, name: str, d: int, dtype) -> None:
    params[f"{name}.g"] = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)


def linear(x: Tensor, p: Params, name: str) -> Tensor:
    return T.add(T.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def norm(x: Tensor, p: Params, name: str) -> Tensor:
    return T.layernorm(x, p[f"{name}.g"], p[f"{name}.b"])


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d/heads)"""
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, n_heads, d // n_heads)
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return x.transpose(axes)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return x.transpose(axes).reshape(*lead, n, h * dh)


def attend(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention; ``key_mask`` is True where a key is hidden."""
    # scaling q (n x dh) is cheaper than scaling the n x n score matrix
    scores = T.matmul(T.scale(q, 1.0 / np.sqrt(q.shape[-1])), k.transpose(_last_two(k.shape)))
    if key_mask is not None and np.any(key_mask):
        scores = T.mask_fill(scores, key_mask)
    return T.matmul(T.softmax(scores, axis=-1), v)


def _last_two(shape) -> tuple[int, ...]:
    n = len(shape)
    return tuple(range(n - 2)) + (n - 1, n - 2)


def cast_params(params: Params, dtype, requires_grad: bool = True) -> Params:
    return {k: Tensor(v.data.astype(dtype), requires_grad=requires_grad) for k, v in params.items()}


def zero_grad(params: Params) -> None:
    for p in params.values():
        p.grad = None


class Adam:
    """Adam with bias correction; updates ``Tensor.data`` in place."""

    def __init__(self, params: Params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = p.grad if grads is None else grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def save_params(directory: str | Path, params: Params, manifest: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, t in params.items():
        save_tensor(directory / f"{name}.tensor", t.data)
    manifest = dict(manifest, tensors=sorted(params))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_params(directory: str | Path) -> tuple[Params, dict]:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise MissingCheckpoint(f"no checkpoint manifest at {path}")
    manifest = json.loads(path.read_text())
    params = {
        name: Tensor(load_tensor(directory / f"{name}.tensor"), requires_grad=True)
        for name in manifest["tensors"]
    }
    return params, manifest
