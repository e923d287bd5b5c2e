"""Instruction-conditioned visual granularity router.

One pre-norm Transformer layer fuses the flattened multi-granularity visual
tokens with the filtered instruction tokens, a shared per-token MLP emits
one logit per granularity, and a learnable voter row aggregates the
per-token logits into a single decision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyList, ShapeMismatch
from .instruction_filter import FilteredInstructions
from .nn import Params, attend, init_linear, init_norm, linear, load_params, merge_heads, norm, save_params, split_heads
from .scaler import GranularityPyramid, pyramid_token_counts
from .tensor import Tensor

DEFAULT_HEADS = 4
FFN_MULT = 4


@dataclass
class RouterParams:
    d: int
    n_levels: int
    k: int
    level_token_counts: list[int]
    tensors: Params = field(repr=False)
    n_heads: int = DEFAULT_HEADS

    @property
    def voter_length(self) -> int:
        return sum(self.level_token_counts) + self.k

    def manifest(self) -> dict:
        return {
            "d": self.d,
            "n_levels": self.n_levels,
            "k": self.k,
            "level_token_counts": list(self.level_token_counts),
            "n_heads": self.n_heads,
        }


@dataclass
class RouterOutput:
    z_out: Tensor
    z_final: Tensor
    probs: Tensor
    selected: int


def init_router_params(
    d: int,
    n_levels: int,
    k: int,
    seed: int,
    level_token_counts: Sequence[int] | None = None,
    n_heads: int = DEFAULT_HEADS,
    dtype=np.float32,
) -> RouterParams:
    if min(d, n_levels, k) < 1:
        raise ValueError("d, n_levels and k must be >= 1")
    if d % n_heads:
        raise ShapeMismatch(f"d={d} not divisible by {n_heads} heads")
    counts = list(level_token_counts) if level_token_counts is not None else pyramid_token_counts(24, 24, n_levels)
    if len(counts) != n_levels:
        raise ShapeMismatch(f"{len(counts)} level counts for {n_levels} levels")
    rng = np.random.default_rng(seed)
    p: Params = {}
    p["segment"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (n_levels + 1, d)).astype(dtype), requires_grad=True)
    init_norm(p, "ln1", d, dtype)
    init_linear(p, "qkv", d, 3 * d, rng, dtype)
    init_linear(p, "attn_out", d, d, rng, dtype)
    init_norm(p, "ln2", d, dtype)
    init_linear(p, "ffn_in", d, FFN_MULT * d, rng, dtype)
    init_linear(p, "ffn_out", FFN_MULT * d, d, rng, dtype)
    init_norm(p, "ln_mlp", d, dtype)
    init_linear(p, "mlp_in", d, d, rng, dtype)
    init_linear(p, "mlp_out", d, n_levels, rng, dtype)
    length = sum(counts) + k
    p["voter"] = Tensor(np.full((1, length), 1.0 / length, dtype=dtype), requires_grad=True)
    return RouterParams(d, n_levels, k, counts, p, n_heads)


def router_core(x: Tensor, key_mask: np.ndarray | None, voter: Tensor, p: Params, n_heads: int) -> tuple[Tensor, Tensor]:
    """Transformer layer + per-token MLP + voter over an already-assembled (L, d) input."""
    d = x.shape[-1]
    qkv = linear(norm(x, p, "ln1"), p, "qkv")
    kv = qkv
    if key_mask is not None and key_mask.any():
        # dropping hidden keys is the same as masking them (their weight is exactly 0)
        kv = qkv[np.flatnonzero(~key_mask)]
    q = split_heads(qkv[:, :d], n_heads)
    k = split_heads(kv[:, d : 2 * d], n_heads)
    v = split_heads(kv[:, 2 * d :], n_heads)
    x = x + linear(merge_heads(attend(q, k, v)), p, "attn_out")
    x = x + linear(T.gelu(linear(norm(x, p, "ln2"), p, "ffn_in")), p, "ffn_out")
    z_out = linear(T.gelu(linear(norm(x, p, "ln_mlp"), p, "mlp_in")), p, "mlp_out")
    return z_out, T.matmul(voter, z_out)


def assemble_inputs(
    pyramid: GranularityPyramid, instr: FilteredInstructions | None, params: RouterParams
) -> tuple[Tensor, np.ndarray]:
    """Segment-tagged [level tokens...; instruction slots] and the padding mask."""
    p = params.tensors
    dtype = p["voter"].dtype
    if pyramid.token_counts != list(params.level_token_counts):
        raise ShapeMismatch(f"pyramid counts {pyramid.token_counts} vs router {params.level_token_counts}")
    if pyramid.dim != params.d:
        raise ShapeMismatch(f"token dim {pyramid.dim} vs router d={params.d}")
    seg = p["segment"]
    parts = [T.add(Tensor(g.flat().astype(dtype)), seg[i : i + 1]) for i, g in enumerate(pyramid.levels)]
    slots = np.zeros((params.k, params.d), dtype=dtype)
    n_real = 0
    if instr is not None:
        if instr.vectors.shape[-1] != params.d:
            raise ShapeMismatch("instruction dim differs from router d")
        n_real = min(instr.length, params.k)
        slots[:n_real] = instr.vectors[:n_real]
    n_lv = params.n_levels
    parts.append(T.add(Tensor(slots), seg[n_lv : n_lv + 1]))
    pad = np.zeros(params.voter_length, dtype=bool)
    pad[params.voter_length - params.k + n_real :] = True
    return T.concat(parts, axis=0), pad


def router_forward(
    pyramid: GranularityPyramid, instr: FilteredInstructions | None, params: RouterParams
) -> RouterOutput:
    """Score every granularity for one image; ``instr=None`` routes on the image alone."""
    x, pad = assemble_inputs(pyramid, instr, params)
    voter = params.tensors["voter"]
    if pad.any():
        voter = T.mul(voter, Tensor((~pad)[None, :].astype(voter.dtype)))
    z_out, z_final = router_core(x, pad if pad.any() else None, voter, params.tensors, params.n_heads)
    probs = T.softmax(z_final, axis=-1)
    return RouterOutput(z_out, z_final, probs, select_level(probs.data[0]))


def select_level(scores: np.ndarray) -> int:
    """Argmax that prefers the coarser (higher-index) level on exact ties."""
    scores = np.asarray(scores).reshape(-1)
    return int(scores.size - 1 - np.argmax(scores[::-1]))


def softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def aggregate_images(outputs: Sequence[RouterOutput]) -> tuple[np.ndarray, int]:
    """Average ``z_final`` over a global image and its local crops, then pick a level."""
    if not outputs:
        raise EmptyList("no router outputs to aggregate")
    sizes = {o.z_final.shape[-1] for o in outputs}
    if len(sizes) != 1:
        raise ShapeMismatch(f"mixed granularity counts {sorted(sizes)}")
    z = np.mean([o.z_final.data.reshape(-1).astype(np.float64) for o in outputs], axis=0)
    probs = softmax_np(z)
    return probs, select_level(probs)


def save_router(params: RouterParams, directory: str | Path) -> None:
    save_params(directory, params.tensors, params.manifest())


def load_router(directory: str | Path) -> RouterParams:
    tensors, m = load_params(directory)
    return RouterParams(m["d"], m["n_levels"], m["k"], list(m["level_token_counts"]), tensors, m.get("n_heads", DEFAULT_HEADS))
