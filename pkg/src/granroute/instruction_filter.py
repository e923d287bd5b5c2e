"""Top-k instruction token selection by cosine relevance to the finest visual tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroNormToken
from .scaler import TokenGrid

DEFAULT_K = 32


@dataclass
class InstructionTokens:
    vectors: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ShapeMismatch(f"instruction vectors must be (length>=1, d), got {self.vectors.shape}")
        if self.ids is not None:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != (self.vectors.shape[0],):
                raise ShapeMismatch("one id per instruction vector")

    @property
    def length(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class FilteredInstructions:
    vectors: np.ndarray
    kept_indices: np.ndarray
    k: int
    ids: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.vectors.shape[0]


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if (norms == 0).any():
        raise ZeroNormToken(f"zero-norm {what} token")
    return x / norms


def relevance_scores(instr: InstructionTokens, finest: TokenGrid) -> np.ndarray:
    """Best-match cosine similarity of each instruction token over all visual tokens."""
    if instr.dim != finest.dim:
        raise ShapeMismatch(f"instruction dim {instr.dim} vs visual dim {finest.dim}")
    q = _unit_rows(instr.vectors, "instruction")
    v = _unit_rows(finest.flat(), "visual")
    return np.clip((q @ v.T).max(axis=1), -1.0, 1.0)


def filter_top_k(instr: InstructionTokens, scores, k: int = DEFAULT_K) -> FilteredInstructions:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (instr.length,):
        raise ShapeMismatch(f"{scores.shape[0] if scores.ndim else 0} scores for {instr.length} tokens")
    if k < 1:
        raise ValueError("k must be >= 1")
    # stable sort keeps the earlier token first among equal scores
    order = np.argsort(-scores, kind="stable")[:k]
    kept = np.sort(order)
    ids = None if instr.ids is None else instr.ids[kept]
    return FilteredInstructions(instr.vectors[kept], kept, k, ids)


def select_instructions(instr: InstructionTokens, finest: TokenGrid, k: int = DEFAULT_K) -> FilteredInstructions:
    return filter_top_k(instr, relevance_scores(instr, finest), k)
