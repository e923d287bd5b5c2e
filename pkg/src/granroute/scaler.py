"""Fine-to-coarse visual token pyramid built by parameter-free average pooling.

Pooling alternates 1x2 (width) and 2x1 (height) so a 24x24 grid yields
24x12, 12x12, 12x6 and 6x6 grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OddAxis, ShapeMismatch
from .tensor import pool_pairs

WIDTH = "width"
HEIGHT = "height"


@dataclass
class TokenGrid:
    """A rows x cols grid of ``dim``-dimensional visual tokens."""

    data: np.ndarray
    level: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeMismatch(f"token grid must be rows x cols x dim, got {self.data.shape}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_tokens(self) -> int:
        return self.rows * self.cols

    def flat(self) -> np.ndarray:
        return self.data.reshape(self.n_tokens, self.dim)


@dataclass
class GranularityPyramid:
    levels: list[TokenGrid] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def token_counts(self) -> list[int]:
        return [g.n_tokens for g in self.levels]

    @property
    def dim(self) -> int:
        return self.levels[0].dim

    def __getitem__(self, i: int) -> TokenGrid:
        return self.levels[i]

    def subset(self, level_mask: Sequence[int]) -> "GranularityPyramid":
        """Keep only the listed levels (e.g. ``[0, 2, 4]`` for {576, 144, 36})."""
        mask = sorted(set(level_mask))
        if not mask or mask[0] < 0 or mask[-1] >= self.n_levels:
            raise ShapeMismatch(f"level mask {level_mask} outside 0..{self.n_levels - 1}")
        return GranularityPyramid([self.levels[i] for i in mask])


def avg_pool_step(grid: TokenGrid, axis: str) -> TokenGrid:
    if axis == WIDTH:
        ax = 1
    elif axis == HEIGHT:
        ax = 0
    else:
        raise ValueError(f"axis must be 'width' or 'height', got {axis!r}")
    if grid.data.shape[ax] % 2:
        raise OddAxis(f"{axis} of {grid.rows}x{grid.cols} grid is odd at level {grid.level}")
    return TokenGrid(pool_pairs(grid.data, ax), level=grid.level + 1)


def pooling_axes(n_levels: int) -> list[str]:
    return [WIDTH if i % 2 == 0 else HEIGHT for i in range(n_levels - 1)]


def build_pyramid(grid: TokenGrid, n_levels: int = 5) -> GranularityPyramid:
    """Return ``[grid, width-pooled, height-pooled, ...]`` with ``n_levels`` entries."""
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    base = TokenGrid(grid.data, level=0)
    levels = [base]
    for axis in pooling_axes(n_levels):
        levels.append(avg_pool_step(levels[-1], axis))
    return GranularityPyramid(levels)


def pyramid_token_counts(rows: int, cols: int, n_levels: int) -> list[int]:
    counts = [rows * cols]
    for axis in pooling_axes(n_levels):
        if axis == WIDTH:
            if cols % 2:
                raise OddAxis(f"cannot halve width {cols}")
            cols //= 2
        else:
            if rows % 2:
                raise OddAxis(f"cannot halve height {rows}")
            rows //= 2
        counts.append(rows * cols)
    return counts
