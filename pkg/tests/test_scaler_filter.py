import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from granroute.errors import OddAxis, ShapeMismatch, ZeroNormToken
from granroute.instruction_filter import InstructionTokens, filter_top_k, relevance_scores, select_instructions
from granroute.scaler import GranularityPyramid, TokenGrid, avg_pool_step, build_pyramid, pyramid_token_counts


def test_pool_two_by_two_width():
    a, b, c, d = 1.0, 3.0, -2.0, 6.0
    grid = TokenGrid(np.array([[[a], [b]], [[c], [d]]]))
    out = avg_pool_step(grid, "width")
    assert out.data.shape == (2, 1, 1)
    np.testing.assert_array_equal(out.data[:, 0, 0], [(a + b) / 2, (c + d) / 2])
    assert out.level == 1


@pytest.mark.parametrize("axis", ["width", "height"])
def test_pool_constant_grid(axis):
    v = np.array([0.5, -1.25, 3.0])
    out = avg_pool_step(TokenGrid(np.tile(v, (4, 6, 1))), axis)
    assert np.all(out.data == v)


def test_pool_24x24_width():
    out = avg_pool_step(TokenGrid(np.zeros((24, 24, 3))), "width")
    assert (out.rows, out.cols) == (24, 12)


def test_pool_errors():
    with pytest.raises(OddAxis):
        avg_pool_step(TokenGrid(np.zeros((4, 3, 2))), "width")
    with pytest.raises(ValueError):
        avg_pool_step(TokenGrid(np.zeros((4, 4, 2))), "diagonal")
    with pytest.raises(OddAxis, match="level"):
        build_pyramid(TokenGrid(np.zeros((6, 6, 1))), 5)


def test_pyramid_counts_and_shapes():
    grid = TokenGrid(np.random.default_rng(0).normal(size=(24, 24, 16)).astype(np.float32))
    pyr = build_pyramid(grid, 5)
    assert pyr.token_counts == [576, 288, 144, 72, 36]
    assert [(g.rows, g.cols) for g in pyr.levels] == [(24, 24), (24, 12), (12, 12), (12, 6), (6, 6)]
    assert pyramid_token_counts(24, 24, 5) == [576, 288, 144, 72, 36]
    assert build_pyramid(grid, 1).token_counts == [576]


def test_pyramid_preserves_mean_and_is_reproducible():
    grid = TokenGrid(np.random.default_rng(1).normal(size=(24, 24, 16)).astype(np.float32))
    pyr = build_pyramid(grid, 5)
    base = grid.flat().astype(np.float64).mean(axis=0)
    for g in pyr.levels:
        assert np.abs(g.flat().astype(np.float64).mean(axis=0) - base).max() < 1e-6
    again = build_pyramid(pyr.levels[0], 5)
    for a, b in zip(pyr.levels, again.levels):
        np.testing.assert_array_equal(a.data, b.data)


def test_checkerboard_pair_annihilates():
    data = np.zeros((2, 2, 1))
    data[0, 0, 0], data[0, 1, 0] = 3.5, -3.5
    assert np.all(avg_pool_step(TokenGrid(data), "width").data == 0)


def test_subset():
    pyr = build_pyramid(TokenGrid(np.zeros((24, 24, 2))), 5)
    assert pyr.subset([0, 2, 4]).token_counts == [576, 144, 36]
    with pytest.raises(ShapeMismatch):
        pyr.subset([5])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5))
def test_halving_property(r, c, n):
    rows, cols = 2**r * 3, 2**c * 2
    n = min(n, 1 + min(2 * r, 2 * c - 1))
    pyr = build_pyramid(TokenGrid(np.ones((rows, cols, 2))), n)
    for a, b in zip(pyr.token_counts, pyr.token_counts[1:]):
        assert b * 2 == a


# instruction filter ---------------------------------------------------------


def _example():
    instr = InstructionTokens(np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]))
    grid = TokenGrid(np.array([[[1.0, 0.0], [0.8, 0.6]]]))
    return instr, grid


def test_relevance_hand_example():
    instr, grid = _example()
    np.testing.assert_allclose(relevance_scores(instr, grid), [1.0, 0.6, 0.96], atol=1e-12)


def test_relevance_identity_and_orthogonal():
    grid = TokenGrid(np.array([[[1.0, 2.0, 0.0], [3.0, -1.0, 0.0]]]))
    scores = relevance_scores(InstructionTokens(np.array([[3.0, -1.0, 0.0], [0.0, 0.0, 2.0]])), grid)
    assert scores[0] == pytest.approx(1.0)
    assert scores[1] == 0.0


def test_relevance_errors():
    grid = TokenGrid(np.ones((1, 2, 2)))
    with pytest.raises(ZeroNormToken):
        relevance_scores(InstructionTokens(np.zeros((1, 2))), grid)
    with pytest.raises(ShapeMismatch):
        relevance_scores(InstructionTokens(np.ones((1, 3))), grid)


def test_filter_top_k_examples():
    instr, grid = _example()
    assert select_instructions(instr, grid, 2).kept_indices.tolist() == [0, 2]
    assert filter_top_k(instr, [1.0, 0.6, 0.96], 10).kept_indices.tolist() == [0, 1, 2]
    assert filter_top_k(instr, [0.3, 0.3, 0.3], 2).kept_indices.tolist() == [0, 1]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_filter_properties(seed):
    rng = np.random.default_rng(seed)
    n, d, k = int(rng.integers(1, 12)), int(rng.integers(2, 6)), int(rng.integers(1, 10))
    instr = InstructionTokens(rng.normal(size=(n, d)), np.arange(n))
    grid = TokenGrid(rng.normal(size=(2, 3, d)))
    out = select_instructions(instr, grid, k)
    assert out.length == min(k, n)
    assert np.all(np.diff(out.kept_indices) > 0)
    np.testing.assert_array_equal(out.vectors, instr.vectors[out.kept_indices])
    # positive rescaling of tokens or visual vectors leaves scores alone
    scaled = relevance_scores(
        InstructionTokens(instr.vectors * rng.uniform(0.1, 10, size=(n, 1))), TokenGrid(grid.data * 3.7)
    )
    np.testing.assert_allclose(scaled, relevance_scores(instr, grid), atol=1e-6)
