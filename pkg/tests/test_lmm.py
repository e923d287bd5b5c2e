import math

import numpy as np
import pytest

from gradcases import stage1_error
from granroute import tensor as T
from granroute.errors import MissingCheckpoint, VocabOverflow
from granroute.instruction_filter import InstructionTokens
from granroute.lmm import (
    LMMConfig,
    answer_logprob,
    answer_nll,
    build_text,
    forward_logits,
    init_lmm,
    lmm_forward,
    load_lmm,
    save_lmm,
    score_answers,
    stage1_loss,
    stage1_train_step,
)
from granroute.nn import attend, split_heads, merge_heads
from granroute.scaler import TokenGrid, build_pyramid
from granroute.scenes import make_corpus
from granroute.tensor import Tensor

SMALL = LMMConfig(d=16, n_blocks=2, n_heads=4, vocab=20, vis_dim=4, max_instr=4, max_answer=4)


def _grid(rng, shape=(4, 4, 4)):
    return TokenGrid(rng.normal(size=shape).astype(np.float32))


def test_forward_shape_and_determinism():
    rng = np.random.default_rng(0)
    lmm = init_lmm(SMALL, seed=0)
    grid = _grid(rng)
    instr = InstructionTokens(np.ones((3, 4)), [5, 6, 7])
    a = lmm_forward(lmm, grid, instr, [])
    b = lmm_forward(lmm, grid, instr, [])
    assert a.shape == (20,)
    np.testing.assert_array_equal(a, b)
    assert lmm_forward(lmm, grid, instr, [8, 9]).shape == (20,)


def test_vocab_overflow():
    lmm = init_lmm(SMALL, seed=0)
    with pytest.raises(VocabOverflow):
        lmm_forward(lmm, _grid(np.random.default_rng(0)), InstructionTokens(np.ones((1, 4)), [5]), [25])
    with pytest.raises(VocabOverflow):
        answer_logprob(lmm, _grid(np.random.default_rng(0)), InstructionTokens(np.ones((1, 4)), [5]), [3, 99])


def test_uniform_logits_give_log_vocab():
    lmm = init_lmm(LMMConfig(), seed=0)
    lmm.params["head.w"].data[:] = 0
    lmm.params["head.b"].data[:] = 0
    grid = TokenGrid(np.random.default_rng(0).normal(size=(24, 24, 16)).astype(np.float32))
    lp = answer_logprob(lmm, grid, InstructionTokens(np.ones((2, 16)), [5, 6]), [17])
    assert lp.sum_logprob == pytest.approx(-math.log(64), abs=1e-6)
    assert lp.T == 1
    assert lp.avg_logprob * lp.T == lp.sum_logprob


def test_avg_and_sum_orderings_agree():
    rng = np.random.default_rng(1)
    lmm = init_lmm(SMALL, seed=1)
    pyr = build_pyramid(_grid(rng), 3)
    instr = InstructionTokens(np.ones((2, 4)), [5, 6])
    lps = [answer_logprob(lmm, g, instr, [7, 8, 9]) for g in pyr.levels]
    for lp in lps:
        assert lp.sum_logprob <= 0
        assert lp.avg_logprob == lp.sum_logprob / 3
    assert np.argsort([l.sum_logprob for l in lps]).tolist() == np.argsort([l.avg_logprob for l in lps]).tolist()


def test_causality_exact():
    rng = np.random.default_rng(2)
    lmm = init_lmm(SMALL, seed=2)
    visual = rng.normal(size=(1, 16, 4)).astype(np.float32)
    text = build_text([5, 6], [7, 8, 9], SMALL)[None]
    base = forward_logits(lmm, visual, text).data
    for t in range(SMALL.max_instr + 1, text.shape[1]):
        changed = text.copy()
        changed[0, t] = 3 if text[0, t] != 3 else 4
        out = forward_logits(lmm, visual, changed).data
        np.testing.assert_array_equal(out[0, :t], base[0, :t])
        assert not np.array_equal(out[0, t:], base[0, t:])


def test_self_only_visual_attention_matches_full_mask():
    """The shortcut for the visual prefix equals explicit masked attention."""
    rng = np.random.default_rng(3)
    q = Tensor(rng.normal(size=(2, 5, 8)))
    k = Tensor(rng.normal(size=(2, 5, 8)))
    v = Tensor(rng.normal(size=(2, 5, 8)))
    mask = ~np.eye(5, dtype=bool)
    full = attend(split_heads(q, 2), split_heads(k, 2), split_heads(v, 2), mask[None, None])
    np.testing.assert_allclose(merge_heads(full).data, v.data, atol=1e-12)


def test_visual_tokens_condition_the_output():
    corpus = make_corpus(4, "train", 0)
    lmm = init_lmm(LMMConfig(), seed=0)
    s = corpus[0]
    grid = s.pyramid().levels[0]
    base = lmm_forward(lmm, grid, s.instruction)
    bumped = TokenGrid(grid.data.copy())
    bumped.data[0, 0] += 1.0
    assert np.linalg.norm(lmm_forward(lmm, bumped, s.instruction) - base) > 0


def test_stage1_single_level_is_plain_ce():
    rng = np.random.default_rng(4)
    lmm = init_lmm(SMALL, seed=4, dtype=np.float64)
    pyr = build_pyramid(_grid(rng), 1)
    answers = np.array([[7, 8]])
    loss = stage1_loss(lmm, [pyr], [[5, 6]], answers).item()
    nll = answer_nll(lmm, pyr.levels[0].flat()[None], [[5, 6]], answers).data
    assert loss == pytest.approx(nll.sum(), abs=1e-12)


def test_stage1_is_mean_over_levels():
    rng = np.random.default_rng(5)
    lmm = init_lmm(SMALL, seed=5, dtype=np.float64)
    pyrs = [build_pyramid(_grid(rng), 2) for _ in range(3)]
    ids = [[5], [6, 7], [8, 9, 10]]
    answers = rng.integers(2, 20, size=(3, 2))
    per_level = []
    for lv in range(2):
        visual = np.stack([p.levels[lv].flat() for p in pyrs])
        per_level.append(answer_nll(lmm, visual, ids, answers).data.sum() / 3)
    assert stage1_loss(lmm, pyrs, ids, answers).item() == pytest.approx(np.mean(per_level), abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_stage1_gradient(seed):
    assert stage1_error(seed) < 1e-4


def test_stage1_training_decreases_loss():
    corpus = make_corpus(256, "train", 1)
    pyrs = [s.pyramid() for s in corpus]
    lmm = init_lmm(LMMConfig(), seed=0)
    rng = np.random.default_rng(0)
    losses = []
    for step in range(200):
        idx = rng.choice(len(corpus), 8, replace=False)
        losses.append(
            stage1_train_step(lmm, [pyrs[i] for i in idx], [corpus[i].instruction for i in idx],
                              np.stack([corpus[i].answer for i in idx]), 1e-3)
        )
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    assert np.mean(losses[150:]) < np.mean(losses[100:150])


def test_score_answers_matches_answer_logprob():
    corpus = make_corpus(3, "test", 2)
    lmm = init_lmm(LMMConfig(), seed=0)
    visual = np.stack([s.grid.flat() for s in corpus])
    sums, _ = score_answers(lmm, visual, [s.instruction.ids for s in corpus], np.stack([s.answer for s in corpus]))
    for s, total in zip(corpus, sums):
        lp = answer_logprob(lmm, s.grid, s.instruction, s.answer, dtype=np.float64)
        assert lp.sum_logprob == pytest.approx(total, abs=1e-9)


def test_checkpoint_round_trip(tmp_path):
    lmm = init_lmm(SMALL, seed=6)
    save_lmm(lmm, tmp_path / "m")
    back = load_lmm(tmp_path / "m")
    assert back.config == lmm.config
    for name, t in lmm.params.items():
        np.testing.assert_array_equal(back.params[name].data, t.data)
    with pytest.raises(MissingCheckpoint):
        load_lmm(tmp_path / "nope")
