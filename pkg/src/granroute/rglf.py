"""Router training from language-model feedback.

The frozen LMM scores the gold answer under every granularity.  Levels are
ranked by summed log-probability, pairwise hinge margins grow with rank
distance and with the per-token log-prob gap, and a cross-entropy term pulls
the router toward the single best level.  A Gumbel-Softmax trainer is kept
alongside as the ablation baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .instruction_filter import FilteredInstructions, select_instructions
from .lmm import AnswerLogProb, ToyLMM, score_answers
from .nn import Adam, zero_grad
from .router import RouterOutput, RouterParams, router_forward, select_level
from .scaler import GranularityPyramid
from .scenes import SceneSample
from .tensor import Tensor


@dataclass
class RGLFConfig:
    alpha: float = 0.1
    lr: float = 1e-3
    seed: int = 0
    gumbel_mode: bool = False
    gumbel_temperature: float = 1.0
    use_rank: bool = True
    batch_size: int = 32
    image_only: bool = False
    cache_feedback: bool = False
    # log-prob gaps (nats) below this are treated as ties, which then go
    # to the coarser level
    feedback_resolution: float = 0.05

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class FeedbackRecord:
    logprobs: list[AnswerLogProb]
    perm: np.ndarray
    sorted_avg: np.ndarray
    margins: np.ndarray

    @property
    def best(self) -> int:
        """Level with the highest answer log-prob (coarser on ties)."""
        return int(self.perm[0])

    @property
    def n_levels(self) -> int:
        return len(self.logprobs)


def rank_by_feedback(logprobs: Sequence[AnswerLogProb]) -> FeedbackRecord:
    """Sort levels by descending summed log-prob and fill the adaptive margins."""
    sums = np.array([lp.sum_logprob for lp in logprobs], dtype=np.float64)
    avgs = np.array([lp.avg_logprob for lp in logprobs], dtype=np.float64)
    n = sums.size
    levels = np.arange(n)
    # lexsort: last key is primary; equal sums put the coarser level first
    perm = np.lexsort((-levels, -sums))
    sorted_avg = avgs[perm]
    margins = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            margins[i, j] = (j - i) * (sorted_avg[i] - sorted_avg[j])
    if (margins < 0).any():
        raise ValueError("negative margin: per-token and summed log-prob orderings disagree")
    return FeedbackRecord(list(logprobs), perm, sorted_avg, margins)


def ranking_loss(scores, margins) -> Tensor:
    """Sum over pairs i < j of max(0, s_j - s_i + margin_ij), scores in feedback order."""
    s = scores if isinstance(scores, Tensor) else Tensor(np.asarray(scores, dtype=np.float64))
    s = s.reshape(-1)
    n = s.shape[0]
    margins = np.asarray(margins, dtype=s.dtype)
    if n < 2:
        return T.scale(s.sum(), 0.0)
    upper = np.triu(np.ones((n, n), dtype=s.dtype), k=1)
    diff = T.add(s.reshape(1, n), T.scale(s.reshape(n, 1), -1.0))
    hinge = T.relu(T.add(diff, Tensor(margins * upper)))
    return T.mul(hinge, Tensor(upper)).sum()


def ce_target_loss(probs, logprobs: Sequence[AnswerLogProb]) -> Tensor:
    """-log p[k*] where k* maximizes the summed answer log-prob."""
    p = probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float64))
    best = select_level([lp.sum_logprob for lp in logprobs])
    return T.cross_entropy(p.reshape(1, -1), [best], from_logits=False, reduction="sum")


def rglf_losses(out: RouterOutput, fb: FeedbackRecord, cfg: RGLFConfig) -> tuple[Tensor, Tensor, Tensor]:
    """(total, rank, ce) for one routed image."""
    scores = T.log(out.probs).reshape(-1)[fb.perm]
    rank = ranking_loss(scores, fb.margins)
    ce = ce_target_loss(out.probs, fb.logprobs)
    return combine_losses(rank, ce, cfg), rank, ce


def combine_losses(rank: Tensor, ce: Tensor, cfg: RGLFConfig) -> Tensor:
    """rank + alpha * ce; a disabled term is left out of the graph entirely."""
    parts = []
    if cfg.use_rank:
        parts.append(rank)
    if cfg.alpha:
        parts.append(T.scale(ce, cfg.alpha))
    total = parts[0] if parts else T.scale(rank, 0.0)
    for extra in parts[1:]:
        total = total + extra
    return total


def gumbel_select(z_final, temperature: float, seed: int, hard: bool = True) -> Tensor:
    """Gumbel-Softmax sample of a level.

    With ``hard`` the forward value is the one-hot argmax while gradients
    follow the relaxed sample (straight-through).
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    z = z_final if isinstance(z_final, Tensor) else Tensor(np.asarray(z_final, dtype=np.float64))
    u = np.random.default_rng(seed).random(z.shape)
    noise = -np.log(-np.log(np.clip(u, 1e-20, 1.0)) + 1e-20)
    soft = T.softmax(T.scale(T.add(z, Tensor(noise.astype(z.dtype))), 1.0 / temperature), axis=-1)
    if not hard:
        return soft
    onehot = np.zeros_like(soft.data)
    flat = soft.data.reshape(-1, soft.shape[-1])
    np.put_along_axis(onehot.reshape(flat.shape), flat.argmax(axis=-1)[:, None], 1.0, axis=-1)
    return T.add(soft, Tensor(onehot - soft.data))


def gumbel_loss(out: RouterOutput, logprobs: Sequence[AnswerLogProb], cfg: RGLFConfig, seed: int) -> Tensor:
    """LMM answer NLL at the straight-through selected level."""
    y = gumbel_select(out.z_final, cfg.gumbel_temperature, seed)
    nll = np.array([[-lp.sum_logprob] for lp in logprobs], dtype=y.dtype)
    return T.matmul(y, Tensor(nll)).sum()


# feedback ------------------------------------------------------------------


def snap_feedback(sums: np.ndarray, resolution: float) -> np.ndarray:
    """Snap each row of summed log-probs down onto a grid anchored at the row max.

    Levels within ``resolution`` of the best one land exactly on the best
    value, so the coarse tie-break picks the cheapest near-optimal level.
    The snapping is monotone, so margins stay non-negative.
    """
    sums = np.asarray(sums, dtype=np.float64)
    if not resolution:
        return sums
    top = sums.max(axis=-1, keepdims=True)
    return top - np.floor((top - sums) / resolution) * resolution


def level_feedback(
    lmm: ToyLMM,
    pyramids: Sequence[GranularityPyramid],
    instr_ids: Sequence[Sequence[int]],
    answers: np.ndarray,
    resolution: float = 0.05,
) -> tuple[list[list[AnswerLogProb]], np.ndarray]:
    """Per-sample, per-level answer log-probs plus exact-match flags (B, N)."""
    answers = np.asarray(answers, dtype=np.int64)
    n = pyramids[0].n_levels
    t_len = answers.shape[1]
    sums = np.zeros((len(pyramids), n))
    correct = np.zeros((len(pyramids), n), dtype=bool)
    for level in range(n):
        visual = np.stack([p.levels[level].flat() for p in pyramids])
        sums[:, level], correct[:, level] = score_answers(lmm, visual, instr_ids, answers, np.float64)
    sums = snap_feedback(sums, resolution)
    records = [[AnswerLogProb(float(s), float(s) / t_len, t_len) for s in row] for row in sums]
    return records, correct


# training loop -------------------------------------------------------------


@dataclass
class Stage2Inputs:
    pyramid: GranularityPyramid
    instr: FilteredInstructions | None
    instr_ids: np.ndarray
    answer: np.ndarray


def prepare(sample: SceneSample, params: RouterParams, level_mask: Sequence[int] | None, image_only: bool, n_levels: int = 5) -> Stage2Inputs:
    full = sample.pyramid(n_levels)
    pyramid = full if level_mask is None else full.subset(level_mask)
    instr = None if image_only else select_instructions(sample.instruction, full.levels[0], params.k)
    return Stage2Inputs(pyramid, instr, sample.instruction.ids, sample.answer)


def rglf_step(
    batch: Sequence[Stage2Inputs],
    lmm: ToyLMM,
    params: RouterParams,
    cfg: RGLFConfig,
    optimizer: Adam,
    feedback: Sequence[Sequence[AnswerLogProb]] | None = None,
    step: int = 0,
) -> tuple[float, float, float, list[int]]:
    """One router update over ``batch``; the LMM is only read.

    Returns mean (total, rank, ce) and the levels the router picked.
    """
    if feedback is None:
        feedback, _ = level_feedback(
            lmm, [b.pyramid for b in batch], [b.instr_ids for b in batch],
            np.stack([b.answer for b in batch]), cfg.feedback_resolution,
        )
    zero_grad(params.tensors)
    totals = np.zeros(3)
    picks = []
    scale = 1.0 / len(batch)
    for i, (item, lps) in enumerate(zip(batch, feedback)):
        out = router_forward(item.pyramid, item.instr, params)
        picks.append(out.selected)
        fb = rank_by_feedback(lps)
        if cfg.gumbel_mode:
            seed = int(np.random.SeedSequence([cfg.seed, step, i]).generate_state(1)[0])
            total = gumbel_loss(out, lps, cfg, seed)
            rank, ce = ranking_loss(np.zeros(1), np.zeros((1, 1))), ce_target_loss(out.probs.data, lps)
        else:
            total, rank, ce = rglf_losses(out, fb, cfg)
        if total.requires_grad:
            T.scale(total, scale).backward()
        totals += [total.item(), rank.item(), ce.item()]
    optimizer.step()
    totals *= scale
    return float(totals[0]), float(totals[1]), float(totals[2]), picks


def train_router(
    lmm: ToyLMM,
    samples: Sequence[SceneSample],
    params: RouterParams,
    cfg: RGLFConfig,
    steps: int,
    level_mask: Sequence[int] | None = None,
    log_path: str | Path | None = None,
    n_levels: int = 5,
    progress: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Run ``steps`` router updates over shuffled epochs of ``samples``."""
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(params.tensors, lr=cfg.lr)
    cache: dict[int, list[AnswerLogProb]] = {}
    log: list[dict] = []
    order = np.array([], dtype=np.int64)
    cursor = 0
    fh = open(log_path, "w") if log_path is not None else None
    try:
        for step in range(steps):
            if cursor + cfg.batch_size > order.size:
                order = rng.permutation(len(samples))
                cursor = 0
            idx = order[cursor : cursor + cfg.batch_size]
            cursor += cfg.batch_size
            batch = [prepare(samples[i], params, level_mask, cfg.image_only, n_levels) for i in idx]
            missing = [j for j, i in enumerate(idx) if not (cfg.cache_feedback and int(i) in cache)]
            fresh = {}
            if missing:
                lps, _ = level_feedback(
                    lmm, [batch[j].pyramid for j in missing], [batch[j].instr_ids for j in missing],
                    np.stack([batch[j].answer for j in missing]), cfg.feedback_resolution,
                )
                fresh = dict(zip(missing, lps))
                if cfg.cache_feedback:
                    cache.update({int(idx[j]): fresh[j] for j in missing})
            feedback = [fresh[j] if j in fresh else cache[int(i)] for j, i in enumerate(idx)]
            total, rank, ce, picks = rglf_step(batch, lmm, params, cfg, optimizer, feedback, step)
            hist = np.bincount(picks, minlength=params.n_levels).tolist()
            entry = {"step": step, "rank_loss": rank, "ce_loss": ce, "total": total, "selected_level_histogram": hist}
            log.append(entry)
            if fh is not None:
                fh.write(json.dumps(entry) + "\n")
            if progress is not None:
                progress(entry)
    finally:
        if fh is not None:
            fh.close()
    return log
