"""Tiny decoder-only language model over [visual tokens; instruction; answer].

Visual tokens are a non-interacting prefix: each one attends only to itself,
while text positions attend to every visual token and causally to earlier
text.  Because a single-key softmax is exactly 1, a visual token's attention
output is just its own value vector, so the visual stream never needs the
quadratic score matrix.  Text is laid out as

    [instruction ids padded to max_instr] [SEP] [answer[:-1]]

and the logits at the last ``T`` positions predict the ``T`` answer tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch, VocabOverflow
from .instruction_filter import InstructionTokens
from .nn import Adam, Params, attend, cast_params, init_linear, init_norm, linear, load_params, merge_heads, norm, save_params, split_heads, zero_grad
from .scaler import GranularityPyramid, TokenGrid
from .tensor import Tensor


@dataclass(frozen=True)
class LMMConfig:
    d: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    vocab: int = 64
    vis_dim: int = 16
    max_instr: int = 12
    max_answer: int = 8
    pad_id: int = 0
    sep_id: int = 1

    @property
    def max_text(self) -> int:
        return self.max_instr + self.max_answer


@dataclass
class ToyLMM:
    config: LMMConfig
    params: Params = field(repr=False)
    optimizer: Adam | None = field(default=None, repr=False)
    _cast: dict = field(default_factory=dict, repr=False)

    def params_as(self, dtype) -> Params:
        """Frozen copy of the parameters in ``dtype`` (cached until the next update)."""
        key = np.dtype(dtype).str
        if np.dtype(dtype) == self.params["tok_emb"].dtype:
            return self.params
        if key not in self._cast:
            self._cast[key] = cast_params(self.params, dtype, requires_grad=False)
        return self._cast[key]


@dataclass(frozen=True)
class AnswerLogProb:
    sum_logprob: float
    avg_logprob: float
    T: int


def init_lmm(config: LMMConfig = LMMConfig(), seed: int = 0, dtype=np.float32) -> ToyLMM:
    c = config
    if c.d % c.n_heads:
        raise ShapeMismatch("d must be divisible by n_heads")
    if c.vis_dim > c.d:
        raise ShapeMismatch("visual tokens wider than the model")
    rng = np.random.default_rng(seed)
    p: Params = {
        "tok_emb": Tensor(rng.normal(0.0, 0.5, (c.vocab, c.d)).astype(dtype), requires_grad=True),
        "pos_emb": Tensor(rng.normal(0.0, 0.1, (c.max_text, c.d)).astype(dtype), requires_grad=True),
        "vis_emb": Tensor(np.zeros((1, c.d), dtype=dtype), requires_grad=True),
    }
    for b in range(c.n_blocks):
        init_norm(p, f"b{b}.ln1", c.d, dtype)
        init_linear(p, f"b{b}.qkv", c.d, 3 * c.d, rng, dtype)
        init_linear(p, f"b{b}.attn_out", c.d, c.d, rng, dtype)
        init_norm(p, f"b{b}.ln2", c.d, dtype)
        init_linear(p, f"b{b}.ffn_in", c.d, 4 * c.d, rng, dtype)
        init_linear(p, f"b{b}.ffn_out", 4 * c.d, c.d, rng, dtype)
    init_norm(p, "ln_f", c.d, dtype)
    init_linear(p, "head", c.d, c.vocab, rng, dtype)
    return ToyLMM(c, p)


def build_text(instr_ids: Sequence[int], answer_inputs: Sequence[int], config: LMMConfig) -> np.ndarray:
    instr_ids = np.asarray(instr_ids, dtype=np.int64)
    if instr_ids.size > config.max_instr:
        raise ShapeMismatch(f"instruction of {instr_ids.size} ids exceeds max_instr={config.max_instr}")
    if len(answer_inputs) + 1 > config.max_answer:
        raise ShapeMismatch("answer longer than max_answer")
    text = np.full(config.max_instr + 1 + len(answer_inputs), config.pad_id, dtype=np.int64)
    text[: instr_ids.size] = instr_ids
    text[config.max_instr] = config.sep_id
    text[config.max_instr + 1 :] = answer_inputs
    if text.max() >= config.vocab or text.min() < 0:
        raise VocabOverflow(f"token id outside vocab of {config.vocab}")
    return text


def forward_logits(lmm: ToyLMM, visual: np.ndarray, text: np.ndarray, params: Params | None = None) -> Tensor:
    """Logits (B, n_text, vocab) for visual (B, n_vis, vis_dim) and text ids (B, n_text)."""
    c = lmm.config
    p = lmm.params if params is None else params
    dt = p["tok_emb"].dtype
    visual = np.asarray(visual)
    text = np.asarray(text, dtype=np.int64)
    if visual.ndim != 3 or visual.shape[-1] != c.vis_dim:
        raise ShapeMismatch(f"visual batch must be (B, n, {c.vis_dim}), got {visual.shape}")
    B, nv, _ = visual.shape
    nt = text.shape[1]
    if text.shape[0] != B or nt > c.max_text:
        raise ShapeMismatch(f"text {text.shape} vs visual batch {B}")
    d = c.d

    # identity connector: visual features occupy the leading channels of the model width
    lifted = np.zeros((B, nv, d), dtype=dt)
    lifted[..., : c.vis_dim] = visual
    xv = T.add(Tensor(lifted), p["vis_emb"])
    xt = T.add(T.embed_lookup(p["tok_emb"], text), p["pos_emb"][:nt])

    causal = np.triu(np.ones((nt, nt), dtype=bool), k=1)
    mask = np.concatenate([np.zeros((B, nt, nv), dtype=bool), np.broadcast_to(causal, (B, nt, nt))], axis=2)
    mask |= np.concatenate([np.zeros((B, nv), dtype=bool), text == c.pad_id], axis=1)[:, None, :]
    mask = mask[:, None, :, :]

    for b in range(c.n_blocks):
        last = b == c.n_blocks - 1
        hv = norm(xv, p, f"b{b}.ln1")
        ht = norm(xt, p, f"b{b}.ln1")
        w, bias = p[f"b{b}.qkv.w"], p[f"b{b}.qkv.b"]
        kv_v = T.add(T.matmul(hv, w[:, d:]), bias[d:])
        qkv_t = linear(ht, p, f"b{b}.qkv")
        q = split_heads(qkv_t[..., :d], c.n_heads)
        k = split_heads(T.concat([kv_v[..., :d], qkv_t[..., d : 2 * d]], axis=1), c.n_heads)
        v = split_heads(T.concat([kv_v[..., d:], qkv_t[..., 2 * d :]], axis=1), c.n_heads)
        xt = xt + linear(merge_heads(attend(q, k, v, mask)), p, f"b{b}.attn_out")
        xt = xt + _ffn(norm(xt, p, f"b{b}.ln2"), p, b)
        if not last:
            # self-only attention output of a visual token is its own value
            xv = xv + linear(kv_v[..., d:], p, f"b{b}.attn_out")
            xv = xv + _ffn(norm(xv, p, f"b{b}.ln2"), p, b)
    return linear(norm(xt, p, "ln_f"), p, "head")


def _ffn(x: Tensor, p: Params, b: int) -> Tensor:
    return linear(T.gelu(linear(x, p, f"b{b}.ffn_in")), p, f"b{b}.ffn_out")


def _instr_ids(instr: InstructionTokens | Sequence[int]) -> np.ndarray:
    if isinstance(instr, InstructionTokens):
        if instr.ids is None:
            raise ValueError("the language model needs instruction token ids")
        return instr.ids
    return np.asarray(instr, dtype=np.int64)


def lmm_forward(lmm: ToyLMM, visual: TokenGrid, instr: InstructionTokens, answer_prefix: Sequence[int] = ()) -> np.ndarray:
    """Next-token logits (vocab,) after the given answer prefix."""
    text = build_text(_instr_ids(instr), list(answer_prefix), lmm.config)
    logits = forward_logits(lmm, visual.flat()[None], text[None])
    return logits.data[0, -1]


def answer_positions(config: LMMConfig, T_len: int) -> slice:
    return slice(config.max_instr, config.max_instr + T_len)


def answer_nll(lmm: ToyLMM, visual: np.ndarray, instr_ids: Sequence[Sequence[int]], answers: np.ndarray, params: Params | None = None) -> Tensor:
    """Per-position teacher-forced NLL (B, T) for one level's visual batch."""
    answers = np.asarray(answers, dtype=np.int64)
    if answers.ndim != 2 or answers.shape[1] < 1:
        raise ShapeMismatch("answers must be (B, T>=1)")
    if answers.max() >= lmm.config.vocab or answers.min() < 0:
        raise VocabOverflow("answer id outside vocab")
    text = np.stack([build_text(ids, ans[:-1], lmm.config) for ids, ans in zip(instr_ids, answers)])
    logits = forward_logits(lmm, visual, text, params)
    logits = logits[:, answer_positions(lmm.config, answers.shape[1]), :]
    return T.cross_entropy(logits, answers, from_logits=True, reduction="none")


def score_answers(
    lmm: ToyLMM, visual: np.ndarray, instr_ids: Sequence[Sequence[int]], answers: np.ndarray, dtype=np.float64
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced answer log-prob sums (B,) and exact-match flags (B,)."""
    answers = np.asarray(answers, dtype=np.int64)
    if answers.size and (answers.min() < 0 or answers.max() >= lmm.config.vocab):
        raise VocabOverflow("answer id outside vocab")
    params = lmm.params_as(dtype)
    text = np.stack([build_text(ids, ans[:-1], lmm.config) for ids, ans in zip(instr_ids, answers)])
    logits = forward_logits(lmm, np.asarray(visual, dtype=dtype), text, params).data
    logits = logits[:, answer_positions(lmm.config, answers.shape[1]), :].astype(np.float64)
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    gold = np.take_along_axis(logp, answers[..., None], axis=-1)[..., 0]
    correct = (logits.argmax(axis=-1) == answers).all(axis=1)
    return gold.sum(axis=1), correct


def answer_logprob(lmm: ToyLMM, visual: TokenGrid, instr: InstructionTokens, answer: Sequence[int], dtype=None) -> AnswerLogProb:
    answer = np.asarray(answer, dtype=np.int64)
    if answer.size < 1:
        raise ValueError("answer must have at least one token")
    dtype = lmm.params["tok_emb"].dtype if dtype is None else dtype
    sums, _ = score_answers(lmm, visual.flat()[None], [_instr_ids(instr)], answer[None], dtype)
    total = float(sums[0])
    return AnswerLogProb(total, total / answer.size, int(answer.size))


def stage1_loss(
    lmm: ToyLMM,
    pyramids: Sequence[GranularityPyramid],
    instr_ids: Sequence[Sequence[int]],
    answers: np.ndarray,
    params: Params | None = None,
) -> Tensor:
    """Mean over granularities of the summed answer cross-entropy, averaged over the batch."""
    answers = np.asarray(answers, dtype=np.int64)
    n_levels = {p.n_levels for p in pyramids}
    if len(n_levels) != 1:
        raise ShapeMismatch("all pyramids in a batch need the same number of levels")
    n = n_levels.pop()
    B = len(pyramids)
    total = None
    for level in range(n):
        visual = np.stack([p.levels[level].flat() for p in pyramids])
        nll = answer_nll(lmm, visual, instr_ids, answers, params)
        term = T.scale(nll.sum(), 1.0 / (n * B))
        total = term if total is None else total + term
    return total


def stage1_train_step(
    lmm: ToyLMM,
    pyramid: GranularityPyramid | Sequence[GranularityPyramid],
    instr: InstructionTokens | Sequence[InstructionTokens],
    answer: Sequence[int] | np.ndarray,
    lr: float = 1e-3,
) -> float:
    """One Adam update on the multi-granularity loss; accepts one sample or a batch."""
    if isinstance(pyramid, GranularityPyramid):
        pyramids, instrs, answers = [pyramid], [instr], np.asarray([answer])
    else:
        pyramids, instrs, answers = list(pyramid), list(instr), np.asarray(answer)
    if lmm.optimizer is None:
        lmm.optimizer = Adam(lmm.params, lr=lr)
    lmm.optimizer.lr = lr
    zero_grad(lmm.params)
    loss = stage1_loss(lmm, pyramids, [_instr_ids(i) for i in instrs], answers)
    loss.backward()
    lmm.optimizer.step()
    lmm._cast.clear()
    return loss.item()


def save_lmm(lmm: ToyLMM, directory: str | Path) -> None:
    save_params(directory, lmm.params, {"kind": "toy_lmm", **lmm.config.__dict__})


def load_lmm(directory: str | Path) -> ToyLMM:
    params, m = load_params(directory)
    fields = {k: m[k] for k in LMMConfig.__dataclass_fields__ if k in m}
    for p in params.values():
        p.requires_grad = True
    return ToyLMM(LMMConfig(**fields), params)
