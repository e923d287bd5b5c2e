"""Synthetic scenes whose minimal sufficient granularity is known by construction.

Every 24x24 grid carries two signals:

* a coarse symbol, written as a constant per-channel bias on every token.
  Average pooling preserves it exactly at every level.
* a fine symbol, written as width-adjacent (+a, -a) pairs over a random
  block of cells.  The first 1x2 pooling step annihilates it.

Background texture is also width-antisymmetric, so pooled levels are
exactly the bias while level 0 is noisy.  All values sit on a 2**-8 grid,
which keeps every pooled mean exact in float32.  Images alone cannot tell
the two query kinds apart; only the instruction says which symbol is asked
for.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CorruptManifest, ShapeMismatch
from .instruction_filter import InstructionTokens
from .scaler import GranularityPyramid, TokenGrid, build_pyramid
from .tensorfile import read_tensor, write_tensor

COARSE = "coarse_query"
FINE = "fine_query"
TASK_KINDS = (COARSE, FINE)
SPLITS = ("train", "val", "test")

# vocabulary layout
VOCAB = 64
PAD, SEP, EOS = 0, 1, 2
Q_COARSE, Q_FINE = 3, 4
# question wording differs by kind (think "overall colour" vs "small print");
# id 15 is a shared function word
COARSE_WORDS = (5, 6, 7, 8, 9, 15)
FINE_WORDS = (10, 11, 12, 13, 14, 15)
N_SYMBOLS = 8
COARSE_SYMBOLS = tuple(range(16, 16 + N_SYMBOLS))
FINE_SYMBOLS = tuple(range(24, 24 + N_SYMBOLS))

FORMAT_VERSION = 1
_QUANT = 256.0


@dataclass(frozen=True)
class SceneConfig:
    rows: int = 24
    cols: int = 24
    d: int = 16
    n_levels: int = 5
    bias_scale: float = 1.0
    fine_scale: float = 6.0
    noise: float = 1.0
    fine_noise: float = 0.25
    fine_block: tuple[int, int] = (8, 4)  # (rows, cell pairs) carrying the fine pattern
    word_cluster: float = 0.8  # weight of the shared kind direction in word vectors
    min_instr: int = 3
    max_instr: int = 8
    vocab: int = VOCAB
    embed_seed: int = 7


DEFAULT_SCENE = SceneConfig()


@dataclass
class SceneSample:
    grid: TokenGrid
    instruction: InstructionTokens
    answer: np.ndarray
    task_kind: str
    gt_min_level: int
    seed: int

    def pyramid(self, n_levels: int = DEFAULT_SCENE.n_levels) -> GranularityPyramid:
        return build_pyramid(self.grid, n_levels)


@dataclass
class Corpus:
    samples: list[SceneSample]
    split: str
    seed: int
    config: SceneConfig = field(default=DEFAULT_SCENE)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> SceneSample:
        return self.samples[i]

    def of_kind(self, kind: str) -> "Corpus":
        return Corpus([s for s in self.samples if s.task_kind == kind], self.split, self.seed, self.config)


def _q(x: np.ndarray) -> np.ndarray:
    return np.round(x * _QUANT) / _QUANT


def symbol_tables(cfg: SceneConfig = DEFAULT_SCENE) -> tuple[np.ndarray, np.ndarray]:
    """Coarse bias vectors and fine pattern vectors, one row per symbol."""
    half = cfg.d // 2
    if half < N_SYMBOLS:
        raise ShapeMismatch(f"d={cfg.d} too small for {N_SYMBOLS} symbols per task")
    bias = np.zeros((N_SYMBOLS, cfg.d))
    fine = np.zeros((N_SYMBOLS, cfg.d))
    for s in range(N_SYMBOLS):
        bias[s, s] = cfg.bias_scale
        fine[s, half + s] = cfg.fine_scale
    return _q(bias), _q(fine)


def instruction_table(cfg: SceneConfig = DEFAULT_SCENE) -> np.ndarray:
    """Fixed stand-in text embeddings, one unit vector per vocabulary id.

    Like real word embeddings, words of one question kind cluster: each
    shares a kind direction plus its own random part.
    """
    rng = np.random.default_rng(cfg.embed_seed)
    table = rng.normal(size=(cfg.vocab, cfg.d))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    kind_dirs = rng.normal(size=(2, cfg.d))
    kind_dirs /= np.linalg.norm(kind_dirs, axis=1, keepdims=True)
    w = cfg.word_cluster
    for direction, words in zip(kind_dirs, ((Q_COARSE, *COARSE_WORDS[:-1]), (Q_FINE, *FINE_WORDS[:-1]))):
        for i in words:
            table[i] = w * direction + np.sqrt(1.0 - w * w) * table[i]
    return table / np.linalg.norm(table, axis=1, keepdims=True)


def generate_sample(seed: int, task_kind: str, cfg: SceneConfig = DEFAULT_SCENE) -> SceneSample:
    if task_kind not in TASK_KINDS:
        raise ValueError(f"task_kind must be one of {TASK_KINDS}")
    if cfg.cols % 2:
        raise ShapeMismatch("grid width must be even")
    rng = np.random.default_rng(seed)
    bias, fine = symbol_tables(cfg)
    coarse_sym = int(rng.integers(N_SYMBOLS))
    fine_sym = int(rng.integers(N_SYMBOLS))

    sigma = np.full(cfg.d, cfg.noise)
    sigma[cfg.d // 2 :] = cfg.fine_noise
    delta = _q(rng.normal(0.0, 1.0, (cfg.rows, cfg.cols // 2, cfg.d)) * sigma)
    br, bc = cfg.fine_block
    r, c = int(rng.integers(cfg.rows - br + 1)), int(rng.integers(cfg.cols // 2 - bc + 1))
    delta[r : r + br, c : c + bc] += fine[fine_sym]
    grid = np.empty((cfg.rows, cfg.cols, cfg.d))
    grid[:, 0::2] = bias[coarse_sym] + delta
    grid[:, 1::2] = bias[coarse_sym] - delta

    n_instr = int(rng.integers(cfg.min_instr, cfg.max_instr + 1))
    ids = rng.choice(COARSE_WORDS if task_kind == COARSE else FINE_WORDS, size=n_instr)
    ids[int(rng.integers(n_instr))] = Q_COARSE if task_kind == COARSE else Q_FINE
    vectors = instruction_table(cfg)[ids]

    if task_kind == COARSE:
        answer = [COARSE_SYMBOLS[coarse_sym], EOS]
        gt = cfg.n_levels - 1
    else:
        answer = [FINE_SYMBOLS[fine_sym], EOS]
        gt = 0
    return SceneSample(
        grid=TokenGrid(grid.astype(np.float32)),
        instruction=InstructionTokens(vectors.astype(np.float32), ids.astype(np.int64)),
        answer=np.asarray(answer, dtype=np.int64),
        task_kind=task_kind,
        gt_min_level=gt,
        seed=int(seed),
    )


def sample_seeds(seed: int, split: str, n: int) -> np.ndarray:
    """Per-sample 63-bit seeds derived from (corpus seed, split)."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    ss = np.random.SeedSequence([seed, SPLITS.index(split)])
    return (ss.generate_state(n, dtype=np.uint64) >> np.uint64(1)).astype(np.int64)


def make_corpus(
    n: int, split: str, seed: int, cfg: SceneConfig = DEFAULT_SCENE, kinds: Iterable[str] = TASK_KINDS
) -> Corpus:
    """``n`` samples cycling through ``kinds`` (balanced within one)."""
    kinds = tuple(kinds)
    seeds = sample_seeds(seed, split, n)
    order = np.random.default_rng(int(seeds[0]) if n else seed).permutation(n)
    samples = [generate_sample(int(seeds[i]), kinds[order[i] % len(kinds)], cfg) for i in range(n)]
    return Corpus(samples, split, seed, cfg)


# serialization -------------------------------------------------------------


def _payload(corpus: Corpus) -> bytes:
    buf = BytesIO()
    for s in corpus.samples:
        write_tensor(buf, s.grid.data.astype(np.float32))
        write_tensor(buf, s.instruction.vectors.astype(np.float32))
        write_tensor(buf, s.instruction.ids.astype(np.int64))
        write_tensor(buf, s.answer.astype(np.int64))
    return buf.getvalue()


def write_corpus(corpus: Corpus, path: str | Path) -> dict:
    """Write one manifest JSON line followed by four tensor records per sample."""
    payload = _payload(corpus)
    cfg = corpus.config
    manifest = {
        "version": FORMAT_VERSION,
        "n": len(corpus),
        "d": cfg.d,
        "grid": [cfg.rows, cfg.cols],
        "vocab": cfg.vocab,
        "splits": [corpus.split],
        "seed": corpus.seed,
        "scene_config": cfg.__dict__,
        "payload_bytes": len(payload),
        "checksum": "sha256:" + hashlib.sha256(payload).hexdigest(),
        "samples": [
            {"seed": s.seed, "task_kind": s.task_kind, "gt_min_level": s.gt_min_level} for s in corpus.samples
        ],
    }
    header = json.dumps(manifest, separators=(",", ":")).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    manifest["file_bytes"] = len(header) + len(payload)
    return manifest


def read_manifest(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        return json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptManifest(f"unreadable manifest in {path}") from exc


def read_corpus(path: str | Path) -> Corpus:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptManifest(f"unreadable manifest in {path}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise CorruptManifest(f"unsupported corpus version {manifest.get('version')}")
    if len(payload) != manifest["payload_bytes"]:
        raise CorruptManifest(f"payload is {len(payload)} bytes, manifest declares {manifest['payload_bytes']}")
    if "sha256:" + hashlib.sha256(payload).hexdigest() != manifest["checksum"]:
        raise CorruptManifest("checksum mismatch")
    raw = dict(manifest["scene_config"])
    raw["fine_block"] = tuple(raw.get("fine_block", DEFAULT_SCENE.fine_block))
    cfg = SceneConfig(**raw)
    buf = BytesIO(payload)
    samples = []
    for meta in manifest["samples"]:
        grid = read_tensor(buf)
        vectors = read_tensor(buf)
        ids = read_tensor(buf)
        answer = read_tensor(buf)
        samples.append(
            SceneSample(
                TokenGrid(grid),
                InstructionTokens(vectors, ids),
                answer,
                meta["task_kind"],
                meta["gt_min_level"],
                meta["seed"],
            )
        )
    return Corpus(samples, manifest["splits"][0], manifest["seed"], cfg)
