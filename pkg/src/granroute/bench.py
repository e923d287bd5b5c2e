"""Pipeline harness: data, both training stages, evaluation, ablations and sweeps.

Everything a run produces lives under ``RunConfig.out``::

    data/train.corpus  data/test.corpus
    lmm/               Stage-1 checkpoint (+ train_log.jsonl)
    routers/<hash>/    Stage-2 checkpoints keyed by the settings that shape them
    report.json  report.csv  histogram.csv
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import MissingCheckpoint, SchemaError
from .instruction_filter import select_instructions
from .lmm import LMMConfig, ToyLMM, build_text, forward_logits, init_lmm, load_lmm, save_lmm, stage1_train_step
from .rglf import RGLFConfig, level_feedback, rank_by_feedback, train_router as _train_router
from .router import RouterParams, aggregate_images, init_router_params, load_router, router_forward, save_router
from .scaler import GranularityPyramid, TokenGrid
from .scenes import COARSE, FINE, TASK_KINDS, Corpus, SceneConfig, SceneSample, make_corpus, read_corpus, write_corpus

POLICIES = ("adaptive", "random", "oracle", "image_only")
ABLATIONS = ("fixed", "random", "image_only", "granularity_range", "no_rank_loss", "no_ce_loss", "gumbel")
SWEEP_PARAMS = ("k", "alpha")
DEFAULT_SWEEPS = {"k": [4, 16, 32, 64], "alpha": [0.0, 0.05, 0.1, 0.5, 1.0]}
WALLCLOCK_FIELDS = ("wallclock_speedup", "wallclock_ms")


@dataclass
class RunConfig:
    out: str = "runs/default"
    seed: int = 0
    n_train: int = 5000
    n_test: int = 1000
    n_levels: int = 5
    level_mask: list[int] | None = None
    # stage 1
    lmm_epochs: int = 2
    lmm_lr: float = 1e-3
    lmm_batch: int = 32
    # stage 2
    k: int = 32
    alpha: float = 0.1
    router_lr: float = 1e-3
    router_batch: int = 32
    router_steps: int = 150
    router_train_samples: int = 2000
    use_rank: bool = True
    gumbel: bool = False
    gumbel_temperature: float = 1.0
    image_only: bool = False
    cache_feedback: bool = True
    feedback_resolution: float = 0.05
    # evaluation
    policy: str = "adaptive"
    # level proportions for the random policy; None draws uniformly
    random_histogram: list[float] | None = None
    eval_kind: str | None = None
    local_images: int = 0
    wallclock_samples: int = 16
    wallclock_reps: int = 3
    # ablate / sweep
    ablation: str | None = None
    sweep_param: str | None = None
    sweep_values: list[float] | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None and f.name in ("level_mask", "sweep_values", "eval_kind", "ablation", "sweep_param", "random_histogram"):
                continue
            expected = {"int": int, "float": (int, float), "str": str, "bool": bool}.get(str(f.type).split(" ")[0])
            if expected is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise SchemaError(f"{f.name} must be an integer, got {value!r}")
            if expected is not None and expected is not int and not isinstance(value, expected):
                raise SchemaError(f"{f.name} must be {f.type}, got {value!r}")
        for name in ("n_train", "n_test", "n_levels", "lmm_batch", "k", "router_batch", "wallclock_samples"):
            if getattr(self, name) < 1:
                raise SchemaError(f"{name} must be >= 1")
        if self.wallclock_reps < 3:
            raise SchemaError("wallclock_reps must be >= 3")
        if min(self.lmm_epochs, self.router_steps, self.local_images, self.router_train_samples) < 0:
            raise SchemaError("counts must be non-negative")
        if self.alpha < 0 or self.lmm_lr <= 0 or self.router_lr <= 0 or self.gumbel_temperature <= 0:
            raise SchemaError("alpha must be >= 0; learning rates and temperature > 0")
        if self.level_mask is not None:
            mask = list(self.level_mask)
            if not mask or any(not isinstance(m, int) for m in mask) or mask != sorted(set(mask)):
                raise SchemaError("level_mask must be a non-empty ascending list of distinct ints")
            if mask[0] < 0 or mask[-1] >= self.n_levels:
                raise SchemaError(f"level_mask entries must lie in [0, {self.n_levels})")
        n_avail = len(self.levels)
        if self.policy.startswith("fixed:"):
            try:
                lv = int(self.policy.split(":", 1)[1])
            except ValueError:
                raise SchemaError(f"bad policy {self.policy!r}") from None
            if not 0 <= lv < n_avail:
                raise SchemaError(f"fixed level {lv} outside the {n_avail} available levels")
        elif self.policy not in POLICIES:
            raise SchemaError(f"policy must be one of {POLICIES} or fixed:<level>")
        if self.random_histogram is not None:
            h = self.random_histogram
            if len(h) != n_avail or any(not isinstance(v, (int, float)) or v < 0 for v in h) or abs(sum(h) - 1.0) > 1e-6:
                raise SchemaError(f"random_histogram must be {n_avail} non-negative proportions summing to 1")
        if self.eval_kind is not None and self.eval_kind not in TASK_KINDS:
            raise SchemaError(f"eval_kind must be one of {TASK_KINDS}")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise SchemaError(f"ablation must be one of {ABLATIONS}")
        if self.sweep_param is not None and self.sweep_param not in SWEEP_PARAMS:
            raise SchemaError(f"sweep_param must be one of {SWEEP_PARAMS}")
        if self.sweep_values is not None and (
            not self.sweep_values or not all(isinstance(v, (int, float)) for v in self.sweep_values)
        ):
            raise SchemaError("sweep_values must be a non-empty list of numbers")

    @property
    def levels(self) -> list[int]:
        return list(range(self.n_levels)) if self.level_mask is None else list(self.level_mask)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise SchemaError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise SchemaError(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except ValueError as exc:
            raise SchemaError(f"config {path} is not valid JSON") from exc
        return cls.from_dict(raw)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EvalReport:
    policy: str
    accuracy_by_task: dict[str, float]
    avg_tokens_per_grid: float
    token_reduction_pct: float
    wallclock_speedup: float
    routing_histogram: list[float]
    oracle_agreement_pct: float
    level_token_counts: list[int]
    n_samples: int
    oracle_accuracy_by_task: dict[str, float] = field(default_factory=dict)
    routing_histogram_by_task: dict[str, list[float]] = field(default_factory=dict)
    proxy_speedup_lmm: float = 1.0
    proxy_speedup_with_router: float = 1.0
    wallclock_ms: dict[str, float] = field(default_factory=dict)
    ablation: str | None = None
    tag: dict[str, Any] = field(default_factory=dict)

    @property
    def accuracy_per_token(self) -> float:
        return self.accuracy_by_task["mixed"] / self.avg_tokens_per_grid

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def deterministic_view(self) -> dict:
        """Report content without the timing fields that vary run to run."""
        d = self.to_dict()
        for key in WALLCLOCK_FIELDS:
            d.pop(key, None)
        return d

    def rows(self) -> list[tuple[str, Any]]:
        """Flat (metric, value) rows for the CSV form."""
        rows: list[tuple[str, Any]] = [("policy", self.policy), ("ablation", self.ablation or "")]
        rows += [(f"accuracy.{k}", v) for k, v in self.accuracy_by_task.items()]
        rows += [(f"oracle_accuracy.{k}", v) for k, v in self.oracle_accuracy_by_task.items()]
        rows += [
            ("avg_tokens_per_grid", self.avg_tokens_per_grid),
            ("token_reduction_pct", self.token_reduction_pct),
            ("wallclock_speedup", self.wallclock_speedup),
            ("proxy_speedup_lmm", self.proxy_speedup_lmm),
            ("proxy_speedup_with_router", self.proxy_speedup_with_router),
            ("oracle_agreement_pct", self.oracle_agreement_pct),
            ("n_samples", self.n_samples),
        ]
        rows += [(f"routing_histogram.{lv}", h) for lv, h in enumerate(self.routing_histogram)]
        for kind, hist in self.routing_histogram_by_task.items():
            rows += [(f"routing_histogram.{kind}.{lv}", h) for lv, h in enumerate(hist)]
        return rows

    def write(self, directory: str | Path, stem: str = "report") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerows(self.rows())
        with open(directory / f"{stem}_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "tokens", "proportion"])
            for lv, (n, h) in enumerate(zip(self.level_token_counts, self.routing_histogram)):
                w.writerow([lv, n, h])


# paths ---------------------------------------------------------------------


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out)


def corpus_path(cfg: RunConfig, split: str) -> Path:
    return _out(cfg) / "data" / f"{split}.corpus"


def lmm_dir(cfg: RunConfig) -> Path:
    return _out(cfg) / "lmm"


def router_key(cfg: RunConfig) -> str:
    """Hash of every setting that changes the trained router."""
    keys = (
        "seed", "n_train", "n_levels", "level_mask", "lmm_epochs", "lmm_lr", "lmm_batch", "k", "alpha",
        "router_lr", "router_batch", "router_steps", "router_train_samples", "use_rank", "gumbel",
        "gumbel_temperature", "image_only", "feedback_resolution",
    )
    blob = json.dumps({k: getattr(cfg, k) for k in keys}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def router_dir(cfg: RunConfig) -> Path:
    return _out(cfg) / "routers" / router_key(cfg)


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("GRANROUTE_THREADS", "1")))
    except ValueError:
        raise SchemaError("GRANROUTE_THREADS must be an integer") from None


# stages --------------------------------------------------------------------


def gen_data(cfg: RunConfig) -> dict[str, dict]:
    """Write the train and test corpora; returns their manifests."""
    (_out(cfg) / "data").mkdir(parents=True, exist_ok=True)
    scene = SceneConfig(n_levels=cfg.n_levels)
    out = {}
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        out[split] = write_corpus(make_corpus(n, split, cfg.seed, scene), corpus_path(cfg, split))
    return out


def load_split(cfg: RunConfig, split: str) -> Corpus:
    path = corpus_path(cfg, split)
    if not path.exists():
        raise MissingCheckpoint(f"corpus {path} missing; run gen-data first")
    return read_corpus(path)


def train_lmm(cfg: RunConfig, corpus: Corpus | None = None, progress=None) -> ToyLMM:
    """Stage 1 over every granularity of the training corpus."""
    corpus = load_split(cfg, "train") if corpus is None else corpus
    lmm = init_lmm(LMMConfig(vis_dim=corpus.config.d), seed=cfg.seed)
    pyramids = [s.pyramid(cfg.n_levels) for s in corpus]
    rng = np.random.default_rng(cfg.seed)
    directory = lmm_dir(cfg)
    directory.mkdir(parents=True, exist_ok=True)
    step = 0
    with open(directory / "train_log.jsonl", "w") as log:
        for epoch in range(cfg.lmm_epochs):
            order = rng.permutation(len(corpus))
            for start in range(0, len(order) - cfg.lmm_batch + 1, cfg.lmm_batch):
                idx = order[start : start + cfg.lmm_batch]
                loss = stage1_train_step(
                    lmm, [pyramids[i] for i in idx], [corpus[i].instruction for i in idx],
                    np.stack([corpus[i].answer for i in idx]), cfg.lmm_lr,
                )
                entry = {"epoch": epoch, "step": step, "loss": loss}
                log.write(json.dumps(entry) + "\n")
                if progress is not None:
                    progress(entry)
                step += 1
    save_lmm(lmm, directory)
    return lmm


def get_lmm(cfg: RunConfig) -> ToyLMM:
    return load_lmm(lmm_dir(cfg))


def _rglf_config(cfg: RunConfig) -> RGLFConfig:
    return RGLFConfig(
        alpha=cfg.alpha, lr=cfg.router_lr, seed=cfg.seed, gumbel_mode=cfg.gumbel,
        gumbel_temperature=cfg.gumbel_temperature, use_rank=cfg.use_rank, batch_size=cfg.router_batch,
        image_only=cfg.image_only, cache_feedback=cfg.cache_feedback, feedback_resolution=cfg.feedback_resolution,
    )


def _level_counts(cfg: RunConfig, corpus: Corpus) -> list[int]:
    full = corpus[0].pyramid(cfg.n_levels).token_counts
    return [full[i] for i in cfg.levels]


def train_router(cfg: RunConfig, lmm: ToyLMM | None = None, corpus: Corpus | None = None, progress=None) -> RouterParams:
    """Stage 2 on the frozen LMM; reuses a cached checkpoint for identical settings."""
    directory = router_dir(cfg)
    if (directory / "manifest.json").exists():
        return load_router(directory)
    lmm = get_lmm(cfg) if lmm is None else lmm
    corpus = load_split(cfg, "train") if corpus is None else corpus
    samples = corpus.samples[: cfg.router_train_samples or len(corpus)]
    params = init_router_params(corpus.config.d, len(cfg.levels), cfg.k, cfg.seed, _level_counts(cfg, corpus))
    directory.mkdir(parents=True, exist_ok=True)
    _train_router(
        lmm, samples, params, _rglf_config(cfg), cfg.router_steps, level_mask=cfg.level_mask,
        log_path=directory / "train_log.jsonl", n_levels=cfg.n_levels, progress=progress,
    )
    save_router(params, directory)
    (directory / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    return params


# evaluation ----------------------------------------------------------------


def local_views(sample: SceneSample, m: int, noise: float = 1.0) -> list[TokenGrid]:
    """``m`` extra crops of the same scene: fresh width-antisymmetric texture, same symbols."""
    rng = np.random.default_rng(np.random.SeedSequence([sample.seed, 1]))
    base = sample.grid.data.astype(np.float64)
    views = []
    for _ in range(m):
        rows, cols, d = base.shape
        delta = np.round(rng.normal(0.0, noise, (rows, cols // 2, d)) * 256) / 256
        extra = np.empty_like(base)
        extra[:, 0::2] = delta
        extra[:, 1::2] = -delta
        views.append(TokenGrid((base + extra).astype(np.float32)))
    return views


def _pyramids(cfg: RunConfig, samples: Sequence[SceneSample]) -> list[GranularityPyramid]:
    full = [s.pyramid(cfg.n_levels) for s in samples]
    return full if cfg.level_mask is None else [p.subset(cfg.level_mask) for p in full]


def _route(cfg: RunConfig, params: RouterParams, sample: SceneSample, pyramid: GranularityPyramid) -> int:
    use_instr = not (cfg.image_only or cfg.policy == "image_only")
    finest = pyramid.levels[0] if cfg.level_mask is None else sample.pyramid(cfg.n_levels).levels[0]
    instr = select_instructions(sample.instruction, finest, params.k) if use_instr else None
    outputs = [router_forward(pyramid, instr, params)]
    if cfg.local_images:
        from .scaler import build_pyramid

        for view in local_views(sample, cfg.local_images):
            vp = build_pyramid(view, cfg.n_levels)
            vp = vp if cfg.level_mask is None else vp.subset(cfg.level_mask)
            outputs.append(router_forward(vp, instr, params))
        return aggregate_images(outputs)[1]
    return outputs[0].selected


def _level_multiset(histogram: Sequence[float], n: int) -> np.ndarray:
    """Exactly ``n`` level ids in the given proportions (largest remainders get the leftovers)."""
    target = np.asarray(histogram, dtype=np.float64) * n
    counts = np.floor(target).astype(np.int64)
    leftover = n - int(counts.sum())
    counts[np.argsort(-(target - counts), kind="stable")[:leftover]] += 1
    return np.repeat(np.arange(len(counts)), counts)


def choose_levels(
    cfg: RunConfig, samples: Sequence[SceneSample], pyramids: Sequence[GranularityPyramid],
    oracle: np.ndarray, params: RouterParams | None,
) -> np.ndarray:
    n = len(cfg.levels)
    if cfg.policy.startswith("fixed:"):
        return np.full(len(samples), int(cfg.policy.split(":")[1]))
    if cfg.policy == "random":
        rng = np.random.default_rng(cfg.seed)
        if cfg.random_histogram is None:
            return rng.integers(0, n, size=len(samples))
        return rng.permutation(_level_multiset(cfg.random_histogram, len(samples)))
    if cfg.policy == "oracle":
        return oracle.copy()
    if params is None:
        raise MissingCheckpoint("adaptive routing needs a trained router")
    jobs = list(zip(samples, pyramids))
    threads = eval_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            picks = list(pool.map(lambda sp: _route(cfg, params, *sp), jobs))
    else:
        picks = [_route(cfg, params, s, p) for s, p in jobs]
    return np.asarray(picks, dtype=np.int64)


_ORACLE_CACHE: dict[tuple, tuple[ToyLMM, np.ndarray, np.ndarray]] = {}


def brute_force(
    cfg: RunConfig, lmm: ToyLMM, samples: Sequence[SceneSample], pyramids: Sequence[GranularityPyramid], batch: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Oracle level per sample (LMM-best, coarser on near-ties) and correctness (B, N).

    Memoized per LMM object, level set and sample seeds, since every
    ablation and sweep row scores the same split with the same frozen LMM.
    """
    key = (id(lmm), tuple(cfg.levels), cfg.n_levels, cfg.feedback_resolution, tuple(s.seed for s in samples),
           tuple(s.task_kind for s in samples))
    hit = _ORACLE_CACHE.get(key)
    if hit is not None and hit[0] is lmm:
        return hit[1].copy(), hit[2].copy()
    best, correct = [], []
    for start in range(0, len(samples), batch):
        chunk = slice(start, start + batch)
        records, ok = level_feedback(
            lmm, pyramids[chunk], [s.instruction.ids for s in samples[chunk]],
            np.stack([s.answer for s in samples[chunk]]), cfg.feedback_resolution,
        )
        best += [rank_by_feedback(r).best for r in records]
        correct.append(ok)
    result = np.asarray(best, dtype=np.int64), np.concatenate(correct, axis=0)
    # the LMM is kept in the entry so its id cannot be recycled while cached
    _ORACLE_CACHE[key] = (lmm, *result)
    return result[0].copy(), result[1].copy()


def _lmm_call(lmm: ToyLMM, params, visual: np.ndarray, sample: SceneSample) -> None:
    text = build_text(sample.instruction.ids, sample.answer[:-1], lmm.config)
    forward_logits(lmm, visual[None], text[None], params)


def measure_wallclock(
    cfg: RunConfig, lmm: ToyLMM, params: RouterParams | None, samples: Sequence[SceneSample],
    pyramids: Sequence[GranularityPyramid], picks: np.ndarray,
) -> dict[str, float]:
    """Median over repetitions of batch-1 inference time for the policy and for fixed-finest."""
    lp = lmm.params_as(np.float32)
    n = min(cfg.wallclock_samples, len(samples))
    finest = [s.pyramid(cfg.n_levels).levels[0].flat() for s in samples[:n]]

    def run_policy():
        for i in range(n):
            level = picks[i]
            if cfg.policy in ("adaptive", "image_only") and params is not None:
                level = _route(cfg, params, samples[i], pyramids[i])
            _lmm_call(lmm, lp, pyramids[i].levels[level].flat(), samples[i])

    def run_finest():
        for i in range(n):
            _lmm_call(lmm, lp, finest[i], samples[i])

    timings = {"policy": [], "finest": []}
    for _ in range(cfg.wallclock_reps):
        for name, fn in (("finest", run_finest), ("policy", run_policy)):
            t0 = time.perf_counter()
            fn()
            timings[name].append(time.perf_counter() - t0)
    policy_ms = statistics.median(timings["policy"]) * 1e3 / n
    finest_ms = statistics.median(timings["finest"]) * 1e3 / n
    return {"policy": policy_ms, "finest": finest_ms}


def proxy_speedups(
    cfg: RunConfig, lmm: ToyLMM, counts: Sequence[int], finest: int, picks: np.ndarray, router_len: int | None,
) -> tuple[float, float]:
    """Attention cost ratio (sequence length squared times layers) of fixed-finest over the policy."""
    n_text = lmm.config.max_text
    layers = lmm.config.n_blocks
    base = layers * (finest + n_text) ** 2
    chosen = np.asarray([counts[p] for p in picks], dtype=np.float64)
    lmm_cost = layers * np.mean((chosen + n_text) ** 2)
    router_cost = float(router_len**2) if router_len else 0.0
    return base / lmm_cost, base / (lmm_cost + router_cost)


def run_eval(
    cfg: RunConfig, lmm: ToyLMM | None = None, params: RouterParams | None = None,
    corpus: Corpus | None = None, write: bool = True, measure_time: bool = True,
) -> EvalReport:
    lmm = get_lmm(cfg) if lmm is None else lmm
    corpus = load_split(cfg, "test") if corpus is None else corpus
    if cfg.eval_kind is not None:
        corpus = corpus.of_kind(cfg.eval_kind)
    samples = corpus.samples
    if not samples:
        raise SchemaError("evaluation split is empty")
    needs_router = cfg.policy in ("adaptive", "image_only")
    if needs_router and params is None:
        directory = router_dir(cfg)
        if not (directory / "manifest.json").exists():
            raise MissingCheckpoint(f"no router checkpoint at {directory}; run train-router first")
        params = load_router(directory)
    pyramids = _pyramids(cfg, samples)
    counts = pyramids[0].token_counts
    finest = samples[0].grid.n_tokens

    oracle, correct = brute_force(cfg, lmm, samples, pyramids)
    picks = choose_levels(cfg, samples, pyramids, oracle, params if needs_router else None)
    rows = np.arange(len(samples))
    hit = correct[rows, picks]
    oracle_hit = correct[rows, oracle]
    kinds = np.array([s.task_kind for s in samples])
    acc, oacc, kind_hist = {}, {}, {}
    for kind in TASK_KINDS:
        sel = kinds == kind
        if sel.any():
            acc[kind] = float(hit[sel].mean())
            oacc[kind] = float(oracle_hit[sel].mean())
            kind_hist[kind] = (np.bincount(picks[sel], minlength=len(counts)) / sel.sum()).tolist()
    acc["mixed"] = float(hit.mean())
    oacc["mixed"] = float(oracle_hit.mean())

    hist = np.bincount(picks, minlength=len(counts)).astype(np.float64) / len(samples)
    avg_tokens = float(np.dot(hist, counts))
    router_len = params.voter_length if needs_router else None
    proxy_lmm, proxy_total = proxy_speedups(cfg, lmm, counts, finest, picks, router_len)
    timing = (
        measure_wallclock(cfg, lmm, params if needs_router else None, samples, pyramids, picks)
        if measure_time else {"policy": float("nan"), "finest": float("nan")}
    )
    report = EvalReport(
        policy=cfg.policy,
        accuracy_by_task=acc,
        avg_tokens_per_grid=avg_tokens,
        token_reduction_pct=100.0 * (1.0 - avg_tokens / finest),
        wallclock_speedup=timing["finest"] / timing["policy"],
        routing_histogram=hist.tolist(),
        oracle_agreement_pct=100.0 * float((picks == oracle).mean()),
        level_token_counts=list(counts),
        n_samples=len(samples),
        oracle_accuracy_by_task=oacc,
        routing_histogram_by_task=kind_hist,
        proxy_speedup_lmm=proxy_lmm,
        proxy_speedup_with_router=proxy_total,
        wallclock_ms=timing,
        ablation=cfg.ablation,
        tag={"router": router_key(cfg) if needs_router else None, "eval_kind": cfg.eval_kind},
    )
    if write:
        report.write(_out(cfg))
    return report


# ablations and sweeps ------------------------------------------------------


def ablation_config(cfg: RunConfig, which: str) -> RunConfig:
    if which not in ABLATIONS:
        raise SchemaError(f"ablation must be one of {ABLATIONS}")
    base = cfg.replace(ablation=which)
    if which == "random":
        return base.replace(policy="random")
    if which == "image_only":
        return base.replace(policy="image_only", image_only=True)
    if which == "granularity_range":
        mask = cfg.level_mask or [0, 2, 4]
        return base.replace(level_mask=list(mask), policy="adaptive")
    if which == "no_rank_loss":
        return base.replace(use_rank=False, policy="adaptive")
    if which == "no_ce_loss":
        return base.replace(alpha=0.0, policy="adaptive")
    if which == "gumbel":
        return base.replace(gumbel=True, policy="adaptive")
    return base


def run_ablation(
    cfg: RunConfig, which: str, lmm: ToyLMM | None = None, train: Corpus | None = None,
    test: Corpus | None = None, write: bool = True, measure_time: bool = True,
) -> EvalReport:
    """One ablation row; ``fixed`` reports the single level with the best mixed accuracy."""
    acfg = ablation_config(cfg, which)
    lmm = get_lmm(cfg) if lmm is None else lmm
    test = load_split(cfg, "test") if test is None else test
    if which == "fixed":
        reports = [
            run_eval(acfg.replace(policy=f"fixed:{lv}"), lmm, None, test, write=False, measure_time=measure_time)
            for lv in range(len(acfg.levels))
        ]
        # best accuracy wins; ties go to the cheaper level
        report = max(reversed(reports), key=lambda r: r.accuracy_by_task["mixed"])
        report.tag = dict(report.tag, fixed_levels={r.policy: r.accuracy_by_task["mixed"] for r in reports})
    elif which == "random":
        report = run_eval(acfg, lmm, None, test, write=False, measure_time=measure_time)
    else:
        params = train_router(acfg, lmm, train)
        report = run_eval(acfg, lmm, params, test, write=False, measure_time=measure_time)
    report.ablation = which
    if write:
        report.write(_out(cfg) / "ablations", which)
    return report


def sweep(
    cfg: RunConfig, param: str, values: Sequence[float] | None = None, lmm: ToyLMM | None = None,
    train: Corpus | None = None, test: Corpus | None = None, write: bool = True, measure_time: bool = True,
) -> list[EvalReport]:
    """Retrain Stage 2 once per value (Stage 1 reused) and evaluate adaptively."""
    if param not in SWEEP_PARAMS:
        raise SchemaError(f"sweep param must be one of {SWEEP_PARAMS}")
    values = list(DEFAULT_SWEEPS[param] if values is None else values)
    if not values:
        raise SchemaError("sweep needs at least one value")
    lmm = get_lmm(cfg) if lmm is None else lmm
    test = load_split(cfg, "test") if test is None else test
    reports = []
    for v in values:
        v = int(v) if param == "k" else float(v)
        scfg = cfg.replace(**{param: v}, policy="adaptive")
        params = train_router(scfg, lmm, train)
        r = run_eval(scfg, lmm, params, test, write=False, measure_time=measure_time)
        r.tag = dict(r.tag, sweep={param: v})
        reports.append(r)
    if write:
        directory = _out(cfg) / "sweeps"
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{param}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            metrics = [m for m, _ in reports[0].rows() if m not in ("policy", "ablation")]
            w.writerow([param] + metrics)
            for v, r in zip(values, reports):
                w.writerow([v] + [val for m, val in r.rows() if m not in ("policy", "ablation")])
    return reports
