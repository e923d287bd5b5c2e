"""
Desk-scale run: both training stages, evaluation and ablations
==============================================================

Runs the default configuration end to end into ``runs/demo`` and prints
the efficiency table and the routing proportions per query kind.  Stage 1
and every router are cached on disk, so a second run only re-evaluates.
Expect about 12 minutes for the first pass on one core, and about 6 more
per ablation.

    python demos/desk_run.py [--ablations image_only gumbel]
"""

import argparse

from granroute import bench
from granroute.bench import RunConfig

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="runs/demo")
parser.add_argument("--ablations", nargs="*", default=["fixed", "random"], choices=bench.ABLATIONS)
args = parser.parse_args()

cfg = RunConfig(out=args.out)

# data and Stage 1 (skipped when already on disk)
if not bench.corpus_path(cfg, "test").exists():
    bench.gen_data(cfg)
train, test = bench.load_split(cfg, "train"), bench.load_split(cfg, "test")
if (bench.lmm_dir(cfg) / "manifest.json").exists():
    lmm = bench.get_lmm(cfg)
else:
    lmm = bench.train_lmm(cfg, train, progress=lambda e: e["step"] % 50 or print("stage 1", e))

# Stage 2 on the frozen LMM, then the adaptive policy against fixed levels
params = bench.train_router(cfg, lmm, train, progress=lambda e: e["step"] % 25 or print("stage 2", e))
rows = {"adaptive": bench.run_eval(cfg, lmm, params, test)}
for level in (0, 4):
    rows[f"fixed:{level}"] = bench.run_eval(cfg.replace(policy=f"fixed:{level}"), lmm, None, test, write=False)
for which in args.ablations:
    rows[f"ablation {which}"] = bench.run_ablation(cfg, which, lmm, train, test)

print(f"\n{'policy':22s} {'mixed':>6s} {'fine':>6s} {'coarse':>6s} {'tokens':>7s} {'cut %':>6s} "
      f"{'oracle %':>8s} {'proxy x':>7s} {'wall x':>6s}")
for name, r in rows.items():
    acc = r.accuracy_by_task
    print(f"{name:22s} {acc['mixed']:6.3f} {acc['fine_query']:6.3f} {acc['coarse_query']:6.3f} "
          f"{r.avg_tokens_per_grid:7.1f} {r.token_reduction_pct:6.1f} {r.oracle_agreement_pct:8.1f} "
          f"{r.proxy_speedup_lmm:7.2f} {r.wallclock_speedup:6.2f}")

# routing proportions per query kind
for kind, hist in rows["adaptive"].routing_histogram_by_task.items():
    print(kind, [round(h, 3) for h in hist])
