"""``granroute`` command line: gen-data, train-lmm, train-router, eval, ablate, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .errors import GranrouteError, SchemaError

log = logging.getLogger("granroute")


def _load_config(args: argparse.Namespace) -> bench.RunConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except ValueError as exc:
                raise SchemaError(f"{args.config} is not valid JSON") from exc
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    for key in ("policy", "ablation", "sweep_param"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "values", None):
        raw["sweep_values"] = [float(v) for v in args.values.split(",")]
    if getattr(args, "cache_feedback", None) is not None:
        raw["cache_feedback"] = args.cache_feedback
    if getattr(args, "local_images", None) is not None:
        raw["local_images"] = args.local_images
    return bench.RunConfig.from_dict(raw)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2))


def _progress(every: int):
    def emit(entry: dict) -> None:
        if entry["step"] % every == 0:
            log.info(json.dumps(entry))

    return emit


def cmd_gen_data(cfg: bench.RunConfig, args) -> None:
    manifests = bench.gen_data(cfg)
    _print({split: {"n": m["n"], "bytes": m["file_bytes"], "checksum": m["checksum"]} for split, m in manifests.items()})


def cmd_train_lmm(cfg: bench.RunConfig, args) -> None:
    bench.train_lmm(cfg, progress=_progress(50))
    _print({"checkpoint": str(bench.lmm_dir(cfg))})


def cmd_train_router(cfg: bench.RunConfig, args) -> None:
    bench.train_router(cfg, progress=_progress(10))
    _print({"checkpoint": str(bench.router_dir(cfg))})


def cmd_eval(cfg: bench.RunConfig, args) -> None:
    _print(bench.run_eval(cfg).to_dict())


def cmd_ablate(cfg: bench.RunConfig, args) -> None:
    if cfg.ablation is None:
        raise SchemaError("ablate needs --which or an 'ablation' config key")
    _print(bench.run_ablation(cfg, cfg.ablation).to_dict())


def cmd_sweep(cfg: bench.RunConfig, args) -> None:
    if cfg.sweep_param is None:
        raise SchemaError("sweep needs --param or a 'sweep_param' config key")
    reports = bench.sweep(cfg, cfg.sweep_param, cfg.sweep_values)
    _print([r.to_dict() for r in reports])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-lmm": cmd_train_lmm,
    "train-router": cmd_train_router,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="granroute", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train-router":
            p.add_argument("--cache-feedback", dest="cache_feedback", action=argparse.BooleanOptionalAction, default=None)
        if name == "eval":
            p.add_argument("--policy", help="adaptive, fixed:<level>, random, oracle or image_only")
            p.add_argument("--local-images", dest="local_images", type=int)
        if name == "ablate":
            p.add_argument("--which", dest="ablation", choices=bench.ABLATIONS)
        if name == "sweep":
            p.add_argument("--param", dest="sweep_param", choices=bench.SWEEP_PARAMS)
            p.add_argument("--values", help="comma separated values")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](cfg, args)
    except (GranrouteError, FileNotFoundError) as exc:
        print(f"granroute: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
