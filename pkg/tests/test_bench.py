import csv
import json

import numpy as np
import pytest

from granroute import bench
from granroute.bench import EvalReport, RunConfig
from granroute.cli import main
from granroute.errors import MissingCheckpoint, SchemaError


def _tiny(out, **kw) -> RunConfig:
    base = dict(
        out=str(out), n_train=48, n_test=24, lmm_epochs=1, lmm_batch=8, router_steps=2, router_batch=4,
        router_train_samples=12, wallclock_samples=2,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = _tiny(tmp_path_factory.mktemp("run"))
    bench.gen_data(cfg)
    lmm = bench.train_lmm(cfg)
    bench.train_router(cfg, lmm)
    return cfg, lmm


# config ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "raw",
    [
        {"bogus": 1},
        {"k": "32"},
        {"k": 0},
        {"seed": True},
        {"alpha": -0.1},
        {"policy": "fixed:9"},
        {"policy": "fixed:x"},
        {"policy": "greedy"},
        {"level_mask": [4, 0]},
        {"level_mask": [0, 5]},
        {"wallclock_reps": 2},
        {"random_histogram": [0.5, 0.5]},
        {"random_histogram": [0.5, 0.5, 0.5, 0.0, 0.0]},
        {"ablation": "nope"},
        {"sweep_values": []},
    ],
)
def test_schema_errors(raw):
    with pytest.raises(SchemaError):
        RunConfig.from_dict(raw)


def test_schema_accepts_defaults_and_fixed_under_mask():
    cfg = RunConfig.from_dict({"level_mask": [0, 2, 4], "policy": "fixed:2"})
    assert cfg.levels == [0, 2, 4]
    with pytest.raises(SchemaError):
        RunConfig.from_dict({"level_mask": [0, 2, 4], "policy": "fixed:3"})


def test_bad_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        RunConfig.from_json(path)


def test_router_key_tracks_training_settings_only():
    a = RunConfig()
    assert bench.router_key(a) == bench.router_key(a.replace(policy="random", wallclock_samples=3))
    assert bench.router_key(a) != bench.router_key(a.replace(alpha=0.0))
    assert bench.router_key(a) != bench.router_key(a.replace(level_mask=[0, 2, 4]))


# policies --------------------------------------------------------------------


def test_uniform_random_histogram():
    cfg = RunConfig(policy="random", seed=3)
    picks = bench.choose_levels(cfg, [None] * 1000, [None] * 1000, None, None)
    hist = np.bincount(picks, minlength=5) / 1000
    assert np.all(np.abs(hist - 0.2) <= 0.03)


def test_random_with_histogram_is_exact():
    cfg = RunConfig(policy="random", random_histogram=[0.5, 0.0, 0.0, 0.125, 0.375])
    picks = bench.choose_levels(cfg, [None] * 40, [None] * 40, None, None)
    assert np.bincount(picks, minlength=5).tolist() == [20, 0, 0, 5, 15]
    odd = bench._level_multiset([1 / 3, 1 / 3, 1 / 3], 10)
    assert len(odd) == 10 and sorted(np.bincount(odd).tolist()) == [3, 3, 4]


def test_fixed_policies(tiny_run):
    cfg, lmm = tiny_run
    r0 = bench.run_eval(cfg.replace(policy="fixed:0"), lmm, write=False, measure_time=False)
    assert r0.avg_tokens_per_grid == 576 and r0.token_reduction_pct == 0
    r4 = bench.run_eval(cfg.replace(policy="fixed:4"), lmm, write=False, measure_time=False)
    assert r4.avg_tokens_per_grid == 36
    assert r4.token_reduction_pct == pytest.approx(93.75, abs=1e-12)
    assert r4.routing_histogram == [0.0, 0.0, 0.0, 0.0, 1.0]


def test_oracle_upper_bounds_every_policy(tiny_run):
    cfg, lmm = tiny_run
    oracle = bench.run_eval(cfg.replace(policy="oracle"), lmm, write=False, measure_time=False)
    assert oracle.oracle_agreement_pct == 100.0
    for policy in ("adaptive", "random", "fixed:0", "fixed:4"):
        r = bench.run_eval(cfg.replace(policy=policy), lmm, write=False, measure_time=False)
        for kind, acc in r.accuracy_by_task.items():
            assert acc <= oracle.accuracy_by_task[kind] + 1e-12


def test_report_consistency_and_files(tiny_run):
    cfg, lmm = tiny_run
    r = bench.run_eval(cfg, lmm)
    assert abs(sum(r.routing_histogram) - 1.0) <= 1e-6
    assert abs(np.dot(r.routing_histogram, r.level_token_counts) - r.avg_tokens_per_grid) <= 1e-6
    assert r.token_reduction_pct == pytest.approx(100 * (1 - r.avg_tokens_per_grid / 576))
    assert r.wallclock_speedup > 0 and r.proxy_speedup_lmm > 0
    out = json.loads((bench._out(cfg) / "report.json").read_text())
    assert out["policy"] == "adaptive"
    rows = list(csv.reader(open(bench._out(cfg) / "report.csv")))
    assert rows[0] == ["metric", "value"] and len({row[0] for row in rows}) == len(rows)
    hist = list(csv.reader(open(bench._out(cfg) / "report_histogram.csv")))
    assert len(hist) == 6


def test_report_determinism(tiny_run):
    cfg, lmm = tiny_run
    a = bench.run_eval(cfg, None, write=False)
    b = bench.run_eval(cfg, None, write=False)
    assert a.deterministic_view() == b.deterministic_view()
    assert "wallclock_speedup" not in a.deterministic_view()


def test_threads_do_not_change_routing(tiny_run, monkeypatch):
    cfg, lmm = tiny_run
    monkeypatch.setenv("GRANROUTE_THREADS", "1")
    one = bench.run_eval(cfg, lmm, write=False, measure_time=False)
    monkeypatch.setenv("GRANROUTE_THREADS", "3")
    three = bench.run_eval(cfg, lmm, write=False, measure_time=False)
    assert one.deterministic_view() == three.deterministic_view()
    monkeypatch.setenv("GRANROUTE_THREADS", "many")
    with pytest.raises(SchemaError):
        bench.run_eval(cfg, lmm, write=False, measure_time=False)


def test_local_images_keep_the_schema(tiny_run):
    cfg, lmm = tiny_run
    r = bench.run_eval(cfg.replace(local_images=2), lmm, write=False, measure_time=False)
    assert set(r.to_dict()) == set(bench.run_eval(cfg, lmm, write=False, measure_time=False).to_dict())


def test_missing_checkpoints(tmp_path, tiny_run):
    cfg, lmm = tiny_run
    with pytest.raises(MissingCheckpoint):
        bench.run_eval(cfg.replace(alpha=0.7), lmm, write=False)
    with pytest.raises(MissingCheckpoint):
        bench.run_eval(_tiny(tmp_path / "empty"), write=False)


# ablations and sweeps ---------------------------------------------------------


def test_ablations_share_the_schema(tiny_run):
    cfg, lmm = tiny_run
    keys = set(EvalReport.__dataclass_fields__)
    fixed = bench.run_ablation(cfg, "fixed", lmm, measure_time=False)
    assert fixed.ablation == "fixed" and set(fixed.tag["fixed_levels"]) == {f"fixed:{i}" for i in range(5)}
    assert fixed.accuracy_by_task["mixed"] == max(fixed.tag["fixed_levels"].values())
    rng = bench.run_ablation(cfg, "granularity_range", lmm, measure_time=False)
    assert len(rng.routing_histogram) == 3 and rng.level_token_counts == [576, 144, 36]
    img = bench.run_ablation(cfg, "image_only", lmm, measure_time=False)
    assert set(img.to_dict()) == keys and img.ablation == "image_only"
    assert (bench._out(cfg) / "ablations" / "image_only.json").exists()


def test_sweep_emits_one_report_per_value(tiny_run):
    cfg, lmm = tiny_run
    reports = bench.sweep(cfg, "k", [4, 16], lmm, measure_time=False)
    assert len(reports) == 2
    assert [r.tag["sweep"]["k"] for r in reports] == [4, 16]
    assert set(reports[0].to_dict()) == set(reports[1].to_dict())
    rows = list(csv.reader(open(bench._out(cfg) / "sweeps" / "k.csv")))
    assert rows[0][0] == "k" and [r[0] for r in rows[1:]] == ["4", "16"]
    with pytest.raises(SchemaError):
        bench.sweep(cfg, "lr", [1.0], lmm)


def test_alpha_zero_row_equals_no_ce_ablation(tiny_run):
    cfg, lmm = tiny_run
    row = bench.sweep(cfg, "alpha", [0.0], lmm, write=False, measure_time=False)[0]
    abl = bench.run_ablation(cfg, "no_ce_loss", lmm, write=False, measure_time=False)
    a, b = row.deterministic_view(), abl.deterministic_view()
    for d in (a, b):
        d.pop("tag"), d.pop("ablation")
    assert a == b


# cli ---------------------------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({k: v for k, v in _tiny(tmp_path).to_dict().items() if k != "out"}))
    out = str(tmp_path / "run")
    args = ["--config", str(cfg_path), "--out", out, "--seed", "5"]
    for cmd in ("gen-data", "train-lmm", "train-router"):
        assert main([cmd, *args]) == 0
    capsys.readouterr()
    assert main(["eval", *args, "--policy", "fixed:4"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["avg_tokens_per_grid"] == 36
    assert main(["ablate", *args, "--which", "random"]) == 0
    capsys.readouterr()
    assert main(["sweep", *args, "--param", "alpha", "--values", "0.1"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["tag"]["sweep"] == {"alpha": 0.1}


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"k": -1}))
    assert main(["eval", "--config", str(bad)]) == 2
    assert main(["eval", "--out", str(tmp_path / "nothing")]) == 2
    assert main(["ablate", "--out", str(tmp_path / "nothing")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate"])
