import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from pcqa.errors import ScoringFailed, TooManyFolds
from pcqa.experiment import (ExperimentConfig, LeakageAudit, MockEvaluator, fuse, read_scores_csv, run_experiment,
                             stack_features, write_scores_csv)
from pcqa.lmm import EndpointConfig
from pcqa.manifest import group_kfold, load_manifest
from pcqa.projection import RenderConfig


def _cfg(manifest_path, out, **kw):
    base = dict(manifest_path=manifest_path, output_dir=out, render=RenderConfig(resolution=64, splat_radius=1),
                render_projections=False, folds=5, seed=0, mock=MockEvaluator(seed=0, sigma=0.05))
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_outputs_and_determinism(small_benchmark, tmp_path):
    a = run_experiment(_cfg(small_benchmark, tmp_path / "a"))
    b = run_experiment(_cfg(small_benchmark, tmp_path / "b"))
    pa, pb = (tmp_path / "a" / "predictions.csv").read_bytes(), (tmp_path / "b" / "predictions.csv").read_bytes()
    assert pa == pb
    assert len(a.fold_reports) == 5 and a.mean.srcc == b.mean.srcc
    out = tmp_path / "a"
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0][:5] == ["fold", "srcc", "plcc", "krcc", "rmse"] and rows[-1][0] == "mean" and len(rows) == 7
    pred = list(csv.DictReader(open(out / "predictions.csv")))
    assert {"cloud_name", "mos", "pred"} <= set(pred[0]) and len(pred) == 50
    assert sorted((out / "models").glob("fold*.json")) and len(list((out / "models").glob("*.json"))) == 5
    run = json.loads((out / "run.json").read_text())
    assert run["seed"] == 0 and run["config_hash"] == a.config_hash
    assert set(read_scores_csv(out / "lmm_scores.csv")) == {r["cloud_name"] for r in pred}
    assert a.mean.srcc > 0.7


def test_leakage_audit(small_benchmark, tmp_path):
    audit = LeakageAudit()
    cfg = _cfg(small_benchmark, tmp_path / "run", grid_search=True, export_sft=True, render_projections=True)
    run_experiment(cfg, audit)
    manifest = load_manifest(small_benchmark)
    folds = group_kfold(manifest, 5, 0)
    stages = {s for _, s, _ in audit.events}
    assert stages == {"grid_search", "standardizer", "svr", "sft_export"}
    for f in folds:
        test = {e.cloud_name for e in manifest.entries_in(f.test_groups)}
        train = {e.cloud_name for e in manifest.entries_in(f.train_groups)}
        assert audit.touched(f.fold_index) == train
        assert not audit.touched(f.fold_index) & test
    assert (tmp_path / "run" / "sft" / "fold0" / "train.jsonl").is_file()
    assert len(list((tmp_path / "run" / "projections").glob("*.png"))) == 50 * 6


def test_feature_cache_reused(small_benchmark, tmp_path):
    cache = tmp_path / "cache"
    run_experiment(_cfg(small_benchmark, tmp_path / "a", cache_dir=cache))
    files = sorted((cache / "features").iterdir())
    stamps = [p.stat().st_mtime_ns for p in files]
    run_experiment(_cfg(small_benchmark, tmp_path / "b", cache_dir=cache))
    assert sorted((cache / "features").iterdir()) == files
    assert [p.stat().st_mtime_ns for p in files] == stamps
    assert (tmp_path / "a" / "features.csv").read_bytes() == (tmp_path / "b" / "features.csv").read_bytes()


def test_too_many_folds(small_benchmark, tmp_path):
    with pytest.raises(TooManyFolds):
        run_experiment(_cfg(small_benchmark, tmp_path / "x", folds=11))


def test_scoring_failure_aborts(small_benchmark, tmp_path):
    ep = EndpointConfig("http://127.0.0.1:9", timeout=1.0, retries=0, max_concurrency=2)
    cfg = _cfg(small_benchmark, tmp_path / "x", mock=None, endpoint=ep)
    with pytest.raises(ScoringFailed):
        run_experiment(cfg)
    assert not (tmp_path / "x" / "predictions.csv").exists()


def test_sigma_zero_smoke(small_benchmark, tmp_path):
    res = run_experiment(_cfg(small_benchmark, tmp_path / "z", mock=MockEvaluator(seed=1, sigma=0.0)))
    assert all(np.isfinite(r.srcc) for r in res.fold_reports)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        _cfg(tmp_path / "m.csv", tmp_path, mock=None)
    with pytest.raises(ValueError):
        _cfg(tmp_path / "m.csv", tmp_path, endpoint=EndpointConfig("http://x"))
    with pytest.raises(ValueError):
        _cfg(tmp_path / "m.csv", tmp_path, folds=1)
    with pytest.raises(ValueError):
        _cfg(tmp_path / "m.csv", tmp_path, streams="both")


def test_toml_config(tmp_path):
    (tmp_path / "exp.toml").write_text(
        'manifest = "db/synthetic.csv"\noutput_dir = "out"\nfolds = 4\nseed = 7\nscales = [10, 20]\n'
        'logistic = true\nstreams = "lmm"\n\n[render]\nresolution = 128\nsplat_radius = 1\n\n'
        '[evaluator.mock]\nseed = 3\nsigma = 0.1\nfaces = [0, 2]\n\n[svr]\nC = 10.0\nepsilon = 0.2\n'
        'grid_search = true\n')
    cfg = ExperimentConfig.from_toml(tmp_path / "exp.toml")
    assert cfg.manifest_path == tmp_path / "db" / "synthetic.csv" and cfg.output_dir == tmp_path / "out"
    assert (cfg.folds, cfg.seed, cfg.logistic, cfg.streams, cfg.grid_search) == (4, 7, True, "lmm", True)
    assert cfg.render.resolution == 128 and cfg.mock == MockEvaluator(3, 0.1, (0, 2))
    assert cfg.svr.C == 10.0 and cfg.svr.epsilon == 0.2
    assert cfg.config_hash() == ExperimentConfig.from_toml(tmp_path / "exp.toml").config_hash()
    assert cfg.config_hash() != replace(cfg, seed=8).config_hash()


def test_endpoint_key_not_in_record(tmp_path):
    cfg = _cfg(tmp_path / "m.csv", tmp_path, mock=None, endpoint=EndpointConfig("http://x", api_key="secret"))
    assert "secret" not in json.dumps(cfg.to_dict())


def test_fuse_and_stack():
    lp = np.array([0.1, 0.2, 0.3, 0.2, 0.2])
    fs = np.arange(12.0)
    assert fuse(lp, fs).tolist() == [*lp, *fs]
    with pytest.raises(ValueError):
        fuse(lp * 2, fs)
    with pytest.raises(ValueError):
        fuse(lp, np.full(12, np.nan))
    X = stack_features(["a"], {"a": lp}, {"a": fs}, "structural")
    assert X.shape == (1, 12)
    assert stack_features(["a"], {"a": lp}, {"a": fs}, "lmm").shape == (1, 5)


def test_scores_csv_round_trip(tmp_path):
    rows = [("a", np.array([0.1, 0.2, 0.3, 0.2, 0.2])), ("b", np.full(5, 0.2))]
    write_scores_csv(tmp_path / "s.csv", rows)
    back = read_scores_csv(tmp_path / "s.csv")
    assert back["a"].tobytes() == rows[0][1].tobytes()
