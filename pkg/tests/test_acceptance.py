"""Exit criteria, one test per criterion; each prints a PASS/FAIL line."""
import json
import math
import re
import time

import jsonschema
import numpy as np
import pytest

import oracles
from builders import fake_projections, make_manifest
from pcqa import lmm, metrics, svr, synthetic
from pcqa.experiment import ExperimentConfig, LeakageAudit, MockEvaluator, cross_validate, run_experiment
from pcqa.features import extract_structural_features
from pcqa.manifest import Manifest, ManifestEntry, group_kfold, load_manifest
from pcqa.pointcloud import PointCloud
from pcqa.rating import MosRange, logits_to_probabilities, mos_to_level, softmax

pytestmark = pytest.mark.acceptance


def _cloud(p):
    return PointCloud(np.asarray(p, dtype=np.float64), np.zeros((len(p), 3), dtype=np.uint8), "c")


def _rotation(r):
    q, rr = np.linalg.qr(r.normal(size=(3, 3)))
    q = q * np.sign(np.diag(rr))
    return q if np.linalg.det(q) > 0 else -q


def _random_cloud(r, n):
    kind = int(r.integers(0, 4))
    if kind == 0:
        return r.uniform(-1, 1, (n, 3)) * r.uniform(0.1, 5, 3)
    if kind == 1:
        return r.normal(size=(n, 3)) * r.uniform(0.05, 3, 3) @ _rotation(r).T
    if kind == 2:  # noisy plane
        uv = r.uniform(-1, 1, (n, 2))
        return np.c_[uv, r.normal(0, 0.01, n)] @ _rotation(r).T
    t = r.uniform(0, 4 * np.pi, n)  # noisy helix
    return np.c_[np.cos(t), np.sin(t), 0.2 * t] + r.normal(0, 0.02, (n, 3))


# --- 1 ---------------------------------------------------------------------------

def test_c01_feature_oracle(criterion):
    r = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        p = _random_cloud(r, int(r.integers(50, 2001)))
        got = extract_structural_features(_cloud(p)).values
        worst = max(worst, float(np.max(np.abs(got - oracles.naive_features(p)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 60
    criterion(1, ok, f"max |diff| {worst:.2e} (tol 1e-8), {elapsed:.1f} s for 20 clouds incl. oracle (limit 60 s)")
    assert ok


# --- 2 ---------------------------------------------------------------------------

def test_c02_invariance(criterion):
    r = np.random.default_rng(77)
    trials, worst_rigid, worst_scale, perm_exact = 100, 0.0, 0.0, True
    for _ in range(trials):
        p = _random_cloud(r, int(r.integers(100, 600)))
        base = extract_structural_features(_cloud(p)).values
        moved = p @ _rotation(r).T + r.normal(size=3) * r.uniform(0, 50)
        worst_rigid = max(worst_rigid, float(np.max(np.abs(extract_structural_features(_cloud(moved)).values - base))))
        scaled = p * float(10 ** r.uniform(-3, 3))
        worst_scale = max(worst_scale, float(np.max(np.abs(extract_structural_features(_cloud(scaled)).values - base))))
        perm = r.permutation(len(p))
        perm_exact &= bool(np.array_equal(extract_structural_features(_cloud(p[perm])).values, base))
    ok = worst_rigid <= 1e-7 and worst_scale <= 1e-7 and perm_exact
    criterion(2, ok, f"{trials} trials: rigid {worst_rigid:.1e}, scale {worst_scale:.1e} (tol 1e-7), "
                     f"permutation exact={perm_exact}")
    assert ok


# --- 3 ---------------------------------------------------------------------------

def test_c03_binning_sweep(criterion):
    rng = MosRange(0.0, 100.0)
    values = [i / 100 for i in range(10001)]
    levels = [int(mos_to_level(v, rng)) for v in values]
    expected = [1 if v <= 20 else 2 if v <= 40 else 3 if v <= 60 else 4 if v <= 80 else 5 for v in values]
    steps = [values[i] for i in range(1, len(values)) if levels[i] != levels[i - 1]]
    ok = levels == expected and steps == [20.01, 40.01, 60.01, 80.01] and levels[0] == 1 and levels[-1] == 5
    criterion(3, ok, f"{len(values)} values, level changes at {steps}, mos=0 -> {levels[0]}")
    assert ok


# --- 4 ---------------------------------------------------------------------------

def test_c04_softmax(criterion):
    r = np.random.default_rng(4)
    worst_norm = worst_shift = 0.0
    argmax_ok = True
    for _ in range(5000):
        logits = r.uniform(-30, 30, 5) * float(10 ** r.uniform(-2, 1))
        c = float(r.uniform(-1e3, 1e3))
        p = logits_to_probabilities(logits).probs
        q = softmax(logits + c)
        worst_norm = max(worst_norm, abs(float(p.sum()) - 1.0))
        worst_shift = max(worst_shift, float(np.max(np.abs(p - q))))
        argmax_ok &= int(np.argmax(p)) == int(np.argmax(q)) == int(np.argmax(logits))
    uniform = logits_to_probabilities(np.zeros(5)).probs
    ok = worst_norm <= 1e-9 and worst_shift <= 1e-12 and argmax_ok and bool(np.all(uniform == 0.2))
    criterion(4, ok, f"sum err {worst_norm:.1e} (1e-9), shift diff {worst_shift:.1e} (1e-12), "
                     f"argmax stable={argmax_ok}, uniform={uniform.tolist()}")
    assert ok


# --- 5 ---------------------------------------------------------------------------

def test_c05_svr_vs_qp(criterion):
    r = np.random.default_rng(555)
    worst_obj = worst_pred = worst_kkt = 0.0
    for _ in range(30):
        d = int(r.integers(2, 18))
        X = r.normal(size=(30, d))
        y = np.sin(X[:, 0]) * float(r.uniform(1, 30)) + r.normal(0, 1, 30)
        h = svr.SvrHyper(C=float(10 ** r.uniform(-1, 3)), epsilon=float(r.uniform(0, 0.5)), tol=1e-3)
        m = svr.train_svr(X, y, h)
        K, beta = svr.training_kernel(m, X)
        qb, qbias = oracles.qp_svr(K, y, h.C, h.epsilon)
        o_smo, o_qp = svr.dual_objective(K, y, beta, h.epsilon), svr.dual_objective(K, y, qb, h.epsilon)
        worst_obj = max(worst_obj, abs(o_smo - o_qp) / abs(o_qp))
        Xt = np.vstack([X, r.normal(size=(20, d))])
        ref = oracles.rbf(m.scaler.transform(Xt), m.scaler.transform(X), m.gamma) @ qb + qbias
        worst_pred = max(worst_pred, float(np.max(np.abs(svr.predict(m, Xt) - ref))))
        worst_kkt = max(worst_kkt, float(svr.kkt_violations(K, y, beta, m.bias, h.C, h.epsilon).max()))
    ok = worst_obj <= 1e-6 and worst_pred <= 1e-4 and worst_kkt <= 1e-3
    criterion(5, ok, f"30 instances: rel objective gap {worst_obj:.1e} (1e-6), prediction diff {worst_pred:.1e} "
                     f"(1e-4), max KKT violation {worst_kkt:.1e} (1e-3)")
    assert ok


# --- 6 ---------------------------------------------------------------------------

def test_c06_metrics_oracles(criterion):
    r = np.random.default_rng(66)
    worst = 0.0
    worst_closed = 0.0
    tied_trials = 0
    for trial in range(100):
        n = int(r.integers(5, 60))
        if trial % 2:
            a = r.integers(0, max(2, n // 4), n).astype(float)
            b = np.round(a + r.normal(0, 2, n))
            tied_trials += 1
        else:
            a, b = r.normal(size=n), r.normal(size=n)
            d = np.array(oracles.average_ranks(a)) - np.array(oracles.average_ranks(b))
            closed = 1 - 6 * float(d @ d) / (n * (n * n - 1))
            worst_closed = max(worst_closed, abs(metrics.srcc(a, b) - closed))
        ref = (oracles.pearson_two_pass(oracles.average_ranks(a), oracles.average_ranks(b)),
               oracles.pearson_two_pass(list(a), list(b)), oracles.kendall_tau_b_pairs(a, b),
               oracles.rmse_two_pass(a, b))
        got = (metrics.srcc(a, b), metrics.plcc(a, b), metrics.krcc(a, b), metrics.rmse(a, b))
        worst = max(worst, max(abs(g - e) for g, e in zip(got, ref)))
    ok = worst <= 1e-12 and worst_closed <= 1e-12
    criterion(6, ok, f"100 vector pairs ({tied_trials} tied): max diff {worst:.1e}, closed-form Spearman "
                     f"{worst_closed:.1e} (tol 1e-12)")
    assert ok


# --- shared synthetic benchmark ------------------------------------------------------

@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    return synthetic.generate_benchmark(tmp_path_factory.mktemp("bench"), n_shapes=10, n_levels=5,
                                        n_points=2000, seed=0)


@pytest.fixture(scope="module")
def pipeline(bench, tmp_path_factory):
    """Two full runs with identical config and seed; the first is timed and audited."""
    root = tmp_path_factory.mktemp("runs")

    def cfg(out):
        return ExperimentConfig(manifest_path=bench, output_dir=out, folds=5, seed=0, grid_search=True,
                                export_sft=True, mock=MockEvaluator(seed=0, sigma=0.05))

    audit = LeakageAudit()
    t0 = time.perf_counter()
    first = run_experiment(cfg(root / "a"), audit)
    elapsed = time.perf_counter() - t0
    second = run_experiment(cfg(root / "b"))
    return first, second, elapsed, audit


@pytest.fixture(scope="module")
def bench_arrays(bench, pipeline):
    from pcqa.features import read_feature_csv

    manifest = load_manifest(bench)
    fs = read_feature_csv(pipeline[0].output_dir / "features.csv")
    return manifest, fs


# --- 7 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c07_end_to_end(criterion, pipeline):
    first, second, elapsed, _ = pipeline
    a = (first.output_dir / "predictions.csv").read_bytes()
    b = (second.output_dir / "predictions.csv").read_bytes()
    m = first.mean
    ok = m.srcc >= 0.90 and m.plcc >= 0.90 and elapsed < 300 and a == b
    criterion(7, ok, f"mean SRCC {m.srcc:.4f}, PLCC {m.plcc:.4f} (>= 0.90), {elapsed:.1f} s (< 300 s), "
                     f"rerun bit-identical={a == b}")
    assert ok


# --- 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c08_fusion_ablation(criterion, bench_arrays):
    manifest, fs = bench_arrays
    seeds = range(5)
    rows = {"structural": [], "lmm": [], "fused": []}
    for seed in seeds:
        fl = {e.cloud_name: lmm.mock_score(e.cloud_name, e.mos, manifest.score_range, seed, 0.05).probs
              for e in manifest.entries}
        folds = group_kfold(manifest, 5, seed)
        for stream in rows:
            cv = cross_validate(manifest, fl, fs, folds, use_grid_search=True, streams=stream, seed=seed)
            rows[stream].append(cv.mean.srcc)
    s, l, f = (float(np.mean(rows[k])) for k in ("structural", "lmm", "fused"))
    ok = s < l <= f and f >= max(s, l) - 0.01
    criterion(8, ok, f"mean SRCC over {len(seeds)} seeded CV repeats: F_S {s:.4f} < F_L {l:.4f} <= fused {f:.4f}")
    assert ok


# --- 9 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_projection_count(criterion, bench_arrays):
    manifest, fs = bench_arrays
    trials = 100
    res = np.zeros((trials, 6))
    for seed in range(trials):
        order = np.random.default_rng(1000 + seed).permutation(6)
        folds = group_kfold(manifest, 5, seed)
        for n in range(1, 7):
            fl = {e.cloud_name: lmm.mock_score(e.cloud_name, e.mos, manifest.score_range, seed, 0.05,
                                               faces=order[:n]).probs for e in manifest.entries}
            res[seed, n - 1] = cross_validate(manifest, fl, fs, folds, seed=seed).mean.srcc
    curve = res.mean(axis=0)
    ok = bool(np.all(np.diff(curve) >= 0))
    criterion(9, ok, f"mean SRCC over {trials} trials for 1..6 projections: {np.round(curve, 4).tolist()}")
    assert ok


# --- 10 --------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_leakage(criterion, bench, pipeline):
    _, _, _, audit = pipeline
    manifest = load_manifest(bench)
    folds = group_kfold(manifest, 5, 0)
    leaked, stages_ok = 0, True
    covered = []
    for f in folds:
        test = {e.cloud_name for e in manifest.entries_in(f.test_groups)}
        train = {e.cloud_name for e in manifest.entries_in(f.train_groups)}
        for fold, stage, names in audit.events:
            if fold == f.fold_index:
                leaked += len(set(names) & test)
        stages = {s for fold, s, _ in audit.events if fold == f.fold_index}
        stages_ok &= stages == {"grid_search", "standardizer", "svr", "sft_export"}
        stages_ok &= audit.touched(f.fold_index) == train
        covered.extend(test)
    exactly_once = sorted(covered) == sorted(e.cloud_name for e in manifest.entries)
    preds = pipeline[0].cv.predictions
    fold_of_pred = all(preds[e.cloud_name][0] == next(f.fold_index for f in folds if e.group_id in f.test_groups)
                       for e in manifest.entries)
    ok = leaked == 0 and stages_ok and exactly_once and fold_of_pred
    criterion(10, ok, f"test clouds touched by training stages: {leaked}; all stages instrumented={stages_ok}; "
                      f"test folds cover manifest exactly once={exactly_once and fold_of_pred}")
    assert ok


# --- 11 --------------------------------------------------------------------------

WORDS = ("bad", "poor", "fair", "good", "excellent")
INDEPENDENT_SCHEMA = {
    "type": "object",
    "required": ["cloud_name", "images", "question", "answer", "mos", "level"],
    "properties": {
        "cloud_name": {"type": "string", "minLength": 1},
        "images": {"type": "array", "minItems": 6, "maxItems": 6, "items": {"type": "string", "pattern": r"\.png$"}},
        "question": {"type": "string", "pattern": r"<\|img1\|>.*<\|img6\|>"},
        "answer": {"type": "string", "pattern": r"^The quality of this point cloud is (bad|poor|fair|good|excellent)\.$"},
        "mos": {"type": "number"},
        "level": {"enum": list(WORDS)},
    },
}


def _level_by_definition(mos, lo, hi):
    return WORDS[max(1, math.ceil(5 * (mos - lo) / (hi - lo))) - 1]


def test_c11_sft_export(criterion, tmp_path):
    m = make_manifest(9, 42, seed=11)
    fake_projections(m, tmp_path / "img", size=2)
    folds = group_kfold(m, 9, seed=0)
    v_pkg = jsonschema.Draft202012Validator(lmm.SFT_RECORD_SCHEMA)
    v_ind = jsonschema.Draft202012Validator(INDEPENDENT_SCHEMA)
    by_name = m.by_name()
    counts, invalid, mismatched, meta_ok = [], 0, 0, True
    for split in folds:
        out = tmp_path / f"fold{split.fold_index}" / "train.jsonl"
        n = lmm.export_sft_dataset(m, split, out, tmp_path / "img")
        lines = out.read_text().splitlines()
        counts.append((n, len(lines), len(m.entries_in(split.train_groups))))
        for line in lines:
            rec = json.loads(line)
            invalid += (not v_pkg.is_valid(rec)) + (not v_ind.is_valid(rec))
            word = re.match(r"^The quality of this point cloud is (\w+)\.$", rec["answer"]).group(1)
            e = by_name[rec["cloud_name"]]
            expected = _level_by_definition(e.mos, m.score_range.m, m.score_range.M)
            mismatched += not (word == rec["level"] == expected and mos_to_level(e.mos, m.score_range)
                               == lmm.parse_answer(rec["answer"]))
        meta = json.loads((out.parent / "meta.json").read_text())
        meta_ok &= {k: meta.get(k) for k in ("batch_size", "learning_rate", "epochs", "image_size")} == \
            {"batch_size": 64, "learning_rate": 2e-5, "epochs": 2, "image_size": 448}
        meta_ok &= meta.get("records") == n
    ok = invalid == 0 and mismatched == 0 and all(c == (336, 336, 336) for c in counts) and meta_ok
    criterion(11, ok, f"9 folds x {counts[0][0]} records (expected 336), schema failures {invalid}, "
                      f"answer/level mismatches {mismatched}, sidecar ok={meta_ok}")
    assert ok
