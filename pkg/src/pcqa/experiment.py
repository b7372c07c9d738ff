"""End-to-end k-fold experiment: projections, LMM scores, structural features, SVR, metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__, kernels, metrics
from .errors import PCQAError, ScoringFailed
from .features import DEFAULT_SCALES, extract_structural_features, feature_names, read_feature_csv, write_feature_csv
from .lmm import EndpointConfig, ScoringClient, export_sft_dataset, mock_score, projection_paths
from .manifest import FoldSplit, Manifest, group_kfold, load_manifest
from .pointcloud import PointCloud, load_ply
from .projection import LMM_IMAGE_SIZE, RenderConfig, render_cube_projections
from .svr import SvrHyper, grid_search, predict, save_model, train_svr

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STREAMS = ("fused", "lmm", "structural")


@dataclass(frozen=True)
class MockEvaluator:
    seed: int = 0
    sigma: float = 0.05
    faces: tuple | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    output_dir: Path
    render: RenderConfig = field(default_factory=RenderConfig)
    render_projections: bool = True
    scales: tuple = DEFAULT_SCALES
    endpoint: EndpointConfig | None = None
    mock: MockEvaluator | None = field(default_factory=MockEvaluator)
    svr: SvrHyper = field(default_factory=SvrHyper)
    grid_search: bool = False
    folds: int = 5
    seed: int = 0
    logistic: bool = False
    workers: int = 1
    streams: str = "fused"
    export_sft: bool = False
    cache_dir: Path | None = None

    def __post_init__(self):
        if (self.endpoint is None) == (self.mock is None):
            raise ValueError("configure exactly one evaluator: endpoint or mock")
        if self.streams not in STREAMS:
            raise ValueError(f"streams must be one of {STREAMS}")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def needs_images(self) -> bool:
        return self.render_projections or self.endpoint is not None or self.export_sft

    def to_dict(self) -> dict:
        d = {
            "manifest_path": str(self.manifest_path),
            "render": asdict(self.render),
            "render_projections": self.render_projections,
            "scales": list(self.scales),
            "svr": asdict(self.svr),
            "grid_search": self.grid_search,
            "folds": self.folds,
            "seed": self.seed,
            "logistic": self.logistic,
            "streams": self.streams,
            "export_sft": self.export_sft,
        }
        if self.endpoint is not None:
            ep = asdict(self.endpoint)
            ep.pop("api_key")
            d["endpoint"] = ep
        else:
            d["mock"] = asdict(self.mock)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: str | os.PathLike = ".") -> "ExperimentConfig":
        doc = dict(doc)
        base = Path(base_dir)

        def _path(value):
            p = Path(value)
            return p if p.is_absolute() else base / p

        if "manifest" not in doc and "manifest_path" not in doc:
            raise ValueError("config needs a 'manifest' entry")
        evaluator = doc.get("evaluator", {"mock": {}})
        endpoint = mock = None
        if "endpoint" in evaluator:
            endpoint = EndpointConfig(**evaluator["endpoint"])
        else:
            m = dict(evaluator.get("mock", {}))
            if m.get("faces") is not None:
                m["faces"] = tuple(int(f) for f in m["faces"])
            mock = MockEvaluator(**m)
        svr_doc = dict(doc.get("svr", {}))
        gs = bool(svr_doc.pop("grid_search", doc.get("grid_search", False)))
        render = doc.get("render", {})
        if "background" in render:
            render = dict(render, background=tuple(render["background"]))
        return cls(
            manifest_path=_path(doc.get("manifest", doc.get("manifest_path"))),
            output_dir=_path(doc.get("output_dir", "pcqa_run")),
            render=RenderConfig(**render),
            render_projections=bool(doc.get("render_projections", True)),
            scales=tuple(int(k) for k in doc.get("scales", DEFAULT_SCALES)),
            endpoint=endpoint,
            mock=mock,
            svr=SvrHyper(**svr_doc),
            grid_search=gs,
            folds=int(doc.get("folds", 5)),
            seed=int(doc.get("seed", 0)),
            logistic=bool(doc.get("logistic", False)),
            workers=int(doc.get("workers", 1)),
            streams=str(doc.get("streams", "fused")),
            export_sft=bool(doc.get("export_sft", False)),
            cache_dir=_path(doc["cache_dir"]) if "cache_dir" in doc else None,
        )

    @classmethod
    def from_toml(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        return cls.from_dict(doc, path.parent)


class LeakageAudit:
    """Records which clouds reach each training-side computation, per fold."""

    def __init__(self):
        self.events: list[tuple[int, str, tuple]] = []

    def record(self, fold: int, stage: str, names: Sequence[str]) -> None:
        self.events.append((fold, stage, tuple(names)))

    def touched(self, fold: int) -> set[str]:
        return {n for f, _, names in self.events if f == fold for n in names}


@dataclass
class CrossValidationResult:
    folds: list[FoldSplit]
    fold_reports: list[metrics.MetricReport]
    mean: metrics.MetricReport
    predictions: dict[str, tuple[int, float]]  # cloud -> (fold, prediction)
    models: list = field(default_factory=list)


def stack_features(names: Sequence[str], lmm_probs: Mapping[str, np.ndarray],
                   structural: Mapping[str, np.ndarray], streams: str = "fused") -> np.ndarray:
    """Design matrix rows in ``names`` order: F_L (5), F_S (12), or both."""
    rows = []
    for n in names:
        if streams == "lmm":
            rows.append(np.asarray(lmm_probs[n]))
        elif streams == "structural":
            rows.append(np.asarray(structural[n]))
        else:
            rows.append(fuse(lmm_probs[n], structural[n]))
    return np.vstack(rows)


def fuse(lmm_probs, structural) -> np.ndarray:
    """Concatenate the 5 rating probabilities and the structural statistics."""
    lp = np.asarray(lmm_probs, dtype=np.float64)
    fs = np.asarray(structural, dtype=np.float64)
    if lp.shape != (5,):
        raise ValueError(f"expected 5 rating probabilities, got {lp.shape}")
    if abs(lp.sum() - 1.0) > 1e-6:
        raise ValueError(f"rating probabilities sum to {lp.sum()}, not 1")
    out = np.concatenate([lp, fs])
    if not np.all(np.isfinite(out)):
        raise ValueError("fused feature contains NaN or Inf")
    return out


def cross_validate(manifest: Manifest, lmm_probs: Mapping[str, np.ndarray], structural: Mapping[str, np.ndarray],
                   folds: Sequence[FoldSplit], hyper: SvrHyper | None = None, use_grid_search: bool = False,
                   streams: str = "fused", logistic: bool = False, seed: int = 0,
                   audit: LeakageAudit | None = None) -> CrossValidationResult:
    """Train on each fold's training groups only and score its test groups."""
    hyper = SvrHyper() if hyper is None else hyper
    reports, models = [], []
    predictions: dict[str, tuple[int, float]] = {}
    for split in folds:
        train = manifest.entries_in(split.train_groups)
        test = manifest.entries_in(split.test_groups)
        train_names = [e.cloud_name for e in train]
        X_train = stack_features(train_names, lmm_probs, structural, streams)
        y_train = np.array([e.mos for e in train])
        fold_hyper = hyper
        if use_grid_search:
            if audit is not None:
                audit.record(split.fold_index, "grid_search", train_names)
            fold_hyper = grid_search(X_train, y_train, groups=[e.group_id for e in train], base=hyper, seed=seed)
        if audit is not None:
            audit.record(split.fold_index, "standardizer", train_names)
            audit.record(split.fold_index, "svr", train_names)
        model = train_svr(X_train, y_train, fold_hyper)
        X_test = stack_features([e.cloud_name for e in test], lmm_probs, structural, streams)
        pred = predict(model, X_test)
        y_test = np.array([e.mos for e in test])
        reports.append(metrics.evaluate(pred, y_test, logistic=logistic))
        models.append(model)
        for e, p in zip(test, pred):
            predictions[e.cloud_name] = (split.fold_index, float(p))
    return CrossValidationResult(list(folds), reports, metrics.mean_report(reports), predictions, models)


def _key(*parts) -> str:
    return hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()[:24]


class _Preparer:
    """Per-cloud work shared by every fold: features, projections, LMM inputs."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.cache = Path(cfg.cache_dir) if cfg.cache_dir else Path(cfg.output_dir) / "cache"
        self.proj_dir = Path(cfg.output_dir) / "projections"
        self.lmm_dir = Path(cfg.output_dir) / "lmm_inputs"
        self.feat_key = _key("features", *cfg.scales)
        self.render_key = _key("render", *asdict(cfg.render).values(), LMM_IMAGE_SIZE)

    def __call__(self, entry) -> np.ndarray:
        pc = load_ply(entry.ply_path, name=entry.cloud_name)
        feats = self._features(pc)
        if self.cfg.needs_images:
            self._projections(pc)
        return feats

    def _features(self, pc: PointCloud) -> np.ndarray:
        path = self.cache / "features" / f"{pc.content_hash()[:24]}_{self.feat_key}.csv"
        if path.is_file():
            cached = read_feature_csv(path)
            if len(cached) == 1:
                return next(iter(cached.values()))
        values = extract_structural_features(pc, self.cfg.scales).values
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        write_feature_csv(tmp, [(pc.name, values)], self.cfg.scales)
        os.replace(tmp, path)
        return values

    def _projections(self, pc: PointCloud) -> None:
        marker = self.lmm_dir / f"{pc.name}.key"
        key = f"{pc.content_hash()}:{self.render_key}"
        outputs = projection_paths(self.lmm_dir, pc.name) + projection_paths(self.proj_dir, pc.name)
        if marker.is_file() and marker.read_text() == key and all(p.is_file() for p in outputs):
            return
        proj = render_cube_projections(pc, self.cfg.render)
        proj.save(self.proj_dir)
        proj.save(self.lmm_dir, size=LMM_IMAGE_SIZE)
        marker.write_text(key)


def _score_all(cfg: ExperimentConfig, manifest: Manifest, lmm_dir: Path, fold: int | None = None):
    if cfg.mock is not None:
        m = cfg.mock
        return {e.cloud_name: mock_score(e.cloud_name, e.mos, manifest.score_range, m.seed, m.sigma, m.faces).probs
                for e in manifest.entries}
    ep = cfg.endpoint
    if fold is not None and "{fold}" in ep.model:
        ep = replace(ep, model=ep.model.format(fold=fold))
    jobs = {e.cloud_name: projection_paths(lmm_dir, e.cloud_name) for e in manifest.entries}
    out = {}
    with ScoringClient(ep) as client:
        with ThreadPoolExecutor(max_workers=ep.max_concurrency) as pool:
            futures = {name: pool.submit(client.score, paths) for name, paths in jobs.items()}
            for name, fut in futures.items():
                try:
                    out[name] = fut.result().probs
                except PCQAError as exc:
                    for f in futures.values():
                        f.cancel()
                    raise ScoringFailed(f"{name}: {type(exc).__name__}: {exc}") from exc
    return out


@dataclass
class ExperimentResult:
    cv: CrossValidationResult
    output_dir: Path
    config_hash: str

    @property
    def fold_reports(self):
        return self.cv.fold_reports

    @property
    def mean(self):
        return self.cv.mean


def run_experiment(cfg: ExperimentConfig, audit: LeakageAudit | None = None) -> ExperimentResult:
    manifest = load_manifest(cfg.manifest_path)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    folds = group_kfold(manifest, cfg.folds, cfg.seed)

    prep = _Preparer(cfg)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        feats = list(pool.map(prep, manifest.entries))
    structural = {e.cloud_name: f for e, f in zip(manifest.entries, feats)}
    write_feature_csv(out / "features.csv", [(e.cloud_name, structural[e.cloud_name]) for e in manifest.entries],
                      cfg.scales)

    if cfg.export_sft:
        for split in folds:
            if audit is not None:
                audit.record(split.fold_index, "sft_export", [e.cloud_name for e in manifest.entries_in(split.train_groups)])
            export_sft_dataset(manifest, split, out / "sft" / f"fold{split.fold_index}" / "train.jsonl", prep.lmm_dir)

    per_fold_scores = cfg.endpoint is not None and "{fold}" in cfg.endpoint.model
    if per_fold_scores:
        # one fine-tuned model per fold: score every cloud with that fold's model
        results = []
        for split in folds:
            scores = _score_all(cfg, manifest, prep.lmm_dir, split.fold_index)
            results.append(cross_validate(manifest, scores, structural, [split], cfg.svr, cfg.grid_search,
                                          cfg.streams, cfg.logistic, cfg.seed, audit))
        preds = {k: v for r in results for k, v in r.predictions.items()}
        reports = [r.fold_reports[0] for r in results]
        cv = CrossValidationResult(folds, reports, metrics.mean_report(reports), preds,
                                   [r.models[0] for r in results])
        scores_out = None
    else:
        scores = _score_all(cfg, manifest, prep.lmm_dir)
        cv = cross_validate(manifest, scores, structural, folds, cfg.svr, cfg.grid_search, cfg.streams,
                            cfg.logistic, cfg.seed, audit)
        scores_out = scores

    _write_outputs(cfg, manifest, cv, scores_out, out)
    return ExperimentResult(cv, out, cfg.config_hash())


def _write_outputs(cfg, manifest, cv, scores, out: Path) -> None:
    metrics.write_report_csv(out / "metrics.csv", cv.fold_reports)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cloud_name", "mos", "pred", "fold"])
        for e in manifest.entries:
            fold, p = cv.predictions[e.cloud_name]
            w.writerow([e.cloud_name, repr(float(e.mos)), repr(p), fold])
    if scores is not None:
        write_scores_csv(out / "lmm_scores.csv", [(e.cloud_name, scores[e.cloud_name]) for e in manifest.entries])
    models = out / "models"
    models.mkdir(exist_ok=True)
    for split, model in zip(cv.folds, cv.models):
        save_model(model, models / f"fold{split.fold_index}.json")
    with open(out / "folds.json", "w") as fh:
        json.dump([{"fold": s.fold_index, "train_groups": sorted(s.train_groups),
                    "test_groups": sorted(s.test_groups)} for s in cv.folds], fh, indent=2)
    record = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "package_version": __version__,
        "kernel_backend": kernels.backend(),
        "numpy_version": np.__version__,
        "mean": cv.mean.as_dict(),
    }
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


SCORE_COLUMNS = ("p_bad", "p_poor", "p_fair", "p_good", "p_excellent")


def write_scores_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", *SCORE_COLUMNS])
        for name, probs in rows:
            w.writerow([name, *(repr(float(p)) for p in probs)])


def read_scores_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != SCORE_COLUMNS:
            raise ValueError(f"{path}: expected columns name,{','.join(SCORE_COLUMNS)}")
        return {row[0]: np.array([float(x) for x in row[1:]]) for row in reader if row}


__all__ = [
    "CrossValidationResult",
    "ExperimentConfig",
    "ExperimentResult",
    "LeakageAudit",
    "MockEvaluator",
    "cross_validate",
    "feature_names",
    "run_experiment",
    "stack_features",
]
