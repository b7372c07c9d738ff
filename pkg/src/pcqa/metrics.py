"""Agreement between predicted scores and MOS: SRCC, PLCC, KRCC, RMSE."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import FitDiverged, ZeroVariance


@dataclass(frozen=True)
class MetricReport:
    srcc: float
    plcc: float
    krcc: float
    rmse: float
    n: int
    logistic_applied: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(pred, mos, min_n=2):
    a = np.asarray(pred, dtype=np.float64).ravel()
    b = np.asarray(mos, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} predictions vs {b.size} scores")
    if a.size < min_n:
        raise ValueError(f"need at least {min_n} samples, got {a.size}")
    return a, b


def _pearson(a, b):
    da = a - a.mean()
    db = b - b.mean()
    ma, mb = np.abs(da).max(), np.abs(db).max()
    if ma == 0.0 or mb == 0.0:
        raise ZeroVariance("correlation undefined for a constant vector")
    # scale first so the products cannot overflow; one sqrt keeps r(x, x) == 1 exactly
    da, db = da / ma, db / mb
    return float(np.clip((da @ db) / math.sqrt(float(da @ da) * float(db @ db)), -1.0, 1.0))


def plcc(pred, mos) -> float:
    return _pearson(*_pair(pred, mos))


def srcc(pred, mos) -> float:
    """Pearson correlation of average (fractional) ranks."""
    a, b = _pair(pred, mos)
    return _pearson(stats.rankdata(a, method="average"), stats.rankdata(b, method="average"))


def krcc(pred, mos) -> float:
    """Kendall tau-b."""
    a, b = _pair(pred, mos)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ZeroVariance("Kendall tau undefined when every pair is tied")
    tau = stats.kendalltau(a, b, variant="b").statistic
    return float(np.clip(tau, -1.0, 1.0))


def rmse(pred, mos) -> float:
    a, b = _pair(pred, mos, min_n=1)
    d = a - b
    return math.sqrt(float(d @ d) / d.size)


def _logistic5(beta, x):
    b1, b2, b3, b4, b5 = beta
    with np.errstate(over="ignore"):
        return b1 * (0.5 - 1.0 / (1.0 + np.exp(b2 * (x - b3)))) + b4 * x + b5


def logistic_fit(pred, mos, max_iter: int = 2000) -> np.ndarray:
    """Map predictions through a five-parameter logistic fitted by Nelder-Mead."""
    a, b = _pair(pred, mos, min_n=5)
    x0 = np.array([b.max() - b.min(), 1.0, a.mean(), 1.0, b.mean()])

    def loss(beta):
        r = _logistic5(beta, a) - b
        v = float(r @ r)
        return v if math.isfinite(v) else 1e300

    res = optimize.minimize(loss, x0, method="Nelder-Mead",
                            options={"maxiter": max_iter, "xatol": 1e-10, "fatol": 1e-12})
    if not np.all(np.isfinite(res.x)):
        raise FitDiverged(f"logistic parameters diverged: {res.x}")
    # never return a fit worse than the starting point
    beta = res.x if res.fun <= loss(x0) else x0
    mapped = _logistic5(beta, a)
    if not np.all(np.isfinite(mapped)):
        raise FitDiverged("logistic mapping produced non-finite values")
    return mapped


def evaluate(pred, mos, logistic: bool = False) -> MetricReport:
    a, b = _pair(pred, mos)
    mapped = logistic_fit(a, b) if logistic else a
    return MetricReport(srcc(a, b), plcc(mapped, b), krcc(a, b), rmse(mapped, b), int(a.size), bool(logistic))


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to average")
    return MetricReport(
        srcc=float(np.mean([r.srcc for r in reports])),
        plcc=float(np.mean([r.plcc for r in reports])),
        krcc=float(np.mean([r.krcc for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        n=int(sum(r.n for r in reports)),
        logistic_applied=reports[0].logistic_applied,
    )


def write_report_csv(path: str | os.PathLike, fold_reports: Sequence[MetricReport]) -> None:
    """One row per fold plus a ``mean`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "srcc", "plcc", "krcc", "rmse", "n", "logistic"])
        for i, r in enumerate(fold_reports):
            w.writerow([i, repr(r.srcc), repr(r.plcc), repr(r.krcc), repr(r.rmse), r.n, int(r.logistic_applied)])
        m = mean_report(fold_reports)
        w.writerow(["mean", repr(m.srcc), repr(m.plcc), repr(m.krcc), repr(m.rmse), m.n, int(m.logistic_applied)])
