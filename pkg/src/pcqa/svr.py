"""Epsilon-SVR with an RBF kernel, trained by SMO on standardized features."""
from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import MalformedModelFile, NonFiniteTarget, TooFewSamples, VersionMismatch

MODEL_FORMAT = "pcqa-svr"
MODEL_VERSION = 1
GRID_C = tuple(10.0 ** e for e in range(0, 5))
GRID_GAMMA = tuple(2.0 ** e for e in range(-6, 3))


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def fit_standardizer(X) -> Scaler:
    """Per-column mean and population std; zero-variance columns get std 1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 2:
        raise TooFewSamples(f"standardizer needs at least 2 samples, got {X.shape[0]}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return Scaler(mean, std)


@dataclass(frozen=True)
class SvrHyper:
    C: float = 100.0
    epsilon: float = 0.1
    gamma: float | None = None  # None means 1 / n_features
    tol: float = 1e-3
    max_passes: int = 10000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")

    def resolved_gamma(self, n_features: int) -> float:
        return 1.0 / n_features if self.gamma is None else float(self.gamma)


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # standardized coordinates
    dual_coeffs: np.ndarray      # alpha - alpha*
    bias: float
    scaler: Scaler
    hyper: SvrHyper
    gamma: float
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    iterations: int = 0

    @property
    def n_features(self) -> int:
        return int(self.scaler.mean.shape[0])


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) with squared distances summed column by column."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        diff = A[:, c][:, None] - B[:, c][None, :]
        d2 += diff * diff
    return np.exp(-gamma * d2)


def dual_objective(K, y, beta, epsilon) -> float:
    """Minimisation form 0.5 b^T K b + eps |b|_1 - y^T b of the SVR dual."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(0.5 * beta @ K @ beta + epsilon * np.abs(beta).sum() - np.asarray(y) @ beta)


def kkt_violations(K, y, beta, bias, C, epsilon) -> np.ndarray:
    """Per-sample violation of the epsilon-insensitive complementarity conditions."""
    r = np.asarray(y) - (K @ beta + bias)
    viol = np.maximum(np.abs(r) - epsilon, 0.0)  # beta == 0: inside the tube
    at_upper = beta >= C
    at_lower = beta <= -C
    free_pos = (beta > 0) & ~at_upper
    free_neg = (beta < 0) & ~at_lower
    viol = np.where(at_upper, np.maximum(epsilon - r, 0.0), viol)
    viol = np.where(at_lower, np.maximum(r + epsilon, 0.0), viol)
    viol = np.where(free_pos, np.abs(r - epsilon), viol)
    viol = np.where(free_neg, np.abs(r + epsilon), viol)
    return viol


def _bias_from_gradient(a, G, y, Kbeta, C, n):
    s = np.concatenate([np.ones(n), -np.ones(n)])
    score = -s * G
    free = (a > 0) & (a < C)
    if free.any():
        return float(score[free].mean())
    up = ((s > 0) & (a < C)) | ((s < 0) & (a > 0))
    low = ((s > 0) & (a > 0)) | ((s < 0) & (a < C))
    lo = score[up].max() if up.any() else -math.inf
    hi = score[low].min() if low.any() else math.inf
    if lo > hi:
        return float((lo + hi) / 2.0)
    # any value in [lo, hi] is optimal; the median residual keeps flat targets exact
    return float(np.clip(np.median(y - Kbeta), lo, hi))


def _bound_bias(r, beta, C, epsilon):
    """Bias when no variable is free: clipped median of the KKT-feasible interval."""
    up, low = beta >= C, beta <= -C
    zero = ~up & ~low
    lo = max(np.max(r[low] + epsilon, initial=-math.inf), np.max(r[zero] - epsilon, initial=-math.inf))
    hi = min(np.min(r[up] - epsilon, initial=math.inf), np.min(r[zero] + epsilon, initial=math.inf))
    if lo > hi:
        return float((lo + hi) / 2.0)
    return float(np.clip(np.median(r), lo, hi))


def _polish(K, y, beta, bias, C, epsilon, max_steps=None):
    """Primal active-set refinement of the SMO iterate to the exact optimum.

    Each step solves the equality-constrained problem on the free set with
    their signs fixed. A step that would cross zero or the box is cut at the
    first blocking variable, which becomes bound; a full step releases the
    bound variable with the largest KKT violation. Returns ``(beta, bias)``
    when the result is feasible and no worse than the input, else ``None``.
    """
    n = y.size
    max_steps = 4 * n + 10 if max_steps is None else max_steps
    beta0, beta = beta, beta.copy()
    free = (beta != 0.0) & (np.abs(beta) < C)
    sgn = np.sign(beta)
    tol = 1e-12 * (1.0 + float(np.abs(y).max()) + C)
    new_bias = None
    for _ in range(max_steps):
        f = np.flatnonzero(free)
        if f.size == 0:
            new_bias = _bound_bias(y - K @ beta, beta, C, epsilon)
            break
        b_idx = np.flatnonzero(~free)
        nf = f.size
        A = np.zeros((nf + 1, nf + 1))
        A[:nf, :nf] = K[np.ix_(f, f)]
        A[:nf, nf] = 1.0
        A[nf, :nf] = 1.0
        rhs = np.empty(nf + 1)
        rhs[:nf] = y[f] - epsilon * sgn[f] - K[np.ix_(f, b_idx)] @ beta[b_idx]
        rhs[nf] = -beta[b_idx].sum()
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        cur, target = beta[f], sol[:nf]
        lo = np.where(sgn[f] > 0, 0.0, -C)
        hi = np.where(sgn[f] > 0, C, 0.0)
        d = target - cur
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(target < lo, (lo - cur) / d, np.where(target > hi, (hi - cur) / d, np.inf))
        j = int(np.argmin(t))
        if t[j] < 1.0:
            step = max(float(t[j]), 0.0)
            beta[f] = cur + step * d
            i = f[j]
            beta[i] = lo[j] if target[j] < lo[j] else hi[j]
            free[i] = False
            sgn[i] = np.sign(beta[i])
            continue
        beta[f] = target
        new_bias = float(sol[nf])
        r = y - K @ beta - new_bias
        viol = np.where(beta >= C, epsilon - r, np.where(beta <= -C, r + epsilon, np.abs(r) - epsilon))
        viol[free] = 0.0
        i = int(np.argmax(viol))
        if viol[i] <= tol:
            break
        free[i] = True
        sgn[i] = 1.0 if (beta[i] >= C or (beta[i] == 0.0 and r[i] > 0)) else -1.0
    else:
        return None
    if np.any(np.abs(beta) > C) or abs(beta.sum()) > 1e-9 * max(1.0, C):
        return None
    if dual_objective(K, y, beta, epsilon) > dual_objective(K, y, beta0, epsilon):
        return None
    before = kkt_violations(K, y, beta0, bias, C, epsilon).max()
    if kkt_violations(K, y, beta, new_bias, C, epsilon).max() > before:
        return None
    return beta, new_bias


def _solve(Z, y, hyper: SvrHyper):
    n, d = Z.shape
    gamma = hyper.resolved_gamma(d)
    K = rbf_kernel(Z, Z, gamma)
    max_iter = int(hyper.max_passes) * n
    a, G, it = kernels.smo(K, y, float(hyper.C), float(hyper.epsilon), float(hyper.tol), max_iter)
    beta = a[:n] - a[n:]
    bias = _bias_from_gradient(a, G, y, K @ beta, hyper.C, n)
    polished = _polish(K, y, beta, bias, hyper.C, hyper.epsilon)
    if polished is not None:
        beta, bias = polished
    return beta, bias, gamma, int(it)


def train_svr(X, y, hyper: SvrHyper | None = None) -> SvrModel:
    hyper = SvrHyper() if hyper is None else hyper
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} samples but {y.shape[0]} targets")
    if X.shape[0] < 2:
        raise TooFewSamples(f"SVR needs at least 2 samples, got {X.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteTarget("targets contain NaN or Inf")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or Inf")
    scaler = fit_standardizer(X)
    Z = scaler.transform(X)
    beta, bias, gamma, it = _solve(Z, y, hyper)
    sv = np.flatnonzero(beta != 0.0)
    return SvrModel(Z[sv].copy(), beta[sv].copy(), bias, scaler, hyper, gamma, sv.astype(np.int64), it)


def predict(model: SvrModel, X) -> np.ndarray | float:
    """Q = sum_i dual_i K(sv_i, scale(x)) + bias. Scalar in, scalar out."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    Z = model.scaler.transform(np.atleast_2d(X))
    if model.dual_coeffs.size:
        out = rbf_kernel(Z, model.support_vectors, model.gamma) @ model.dual_coeffs + model.bias
    else:
        out = np.full(Z.shape[0], model.bias)
    return float(out[0]) if single else out


def training_kernel(model: SvrModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Kernel matrix of the training set and the full-length dual vector."""
    Z = model.scaler.transform(np.atleast_2d(X))
    beta = np.zeros(Z.shape[0])
    beta[model.support_indices] = model.dual_coeffs
    return rbf_kernel(Z, Z, model.gamma), beta


def _inner_folds(n, groups, folds, seed):
    rng = np.random.default_rng(seed)
    if groups is not None:
        groups = np.asarray(groups)
        uniq = np.unique(groups)
        if uniq.size >= folds:
            perm = rng.permutation(uniq)
            blocks = np.array_split(perm, folds)
            return [np.isin(groups, b) for b in blocks]
    perm = rng.permutation(n)
    masks = []
    for block in np.array_split(perm, folds):
        m = np.zeros(n, dtype=bool)
        m[block] = True
        masks.append(m)
    return masks


def grid_search(X, y, groups=None, base: SvrHyper | None = None, folds: int = 3, seed: int = 0,
                grid_C=GRID_C, grid_gamma=GRID_GAMMA) -> SvrHyper:
    """Pick (C, gamma) by inner cross-validated RMSE on the given training data only."""
    base = SvrHyper() if base is None else base
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    masks = _inner_folds(X.shape[0], groups, folds, seed)
    best, best_err = base, math.inf
    for C, gamma in itertools.product(grid_C, grid_gamma):
        hyper = SvrHyper(C=C, epsilon=base.epsilon, gamma=gamma, tol=base.tol, max_passes=base.max_passes)
        sq = 0.0
        for test in masks:
            train = ~test
            if train.sum() < 2 or not test.any():
                continue
            model = train_svr(X[train], y[train], hyper)
            sq += float(((predict(model, X[test]) - y[test]) ** 2).sum())
        if sq < best_err:
            best, best_err = hyper, sq
    return best


def save_model(model: SvrModel, path: str | os.PathLike) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "hyper": asdict(model.hyper),
        "gamma": model.gamma,
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "support_vectors": model.support_vectors.tolist(),
        "dual_coeffs": model.dual_coeffs.tolist(),
        "support_indices": model.support_indices.tolist(),
        "bias": model.bias,
        "iterations": model.iterations,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path: str | os.PathLike) -> SvrModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedModelFile(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise MalformedModelFile(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: version {doc.get('version')!r}, expected {MODEL_VERSION}")
    try:
        d = len(doc["scaler"]["mean"])
        sv = np.array(doc["support_vectors"], dtype=np.float64).reshape(-1, d)
        model = SvrModel(
            support_vectors=sv,
            dual_coeffs=np.array(doc["dual_coeffs"], dtype=np.float64),
            bias=float(doc["bias"]),
            scaler=Scaler(np.array(doc["scaler"]["mean"], dtype=np.float64),
                          np.array(doc["scaler"]["std"], dtype=np.float64)),
            hyper=SvrHyper(**doc["hyper"]),
            gamma=float(doc["gamma"]),
            support_indices=np.array(doc.get("support_indices", []), dtype=np.int64),
            iterations=int(doc.get("iterations", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModelFile(f"{path}: {exc}") from exc
    if model.dual_coeffs.shape[0] != model.support_vectors.shape[0]:
        raise MalformedModelFile(f"{path}: support vector / coefficient count mismatch")
    return model
