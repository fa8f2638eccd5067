"""Soft-margin RBF kernel SVM trained by sequential minimal optimization.

Serves both as the inductive baseline classifier and as the inner solver
of the semi-supervised method. Supports per-sample box costs so the
semi-supervised objective can weight labeled and unlabeled points
differently. Training rows are canonicalized internally (sorted
lexicographically), which makes the fitted model independent of input
row order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
CV_TOL = 1e-3  # model selection does not need tight duals

DEFAULT_C_GRID = tuple(2.0**k for k in range(-5, 16, 2))
DEFAULT_GAMMA_GRID = tuple(2.0**k for k in range(-15, 4, 2))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with +/-1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=int)
        if feats.shape[0] != labels.shape[0]:
            raise DomainError("feature rows and labels must align")
        if labels.size and not np.all(np.isin(labels, (-1, 1))):
            raise DomainError("labels must be +1 or -1")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class SvmParams:
    """Cost C and RBF width gamma."""

    C: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.C <= 0 or self.gamma <= 0:
            raise DomainError("C and gamma must be positive")


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid and fold count for cross-validated search."""

    C_values: tuple = DEFAULT_C_GRID
    gamma_values: tuple = DEFAULT_GAMMA_GRID
    folds: int = 10

    def __post_init__(self):
        if not self.C_values or not self.gamma_values:
            raise DomainError("grids must be non-empty")
        if self.folds < 2:
            raise DomainError("folds must be >= 2")


@dataclass(frozen=True)
class SvmModel:
    """Kernel expansion: decision(x) = sum_i coef_i K(sv_i, x) + bias.

    ``coefs`` holds the signed dual coefficients alpha_i * y_i of the
    support vectors.
    """

    support_vectors: np.ndarray
    coefs: np.ndarray
    bias: float
    params: SvmParams


def rbf_kernel(x: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """exp(-gamma ||x - z||^2)."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(z, dtype=float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix K[i, j] = exp(-gamma ||A_i - B_j||^2)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _smo(K: np.ndarray, y: np.ndarray, C: np.ndarray, tol: float, max_iter: int):
    """Maximal-violating-pair SMO on the dual with per-sample box bounds.

    Solves min_a 1/2 a' Q a - e' a with Q = (y y') * K, subject to
    0 <= a_i <= C_i and y' a = 0. Pair updates are arranged so that
    y' a stays exactly zero in floating point.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)  # d/d_alpha of the dual objective
    yk = y[:, None] * K  # rows scaled by label; grad update needs y_i K_ij y_j
    pos = y > 0
    it = 0
    for it in range(1, max_iter + 1):
        # -y_i grad_i is the common "margin" quantity m(alpha)/M(alpha).
        viol = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        up_viol = np.where(up, viol, -np.inf)
        low_viol = np.where(low, viol, np.inf)
        i = int(np.argmax(up_viol))
        j = int(np.argmin(low_viol))
        gap = up_viol[i] - low_viol[j]
        if gap <= tol:
            break
        quad = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        step = gap / quad
        # Along alpha_i += y_i t, alpha_j -= y_j t the equality constraint
        # is invariant; clip t to the box.
        hi_i = C[i] - alpha[i] if y[i] > 0 else alpha[i]
        hi_j = alpha[j] if y[j] > 0 else C[j] - alpha[j]
        t = min(step, hi_i, hi_j)
        old_i, old_j = alpha[i], alpha[j]
        if t == hi_i and hi_i <= hi_j:
            alpha[i] = C[i] if y[i] > 0 else 0.0
            tau = y[i] * (alpha[i] - old_i)
            alpha[j] = old_j - y[j] * tau
        elif t == hi_j:
            alpha[j] = 0.0 if y[j] > 0 else C[j]
            tau = -y[j] * (alpha[j] - old_j)
            alpha[i] = old_i + y[i] * tau
        else:
            alpha[i] = old_i + y[i] * t
            alpha[j] = old_j - y[j] * t
            tau = y[i] * (alpha[i] - old_i)
        grad += tau * (yk[:, i] - yk[:, j])
    return alpha, it


def _smo_bias(K, y, C, alpha):
    """Intercept from the KKT conditions of the trained dual."""
    s = K @ (alpha * y)
    resid = y - s
    eps = 1e-10 * (1.0 + np.max(C))
    free = (alpha > eps) & (alpha < C - eps)
    if np.any(free):
        return float(np.mean(resid[free]))
    lower = ((y > 0) & (alpha <= eps)) | ((y < 0) & (alpha >= C - eps))
    upper = ((y < 0) & (alpha <= eps)) | ((y > 0) & (alpha >= C - eps))
    lo = np.max(resid[lower]) if np.any(lower) else -np.inf
    hi = np.min(resid[upper]) if np.any(upper) else np.inf
    if not np.isfinite(lo):
        return float(hi)
    if not np.isfinite(hi):
        return float(lo)
    return float((lo + hi) / 2)


def _canonical_order(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    keys = tuple(features[:, col] for col in reversed(range(features.shape[1])))
    return np.lexsort((labels,) + keys)


def train(
    data: Dataset,
    params: SvmParams,
    sample_costs: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> SvmModel:
    """Fit the soft-margin kernel SVM with SMO.

    ``sample_costs`` optionally overrides the box bound per training row
    (defaults to params.C everywhere). The result is independent of row
    order: rows are sorted into a canonical order before optimization.
    """
    n = len(data)
    if n < 2:
        raise DomainError("need at least two training points")
    y = data.labels.astype(float)
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateDataError("training data contains a single class")
    C = np.full(n, params.C) if sample_costs is None else np.asarray(sample_costs, dtype=float)
    if C.shape != (n,) or np.any(C <= 0):
        raise DomainError("sample costs must be positive, one per row")

    order = _canonical_order(data.features, data.labels)
    X = data.features[order]
    yo = y[order]
    Co = C[order]
    K = rbf_gram(X, X, params.gamma)
    if max_iter is None:
        max_iter = max(200_000, 200 * n)
    alpha, iters = _smo(K, yo, Co, tol, max_iter)
    if iters >= max_iter:
        logger.warning("SMO hit the iteration cap (%d); model may be loose", max_iter)
    bias = _smo_bias(K, yo, Co, alpha)
    sv = alpha > 1e-12
    return SvmModel(
        support_vectors=X[sv].copy(),
        coefs=(alpha * yo)[sv],
        bias=bias,
        params=params,
    )


def decision_value(model: SvmModel, x: np.ndarray) -> float:
    """Signed distance proxy sum_i coef_i K(sv_i, x) + b; sign(0) = +1."""
    if model.support_vectors.shape[0] == 0:
        return model.bias
    k = rbf_gram(model.support_vectors, np.asarray(x, dtype=float)[None, :], model.params.gamma)
    return float(model.coefs @ k[:, 0] + model.bias)


def decision_values(model: SvmModel, xs: np.ndarray) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] == 0:
        return np.zeros(0)
    if model.support_vectors.shape[0] == 0:
        return np.full(xs.shape[0], model.bias)
    k = rbf_gram(xs, model.support_vectors, model.params.gamma)
    return k @ model.coefs + model.bias


def predict(model: SvmModel, xs: np.ndarray) -> np.ndarray:
    """Elementwise label: +1 where the decision value is >= 0, else -1."""
    vals = decision_values(model, xs)
    return np.where(vals >= 0, 1, -1).astype(int)


def _fold_assignment(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified fold indices: classes are shuffled separately and dealt
    round-robin so every fold sees the same class mix."""
    assign = np.empty(labels.shape[0], dtype=int)
    counter = 0
    for cls in (1, -1):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for k in idx:
            assign[k] = counter % folds
            counter += 1
    return assign


def _cv_accuracy(K, y, C_value, assignment, folds, tol=CV_TOL):
    """Mean held-out accuracy over folds, given a precomputed Gram matrix."""
    accs = []
    for f in range(folds):
        test = assignment == f
        tr = ~test
        y_tr = y[tr]
        if np.all(y_tr > 0) or np.all(y_tr < 0):
            raise DomainError("fold leaves single-class training data; use fewer folds")
        Ktr = K[np.ix_(tr, tr)]
        C = np.full(y_tr.shape[0], C_value)
        alpha, _ = _smo(Ktr, y_tr, C, tol, max(50_000, 200 * y_tr.shape[0]))
        bias = _smo_bias(Ktr, y_tr, C, alpha)
        vals = K[np.ix_(test, tr)] @ (alpha * y_tr) + bias
        pred = np.where(vals >= 0, 1, -1)
        accs.append(float(np.mean(pred == y[test])))
    return float(np.mean(accs))


def k_fold_cv(data: Dataset, params: SvmParams, folds: int, rng_seed=0) -> float:
    """Stratified k-fold cross-validation accuracy, deterministic per seed."""
    n = len(data)
    if folds < 2 or folds > n:
        raise DomainError(f"folds must be in [2, {n}], got {folds}")
    y = data.labels.astype(float)
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateDataError("cross-validation needs both classes")
    rng = np.random.default_rng(rng_seed)
    assignment = _fold_assignment(data.labels, folds, rng)
    K = rbf_gram(data.features, data.features, params.gamma)
    return _cv_accuracy(K, y, params.C, assignment, folds)


def grid_search(data: Dataset, grid: GridSpec, rng_seed=0):
    """Best (params, accuracy) over the grid by stratified k-fold CV.

    Ties break toward the smallest C, then the smallest gamma. The fold
    assignment is drawn once and shared by every grid point.
    """
    n = len(data)
    folds = min(grid.folds, n)
    if folds < 2:
        raise DomainError("grid search needs at least 2 usable folds")
    y = data.labels.astype(float)
    if np.all(y > 0) or np.all(y < 0):
        raise DegenerateDataError("grid search needs both classes")
    rng = np.random.default_rng(rng_seed)
    assignment = _fold_assignment(data.labels, folds, rng)
    best = None
    for gamma in sorted(grid.gamma_values):
        K = rbf_gram(data.features, data.features, gamma)
        for C in sorted(grid.C_values):
            acc = _cv_accuracy(K, y, C, assignment, folds)
            key = (-acc, C, gamma)
            if best is None or key < best[0]:
                best = (key, SvmParams(C=C, gamma=gamma), acc)
    return best[1], best[2]


def model_to_dict(model: SvmModel) -> dict:
    return {
        "params": {"C": model.params.C, "gamma": model.params.gamma},
        "bias": model.bias,
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.coefs.tolist(),
    }


def model_from_dict(data: dict) -> SvmModel:
    params = SvmParams(C=float(data["params"]["C"]), gamma=float(data["params"]["gamma"]))
    return SvmModel(
        support_vectors=np.asarray(data["support_vectors"], dtype=float),
        coefs=np.asarray(data["alphas"], dtype=float),
        bias=float(data["bias"]),
        params=params,
    )


def save_model(model: SvmModel, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> SvmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


FEATURE_HEADER = "t11,t12,t13,t21,t22,t23,t31,t32,t33"


def dataset_to_csv(data: Dataset) -> str:
    """CSV text with the 9 feature columns and a label column."""
    d = data.features.shape[1]
    if d == 9:
        header = FEATURE_HEADER + ",label"
    else:
        header = ",".join(f"f{k}" for k in range(d)) + ",label"
    lines = [header]
    for row, lab in zip(data.features, data.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(lab)}")
    return "\n".join(lines) + "\n"


def save_dataset(data: Dataset, path):
    with open(path, "w") as fh:
        fh.write(dataset_to_csv(data))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "label":
            raise DomainError("dataset CSV must end with a 'label' column")
        rows = []
        labels = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            rows.append([float(v) for v in parts[:-1]])
            labels.append(int(float(parts[-1])))
    return Dataset(np.asarray(rows, dtype=float), np.asarray(labels, dtype=int))
