"""Safe semi-supervised SVM (S4VM).

Given a handful of labeled points and a pool of unlabeled ones, the method
samples diverse large-margin candidate labelings of the unlabeled pool
(under a class-balance constraint), keeps a small set of representative
low-objective separators, and then picks the final labels by maximizing
the worst-case gain over the plain inductive SVM. If the optimizer ever
rounds to something worse than the inductive prediction, the inductive
prediction is returned instead, so the output is never meaningfully worse
than the baseline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import svm_core
from .errors import DomainError, SamplingError
from .svm_core import Dataset, SvmParams

logger = logging.getLogger(__name__)

FLIP_RATES = (0.05, 0.1, 0.2, 0.3)
MAX_BALANCE_RETRIES = 100
MAXMIN_ITERATIONS = 500


@dataclass(frozen=True)
class S4vmParams:
    """Knobs of the safe semi-supervised SVM.

    ``varsigma`` and ``G`` belong to the simulated-annealing variant of
    the separator search; the sampling strategy implemented here does not
    use them, they are retained so configs stay forward compatible.
    """

    beta: float = 0.1
    lam: float = 3.0
    T: int = 10
    n_samples: int = 100
    C1: float = 1.0
    C2: float = 0.1
    gamma: float = 1.0
    varsigma: float = 0.1
    G: float = 1e4

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError("beta must be >= 0")
        if self.lam <= 1:
            raise DomainError("lam must be > 1 for the safety analysis to hold")
        if self.T < 1:
            raise DomainError("T must be >= 1")
        if self.n_samples < self.T:
            raise DomainError("n_samples must be >= T")
        if self.C1 <= 0 or self.C2 <= 0 or self.gamma <= 0:
            raise DomainError("C1, C2 and gamma must be positive")


@dataclass(frozen=True)
class SeparatorPool:
    """Representative candidate labelings with their SVM objectives."""

    candidates: np.ndarray  # (T, u) entries +/-1
    objectives: np.ndarray  # (T,)
    shrunk: bool = False


@dataclass(frozen=True)
class S4vmResult:
    labels: np.ndarray
    ysvm: np.ndarray
    pool: SeparatorPool
    fallback_used: bool
    min_J_output: float
    min_J_ysvm: float


def _check_pm1(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or (v.size and not np.all(np.isin(v, (-1, 1)))):
        raise DomainError(f"{name} must be a 1-d vector of +/-1 entries")
    return v.astype(int)


def balance_ok(yhat: np.ndarray, labeled_labels: np.ndarray, beta: float) -> bool:
    """Class-balance constraint |mean(yhat) - mean(labeled)| <= beta.

    The interval is closed; a tiny epsilon absorbs the rounding of the
    two means.
    """
    yhat = _check_pm1(yhat, "yhat")
    yl = _check_pm1(labeled_labels, "labeled_labels")
    if yhat.size < 1 or yl.size < 1:
        raise DomainError("balance check needs non-empty label vectors")
    gap = abs(yhat.sum() / yhat.size - yl.sum() / yl.size)
    return bool(gap <= beta + 1e-12)


def _repair_balance(cand, f, labeled_labels, beta):
    """Flip the fewest extra entries (lowest |decision value| first in the
    overrepresented class) needed to land inside the balance window."""
    u = cand.size
    target = labeled_labels.sum() / labeled_labels.size
    gap = cand.sum() / u - target
    if abs(gap) <= beta + 1e-12:
        return cand
    majority = 1 if gap > 0 else -1
    need = int(np.ceil((abs(gap) - beta) * u / 2 - 1e-12))
    pool = np.flatnonzero(cand == majority)
    if need > pool.size:
        return None
    order = pool[np.argsort(np.abs(f[pool]), kind="stable")]
    cand = cand.copy()
    cand[order[:need]] = -majority
    return cand


def sample_candidates(
    ysvm: np.ndarray,
    decision_values: np.ndarray,
    labeled_labels: np.ndarray,
    params: S4vmParams,
    rng_seed=0,
) -> list[np.ndarray]:
    """Draw balanced candidate labelings by flipping inductive predictions.

    Each candidate flips every entry of ``ysvm`` independently; the flip
    probability is drawn per candidate from ``FLIP_RATES`` and scaled down
    by 1/(1 + |decision value|) so that entries close to the margin flip
    the most. A draw that misses the balance window is repaired by
    flipping the fewest additional near-margin entries of the
    overrepresented class (a heavily skewed inductive prediction would
    otherwise make balanced draws vanishingly rare); unrepairable draws
    are redrawn up to ``MAX_BALANCE_RETRIES`` times before a SamplingError
    is raised. ``ysvm`` itself is candidate 0 whenever it is balanced.
    """
    ysvm = _check_pm1(ysvm, "ysvm")
    u = ysvm.size
    if u < 2:
        raise DomainError("need at least 2 unlabeled points")
    f = np.asarray(decision_values, dtype=float)
    if f.shape != (u,):
        raise DomainError("decision_values must match the unlabeled count")
    rng = np.random.default_rng(rng_seed)
    damp = 1.0 / (1.0 + np.abs(f))

    out: list[np.ndarray] = []
    if balance_ok(ysvm, labeled_labels, params.beta):
        out.append(ysvm.copy())
    while len(out) < params.n_samples:
        rate = FLIP_RATES[rng.integers(len(FLIP_RATES))]
        for attempt in range(MAX_BALANCE_RETRIES + 1):
            flips = rng.random(u) < rate * damp
            cand = np.where(flips, -ysvm, ysvm)
            cand = _repair_balance(cand, f, labeled_labels, params.beta)
            if cand is not None and balance_ok(cand, labeled_labels, params.beta):
                out.append(cand)
                break
        else:
            raise SamplingError(
                f"no balanced candidate found in {MAX_BALANCE_RETRIES} retries "
                f"(beta={params.beta})"
            )
    return out


def separator_objective(
    labeling: np.ndarray,
    labeled: Dataset,
    unlabeled: np.ndarray,
    params: S4vmParams,
    tol: float = svm_core.DEFAULT_TOL,
) -> float:
    """Weighted soft-margin primal objective of the separator induced by a
    candidate labeling: 1/2 ||w||^2 + C1 sum xi_i + C2 sum xi_j.

    Returns +inf when the combined labels are single-class (such a
    candidate cannot induce a separator and is discarded upstream).
    """
    labeling = _check_pm1(labeling, "labeling")
    unlabeled = np.atleast_2d(np.asarray(unlabeled, dtype=float))
    if labeling.size != unlabeled.shape[0]:
        raise DomainError("labeling length must match the unlabeled rows")
    X = np.vstack([labeled.features, unlabeled])
    y = np.concatenate([labeled.labels, labeling])
    if np.all(y > 0) or np.all(y < 0):
        return np.inf
    costs = np.concatenate(
        [np.full(len(labeled), params.C1), np.full(labeling.size, params.C2)]
    )
    K = svm_core.rbf_gram(X, X, params.gamma)
    return _objective_from_gram(K, y.astype(float), costs, tol)


def _objective_from_gram(K, y, costs, tol):
    alpha, _ = svm_core._smo(K, y, costs, tol, max(50_000, 200 * y.shape[0]))
    bias = svm_core._smo_bias(K, y, costs, alpha)
    coef = alpha * y
    w2 = float(coef @ K @ coef)
    slack = np.maximum(0.0, 1.0 - y * (K @ coef + bias))
    return 0.5 * w2 + float(costs @ slack)


# Label-swap descent steps applied to each sampled candidate before pool
# selection, pushing it into a nearby large-margin configuration.
_REFINE_STEPS = 3


def _refine_candidate(K, yl, cand, costs, labeled_labels, beta, tol):
    """Drive a candidate labeling toward a self-consistent separator.

    Alternates fitting the weighted SVM on (labeled + candidate) with
    relabeling the unlabeled part by the fitted decision values, repairing
    balance after each pass. Random flip starts followed by this descent
    yield diverse large-margin separators instead of plain noise around
    the inductive prediction.
    """
    l = yl.size
    for _ in range(_REFINE_STEPS):
        y = np.concatenate([yl, cand.astype(float)])
        if np.all(y > 0) or np.all(y < 0):
            return cand
        alpha, _ = svm_core._smo(K, y, costs, tol, max(50_000, 200 * y.shape[0]))
        bias = svm_core._smo_bias(K, y, costs, alpha)
        f_u = K[l:] @ (alpha * y) + bias
        new = np.where(f_u >= 0, 1, -1).astype(int)
        new = _repair_balance(new, f_u, labeled_labels, beta)
        if new is None or np.array_equal(new, cand):
            break
        cand = new
    return cand


def select_separators(candidates, objectives, T: int) -> SeparatorPool:
    """Cluster candidates by Hamming distance and keep the best of each.

    Deduplicates the candidates, clusters the survivors with a
    deterministic k-medoids pass (greedy farthest-point seeding), and
    represents every cluster by its minimum-objective member. When fewer
    than T distinct usable candidates exist the pool shrinks and is
    flagged.
    """
    cand = np.asarray(candidates)
    objs = np.asarray(objectives, dtype=float)
    if cand.ndim != 2 or cand.shape[0] != objs.shape[0]:
        raise DomainError("candidates and objectives must align")
    if cand.shape[0] < T:
        raise DomainError("need at least T candidates")

    usable = np.isfinite(objs)
    seen = {}
    for idx in np.flatnonzero(usable):
        key = cand[idx].tobytes()
        if key not in seen or objs[idx] < objs[seen[key]]:
            seen[key] = idx
    keep = np.array(sorted(seen.values()), dtype=int)
    cand = cand[keep]
    objs = objs[keep]
    n = cand.shape[0]
    if n == 0:
        raise DomainError("no usable candidates (all degenerate)")

    if n <= T:
        if n < T:
            logger.warning("only %d distinct candidates; pool shrinks below T=%d", n, T)
        return SeparatorPool(candidates=cand.copy(), objectives=objs.copy(), shrunk=n < T)

    assign = _cluster_candidates(cand, objs, T)
    reps = []
    for k in range(T):
        members = np.flatnonzero(assign == k)
        if members.size == 0:
            continue
        reps.append(int(members[np.argmin(objs[members])]))
    reps = sorted(set(reps))
    return SeparatorPool(
        candidates=cand[reps].copy(), objectives=objs[reps].copy(), shrunk=len(reps) < T
    )


def _cluster_candidates(cand: np.ndarray, objs: np.ndarray, T: int) -> np.ndarray:
    """Deterministic k-medoids pass on Hamming distance; returns cluster ids.

    Seeded with the best-objective candidate followed by farthest-first
    picks, then alternates nearest-medoid assignment with medoid updates
    until stable.
    """
    u = cand.shape[1]
    D = (u - cand @ cand.T) // 2  # pairwise Hamming distances

    medoids = [int(np.argmin(objs))]
    while len(medoids) < T:
        dist_to_set = np.min(D[:, medoids], axis=1)
        dist_to_set[medoids] = -1
        medoids.append(int(np.argmax(dist_to_set)))

    assign = np.argmin(D[:, medoids], axis=1)
    for _ in range(100):
        new_medoids = []
        for k in range(len(medoids)):
            members = np.flatnonzero(assign == k)
            if members.size == 0:
                new_medoids.append(medoids[k])
                continue
            within = D[np.ix_(members, members)].sum(axis=1)
            new_medoids.append(int(members[np.argmin(within)]))
        new_assign = np.argmin(D[:, new_medoids], axis=1)
        if new_medoids == medoids and np.array_equal(new_assign, assign):
            break
        medoids, assign = new_medoids, new_assign
    return assign


def gain_loss(y: np.ndarray, yhat: np.ndarray, ysvm: np.ndarray):
    """Counts of unlabeled points improved (gain) and spoiled (loss)
    relative to the inductive prediction, assuming yhat were the truth.
    """
    y = _check_pm1(y, "y")
    yhat = _check_pm1(yhat, "yhat")
    ysvm = _check_pm1(ysvm, "ysvm")
    if not (y.size == yhat.size == ysvm.size):
        raise DomainError("label vectors must share a length")
    gain = int(np.sum((y == yhat) & (yhat != ysvm)))
    loss = int(np.sum((y != yhat) & (yhat == ysvm)))
    return gain, loss


def _min_J(y, pool_candidates, ysvm, lam):
    vals = []
    for yhat in pool_candidates:
        g, l = gain_loss(y, yhat, ysvm)
        vals.append(g - lam * l)
    return min(vals)


def _linear_forms(pool_candidates, ysvm, lam):
    """J(y, yhat_t, ysvm) = c_t . y + d_t over the pool."""
    yh = np.asarray(pool_candidates, dtype=float)
    ys = np.asarray(ysvm, dtype=float)
    u = ys.size
    c = ((1 + lam) * yh + (lam - 1) * ys) / 4.0
    d = (-(1 + lam) * (yh @ ys) + (1 - lam) * u) / 4.0
    return c, d


def _solve_maxmin_detail(pool: SeparatorPool, ysvm: np.ndarray, lam: float):
    ysvm = _check_pm1(ysvm, "ysvm")
    if pool.candidates.shape[0] == 0:
        raise DomainError("separator pool is empty")
    if pool.candidates.shape[1] != ysvm.size:
        raise DomainError("pool and ysvm lengths differ")
    c, d = _linear_forms(pool.candidates, ysvm, lam)

    # Projected supergradient ascent on g(y) = min_t (c_t.y + d_t) over
    # the box [-1, 1]^u, warm-started at the inductive prediction.
    y = ysvm.astype(float)
    best_y = y.copy()
    best_val = float(np.min(c @ y + d))
    for k in range(1, MAXMIN_ITERATIONS + 1):
        vals = c @ y + d
        t_star = int(np.argmin(vals))
        y = np.clip(y + c[t_star] / np.sqrt(k), -1.0, 1.0)
        val = float(np.min(c @ y + d))
        if val > best_val:
            best_val = val
            best_y = y.copy()

    rounded = np.where(best_y >= 0, 1, -1).astype(int)
    min_j_rounded = _min_J(rounded, pool.candidates, ysvm, lam)
    min_j_ysvm = _min_J(ysvm, pool.candidates, ysvm, lam)
    if min_j_rounded < min_j_ysvm:
        return ysvm.copy(), True, float(min_j_ysvm), float(min_j_ysvm)
    return rounded, False, float(min_j_rounded), float(min_j_ysvm)


def solve_maxmin(pool: SeparatorPool, ysvm: np.ndarray, lam: float) -> np.ndarray:
    """Labels maximizing the worst-case gain over the pool, with the
    inductive prediction as a guaranteed floor."""
    labels, _, _, _ = _solve_maxmin_detail(pool, ysvm, lam)
    return labels


def s4vm_run(
    labeled: Dataset,
    unlabeled: np.ndarray,
    params: S4vmParams,
    rng_seed=0,
) -> S4vmResult:
    """Full S4VM pass; returns the labels plus diagnostic details.

    On a sampling failure (balance unsatisfiable) the inductive
    prediction is returned with ``fallback_used`` set.
    """
    unlabeled = np.atleast_2d(np.asarray(unlabeled, dtype=float))
    if len(labeled) < 2:
        raise DomainError("need at least two labeled points")
    model = svm_core.train(labeled, SvmParams(C=params.C1, gamma=params.gamma))
    f = svm_core.decision_values(model, unlabeled)
    ysvm = np.where(f >= 0, 1, -1).astype(int)

    try:
        candidates = sample_candidates(ysvm, f, labeled.labels, params, rng_seed)
    except SamplingError:
        logger.warning("candidate sampling failed; falling back to the inductive SVM")
        empty_pool = SeparatorPool(
            candidates=ysvm[None, :].copy(), objectives=np.zeros(1), shrunk=True
        )
        return S4vmResult(
            labels=ysvm.copy(),
            ysvm=ysvm,
            pool=empty_pool,
            fallback_used=True,
            min_J_output=0.0,
            min_J_ysvm=0.0,
        )

    X = np.vstack([labeled.features, unlabeled])
    costs = np.concatenate(
        [np.full(len(labeled), params.C1), np.full(unlabeled.shape[0], params.C2)]
    )
    K = svm_core.rbf_gram(X, X, params.gamma)
    yl = labeled.labels.astype(float)
    refined = [
        _refine_candidate(
            K, yl, cand, costs, labeled.labels, params.beta, svm_core.CV_TOL
        )
        for cand in candidates
    ]
    objectives = np.empty(len(refined))
    for i, cand in enumerate(refined):
        y = np.concatenate([yl, cand.astype(float)])
        if np.all(y > 0) or np.all(y < 0):
            objectives[i] = np.inf
            continue
        objectives[i] = _objective_from_gram(K, y, costs, svm_core.CV_TOL)

    pool = select_separators(np.asarray(refined), objectives, params.T)
    labels, fallback, min_j_out, min_j_base = _solve_maxmin_detail(pool, ysvm, params.lam)
    assert min_j_out >= min_j_base, "safety floor violated"
    return S4vmResult(
        labels=labels,
        ysvm=ysvm,
        pool=pool,
        fallback_used=fallback,
        min_J_output=min_j_out,
        min_J_ysvm=min_j_base,
    )


def s4vm_predict(
    labeled: Dataset,
    unlabeled: np.ndarray,
    params: S4vmParams,
    rng_seed=0,
) -> np.ndarray:
    """Labels for the unlabeled pool (see :func:`s4vm_run` for details)."""
    return s4vm_run(labeled, unlabeled, params, rng_seed).labels


def result_to_dict(result: S4vmResult, params: S4vmParams, seed) -> dict:
    """JSON-ready run report."""
    return {
        "seed": seed,
        "params": {
            "beta": params.beta,
            "lam": params.lam,
            "T": params.T,
            "n_samples": params.n_samples,
            "C1": params.C1,
            "C2": params.C2,
            "gamma": params.gamma,
        },
        "ysvm": result.ysvm.tolist(),
        "pool_objectives": result.pool.objectives.tolist(),
        "labels": result.labels.tolist(),
        "fallback_used": bool(result.fallback_used),
        "min_J_output": result.min_J_output,
        "min_J_ysvm": result.min_J_ysvm,
    }


def save_run_report(result: S4vmResult, params: S4vmParams, seed, path):
    with open(path, "w") as fh:
        json.dump(result_to_dict(result, params, seed), fh)
