"""Dataset generation and the incremental semi-supervised experiments.

Implements the experiment protocol used throughout the numerical study:
generate a balanced dataset of SDP-labeled random states, train the
inductive baseline on a small labeled subset, run the safe semi-supervised
method over the unlabeled pool in M incremental chunks (each chunk's
adopted labels join the labeled set for the next chunk), and report
per-class errors. Also contains the generalized-Werner-state sweep where
ground truth comes from the closed-form criterion instead of the SDP.

Every experiment is a pure function of its configuration and seed;
repeated runs produce byte-identical reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import qstate, s4vm_core, svm_core
from ._parallel import parallel_map
from .errors import ConfigError, DomainError, GenerationError
from .qstate import WernerParams, feature_vector, random_density_matrix, werner_state
from .s4vm_core import S4vmParams
from .sdp_steer import SdpSettings, label_states
from .svm_core import Dataset, GridSpec, SvmParams

PROTOCOL_FOLDS = 5  # five-fold CV inside the incremental protocol


@dataclass(frozen=True)
class ExperimentConfig:
    """Scale and reproducibility knobs of one experiment family."""

    m: int
    l: int
    u: int
    M: int = 2
    trials: int = 100
    n_runs: int = 10
    seeds: tuple = (0,)
    grid: GridSpec = GridSpec()
    s4vm: S4vmParams = S4vmParams()
    sdp: SdpSettings = SdpSettings()
    threads: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.l < 2 or self.l % 2:
            raise ConfigError("l must be an even count >= 2 (balanced labeled sets)")
        if self.M < 1 or self.u % self.M:
            raise ConfigError("M must divide u")
        if self.u // self.M < 2:
            raise ConfigError("chunks need at least 2 states (balance is undefined otherwise)")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass(frozen=True)
class ErrorReport:
    """Overall and per-class error rates of one prediction run."""

    overall_error: float
    positive_error: float
    negative_error: float
    per_split_errors: tuple = ()
    fallback_used: bool = False
    folds_used: int | None = None


def class_errors(predicted: np.ndarray, truth: np.ndarray) -> ErrorReport:
    """Error rates overall and restricted to each truth class.

    An absent class yields NaN for that class error (not-applicable).
    """
    predicted = np.asarray(predicted, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if predicted.shape != truth.shape:
        raise DomainError("prediction and truth lengths differ")
    wrong = predicted != truth
    overall = float(np.mean(wrong)) if truth.size else math.nan
    pos = truth == 1
    neg = truth == -1
    pos_err = float(np.mean(wrong[pos])) if np.any(pos) else math.nan
    neg_err = float(np.mean(wrong[neg])) if np.any(neg) else math.nan
    return ErrorReport(overall_error=overall, positive_error=pos_err, negative_error=neg_err)


def labeled_state_stream(
    m: int,
    trials: int = 100,
    settings: SdpSettings | None = None,
    rng_seed=0,
    batch: int = 32,
):
    """Endless stream of (state, features, label) for random states.

    Labels come from the SDP rule (-1 steerable, +1 otherwise). Each draw
    uses an independent child seed, so any prefix of the stream is
    deterministic per seed; draws are labeled ``batch`` at a time purely
    for solver throughput, which does not change the sequence.
    """
    settings = settings or SdpSettings()
    root = _as_seedseq(rng_seed)
    while True:
        children = root.spawn(batch)
        states = []
        taus = []
        label_seeds = []
        for child in children:
            state_seed, label_seed = child.spawn(2)
            state = random_density_matrix(state_seed)
            states.append(state)
            taus.append(feature_vector(state).tau)
            label_seeds.append(label_seed)
        labels = label_states(states, m, trials=trials, settings=settings, rng_seeds=label_seeds)
        yield from zip(states, taus, labels)


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _fill_quotas(stream, n: int, max_draws: int):
    """Consume the stream until n/2 states of each label are collected."""
    quota = n // 2
    feats: list = []
    labels: list = []
    counts = {1: 0, -1: 0}
    draws = 0
    while counts[1] < quota or counts[-1] < quota:
        if draws >= max_draws:
            raise GenerationError(
                f"draw budget {max_draws} exhausted with {counts[1]} positive / "
                f"{counts[-1]} negative of {quota} needed each"
            )
        _, tau, label = next(stream)
        draws += 1
        if counts[label] < quota:
            counts[label] += 1
            feats.append(tau)
            labels.append(label)
    return Dataset(np.asarray(feats), np.asarray(labels, dtype=int)), draws


def generate_balanced_dataset(
    n: int,
    m: int,
    trials: int = 100,
    settings: SdpSettings | None = None,
    rng_seed=0,
) -> Dataset:
    """Balanced dataset of n/2 steerable and n/2 unsteerable random states.

    States are drawn from the Ginibre ensemble and labeled by the
    SDP rule; rejection sampling fills the two quotas. Raises
    GenerationError if 50 * n draws do not suffice.
    """
    if n < 2 or n % 2:
        raise DomainError("n must be an even count >= 2")
    stream = labeled_state_stream(m, trials=trials, settings=settings, rng_seed=rng_seed)
    data, _ = _fill_quotas(stream, n, max_draws=50 * n)
    return data


def grid_search_threaded(data: Dataset, grid: GridSpec, rng_seed=0, threads: int = 1):
    """Grid search with per-gamma work items fanned out to a worker pool.

    The reduction is a deterministic argmax in grid order regardless of
    completion order, so the result matches :func:`svm_core.grid_search`.
    """
    if threads <= 1:
        return svm_core.grid_search(data, grid, rng_seed)
    n = len(data)
    folds = min(grid.folds, n)
    y = data.labels.astype(float)
    rng = np.random.default_rng(rng_seed)
    assignment = svm_core._fold_assignment(data.labels, folds, rng)
    C_sorted = sorted(grid.C_values)
    gammas = sorted(grid.gamma_values)

    def eval_gamma(gamma):
        K = svm_core.rbf_gram(data.features, data.features, gamma)
        return [svm_core._cv_accuracy(K, y, C, assignment, folds) for C in C_sorted]

    rows = parallel_map(eval_gamma, gammas, threads)
    best = None
    for gi, gamma in enumerate(gammas):
        for ci, C in enumerate(C_sorted):
            key = (-rows[gi][ci], C, gamma)
            if best is None or key < best[0]:
                best = (key, SvmParams(C=C, gamma=gamma), rows[gi][ci])
    return best[1], best[2]


def run_inductive_baseline(
    labeled: Dataset,
    unlabeled: Dataset,
    grid: GridSpec,
    rng_seed=0,
    threads: int = 1,
) -> ErrorReport:
    """Grid-searched SVM trained on the labeled set, scored on the pool.

    ``unlabeled`` carries the ground-truth labels used only for scoring.
    Folds are capped at the labeled count when it is smaller than the
    requested fold count; the cap is recorded in the report.
    """
    pred, folds = _baseline_predictions(labeled, unlabeled.features, grid, rng_seed, threads)
    base = class_errors(pred, unlabeled.labels)
    return dataclasses.replace(base, folds_used=folds)


def _baseline_predictions(labeled, features, grid, rng_seed, threads):
    folds = min(grid.folds, len(labeled))
    search_grid = GridSpec(C_values=grid.C_values, gamma_values=grid.gamma_values, folds=folds)
    params, _ = grid_search_threaded(labeled, search_grid, rng_seed, threads)
    model = svm_core.train(labeled, params)
    return svm_core.predict(model, features), folds


def run_incremental_s4vm(
    labeled: Dataset,
    unlabeled: Dataset,
    config: ExperimentConfig,
    rng_seed=0,
) -> ErrorReport:
    """The M-split incremental protocol over the unlabeled pool.

    The pool is split into M equal chunks. For each chunk, the
    semi-supervised method predicts labels using everything labeled so
    far, once per candidate hyperparameter setting; five-fold
    cross-validation over the enlarged set (labeled plus the freshly
    labeled chunk) scores each setting, and the labels produced under the
    best-scoring hyperparameters are adopted as the chunk's "real" labels
    before moving on. The report averages the per-chunk error rates with
    equal weights.
    """
    report, _ = _incremental_run(labeled, unlabeled, config, rng_seed)
    return report


# Number of hyperparameter settings tried per chunk: the top ones ranked
# by cross-validation on the currently labeled data.
_SHORTLIST = 3


def _hyper_shortlist(cur, grid, rng_seed, threads, k=_SHORTLIST):
    """Top-k (C, gamma) settings by stratified CV on the labeled data."""
    n = len(cur)
    folds = min(PROTOCOL_FOLDS, n)
    y = cur.labels.astype(float)
    rng = np.random.default_rng(rng_seed)
    assignment = svm_core._fold_assignment(cur.labels, folds, rng)
    C_sorted = sorted(grid.C_values)
    scored = []
    for gamma in sorted(grid.gamma_values):
        K = svm_core.rbf_gram(cur.features, cur.features, gamma)
        for C in C_sorted:
            acc = svm_core._cv_accuracy(K, y, C, assignment, folds)
            scored.append((-acc, C, gamma))
    scored.sort()
    return [SvmParams(C=C, gamma=gamma) for _, C, gamma in scored[:k]]


def _union_cv_accuracy(union: Dataset, params: SvmParams, rng_seed) -> float:
    folds = min(PROTOCOL_FOLDS, len(union))
    return svm_core.k_fold_cv(union, params, folds, rng_seed)


def _incremental_run(labeled, unlabeled, config, rng_seed):
    u = len(unlabeled)
    if u != config.u:
        raise ConfigError(f"unlabeled pool has {u} rows, config says {config.u}")
    M = config.M
    root = _as_seedseq(rng_seed)
    split_seed, *chunk_seeds = root.spawn(1 + 3 * M)

    perm = np.random.default_rng(split_seed).permutation(u)
    chunk_size = u // M
    chunks = [perm[k * chunk_size : (k + 1) * chunk_size] for k in range(M)]

    cur = labeled
    per_split = []
    adopted_all = np.zeros(u, dtype=int)
    fallback = False
    for k, chunk_idx in enumerate(chunks):
        sel_seed, s4_seed, adopt_seed = chunk_seeds[3 * k : 3 * k + 3]
        chunk_X = unlabeled.features[chunk_idx]
        chunk_truth = unlabeled.labels[chunk_idx]

        shortlist = _hyper_shortlist(cur, config.grid, sel_seed, config.threads)
        best = None
        for setting in shortlist:
            s4_params = dataclasses.replace(
                config.s4vm, C1=setting.C, C2=0.1 * setting.C, gamma=setting.gamma
            )
            result = s4vm_core.s4vm_run(cur, chunk_X, s4_params, rng_seed=s4_seed)
            union = Dataset(
                np.vstack([cur.features, chunk_X]),
                np.concatenate([cur.labels, result.labels]),
            )
            score = _union_cv_accuracy(union, setting, adopt_seed)
            if best is None or score > best[0]:
                best = (score, result)
        result = best[1]
        fallback = fallback or result.fallback_used
        adopted = result.labels

        per_split.append(float(np.mean(adopted != chunk_truth)))
        adopted_all[chunk_idx] = adopted
        cur = Dataset(
            np.vstack([cur.features, chunk_X]),
            np.concatenate([cur.labels, adopted]),
        )

    pooled = class_errors(adopted_all, unlabeled.labels)
    report = ErrorReport(
        overall_error=float(np.mean(per_split)),
        positive_error=pooled.positive_error,
        negative_error=pooled.negative_error,
        per_split_errors=tuple(per_split),
        fallback_used=fallback,
        folds_used=PROTOCOL_FOLDS,
    )
    return report, adopted_all


@dataclass(frozen=True)
class RunComparison:
    run_id: int
    svm: ErrorReport
    s4vm: ErrorReport

    @property
    def difference(self) -> float:
        """SVM error minus S4VM error; positive means S4VM is better."""
        return self.svm.overall_error - self.s4vm.overall_error


@dataclass(frozen=True)
class ComparisonResult:
    config: ExperimentConfig
    runs: tuple
    max_difference: float
    mean_difference: float


def draw_labeled_sets(config: ExperimentConfig):
    """The n_runs disjoint balanced labeled sets of the experiment."""
    root = _as_seedseq(config.seeds[0])
    _, labeled_seed, _ = root.spawn(3)
    stream = labeled_state_stream(
        config.m, trials=config.trials, settings=config.sdp, rng_seed=labeled_seed
    )
    budget = 50 * config.l * config.n_runs
    sets = []
    for _ in range(config.n_runs):
        labeled, used = _fill_quotas(stream, config.l, max_draws=budget)
        budget -= used
        sets.append(labeled)
    return sets


def experiment_pool(config: ExperimentConfig) -> Dataset:
    """The shared unlabeled pool (with truth labels) of the experiment."""
    root = _as_seedseq(config.seeds[0])
    pool_seed, _, _ = root.spawn(3)
    return generate_balanced_dataset(
        config.u, config.m, trials=config.trials, settings=config.sdp, rng_seed=pool_seed
    )


def compare_runs(config: ExperimentConfig, unlabeled: Dataset | None = None) -> ComparisonResult:
    """Baseline-vs-S4VM errors over n_runs disjoint labeled draws.

    One shared unlabeled pool of u states is generated (or supplied, so
    several configurations can score against the same pool); both methods
    are scored on it for each of the n_runs labeled sets, which are
    consecutive disjoint draws from a single generation stream.
    """
    root = _as_seedseq(config.seeds[0])
    _, _, runs_root = root.spawn(3)
    run_seeds = runs_root.spawn(config.n_runs)
    if unlabeled is None:
        unlabeled = experiment_pool(config)
    labeled_sets = draw_labeled_sets(config)
    runs = []
    for run_id, labeled in enumerate(labeled_sets):
        svm_report = run_inductive_baseline(
            labeled, unlabeled, config.grid, rng_seed=run_seeds[run_id], threads=config.threads
        )
        s4_report = run_incremental_s4vm(labeled, unlabeled, config, rng_seed=run_seeds[run_id])
        runs.append(RunComparison(run_id=run_id, svm=svm_report, s4vm=s4_report))
    diffs = [r.difference for r in runs]
    return ComparisonResult(
        config=config,
        runs=tuple(runs),
        max_difference=float(np.max(diffs)),
        mean_difference=float(np.mean(diffs)),
    )


def msplit_runs(config: ExperimentConfig, M_values, unlabeled: Dataset | None = None):
    """Incremental-protocol errors for several split counts M.

    The labeled sets and the pool are shared across the M values so the
    effect of M is isolated. Returns a list of (M, run_id, ErrorReport).
    """
    for M in M_values:
        if config.u % M or config.u // M < 2:
            raise ConfigError(f"M={M} does not evenly split u={config.u} into chunks of >= 2")
    root = _as_seedseq(config.seeds[0])
    _, _, runs_root = root.spawn(3)
    run_seeds = runs_root.spawn(config.n_runs)
    if unlabeled is None:
        unlabeled = experiment_pool(config)
    labeled_sets = draw_labeled_sets(config)
    rows = []
    for M in M_values:
        cfg_m = dataclasses.replace(config, M=M)
        for run_id, labeled in enumerate(labeled_sets):
            report = run_incremental_s4vm(labeled, unlabeled, cfg_m, rng_seed=run_seeds[run_id])
            rows.append((M, run_id, report))
    return rows


def write_msplit_csv(rows, config: ExperimentConfig, path):
    lines = ["M,run_id,m,l,u,overall_error,pos_error,neg_error,fallback_used"]
    for M, run_id, rep in rows:
        lines.append(
            f"{M},{run_id},{config.m},{config.l},{config.u},"
            f"{repr(rep.overall_error)},{repr(rep.positive_error)},"
            f"{repr(rep.negative_error)},{int(rep.fallback_used)}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class WernerSweepResult:
    p_values: np.ndarray
    truth: np.ndarray
    svm_predictions: np.ndarray
    s4vm_predictions: np.ndarray
    svm_accuracy: float
    s4vm_accuracy: float
    fallback_used: bool


def werner_sweep(
    l: int,
    xi: float,
    n_points: int,
    m: int,
    config: ExperimentConfig,
    rng_seed=0,
) -> WernerSweepResult:
    """Classify generalized Werner states along a uniform p grid.

    Ground truth comes from the closed-form steerability criterion, the
    labeled set from SDP-labeled random states. The semi-supervised run
    uses a single chunk (M = 1), matching the reference protocol for this
    experiment.
    """
    if n_points < 2:
        raise DomainError("n_points must be >= 2")
    p_values = np.linspace(0.0, 1.0, n_points)
    feats = []
    truth = []
    for p in p_values:
        params = WernerParams(p=float(p), xi=xi)
        feats.append(feature_vector(werner_state(params)).tau)
        truth.append(1 if qstate.werner_unsteerable_analytic(params) else -1)
    pool = Dataset(np.asarray(feats), np.asarray(truth, dtype=int))

    root = _as_seedseq(rng_seed)
    gen_seed, svm_seed, s4_seed = root.spawn(3)
    labeled = generate_balanced_dataset(
        l, m, trials=config.trials, settings=config.sdp, rng_seed=gen_seed
    )
    svm_pred, _ = _baseline_predictions(labeled, pool.features, config.grid, svm_seed, config.threads)

    sweep_config = dataclasses.replace(config, l=l, u=n_points, M=1, m=m)
    s4_report, s4_pred = _incremental_run(labeled, pool, sweep_config, rng_seed=s4_seed)
    return WernerSweepResult(
        p_values=p_values,
        truth=pool.labels,
        svm_predictions=svm_pred,
        s4vm_predictions=s4_pred,
        svm_accuracy=1.0 - float(np.mean(svm_pred != pool.labels)),
        s4vm_accuracy=1.0 - s4_report.overall_error,
        fallback_used=s4_report.fallback_used,
    )


def write_comparison_csv(result: ComparisonResult, path):
    cfg = result.config
    lines = ["run_id,method,m,l,u,M,overall_error,pos_error,neg_error"]
    for run in result.runs:
        for method, rep in (("svm", run.svm), ("s4vm", run.s4vm)):
            lines.append(
                f"{run.run_id},{method},{cfg.m},{cfg.l},{cfg.u},{cfg.M},"
                f"{repr(rep.overall_error)},{repr(rep.positive_error)},{repr(rep.negative_error)}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_werner_csv(result: WernerSweepResult, path):
    lines = ["p,truth,svm_pred,s4vm_pred"]
    for p, t, sp, s4p in zip(
        result.p_values, result.truth, result.svm_predictions, result.s4vm_predictions
    ):
        lines.append(f"{repr(float(p))},{int(t)},{int(sp)},{int(s4p)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def git_blob_sha1(path) -> str:
    """Content hash of a file, computed the way git hashes blobs."""
    with open(path, "rb") as fh:
        data = fh.read()
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


def config_to_dict(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    out["grid"]["C_values"] = list(config.grid.C_values)
    out["grid"]["gamma_values"] = list(config.grid.gamma_values)
    out["seeds"] = list(config.seeds)
    return out


def write_manifest(out_dir, command: str, config: dict, input_files: dict | None = None):
    """Drop a manifest that pins everything needed to re-run bit-identically."""
    manifest = {
        "command": command,
        "config": config,
        "inputs": {name: git_blob_sha1(path) for name, path in (input_files or {}).items()},
    }
    blob = json.dumps(manifest, sort_keys=True, indent=2)
    manifest["config_hash"] = hashlib.sha256(blob.encode()).hexdigest()
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return path
