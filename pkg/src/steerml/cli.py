"""Command-line interface.

Machine-readable results go to stdout, logs to stderr. Every command that
writes an output directory also drops a manifest.json with the fully
resolved configuration so the run can be repeated bit-identically.

Exit codes: 0 success, 1 domain/runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import pipeline, qstate, s4vm_core, sdp_steer, svm_core
from .errors import SteermlError
from .pipeline import ExperimentConfig
from .s4vm_core import S4vmParams
from .sdp_steer import SdpSettings
from .svm_core import Dataset, GridSpec

logger = logging.getLogger("steerml")


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out-dir", default=None, help="directory for result files + manifest")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker parallelism bound (default: cores)")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--verbose", action="store_true", help="info-level logs on stderr")


# Required flags are validated after the config file is merged, so a
# config can supply them too.
_REQUIRED = {
    "gen": ("n", "m"),
    "label": ("state", "m"),
    "train-svm": ("data",),
    "s4vm": ("labeled", "unlabeled"),
    "compare": ("m", "u"),
    "class-errors": ("m", "u"),
    "werner": ("m",),
    "msplit": ("m", "u"),
}


def _experiment_flags(p: argparse.ArgumentParser, need_u=True):
    p.add_argument("--m", type=int, help="measurements per SDP trial")
    p.add_argument("--l", type=int, default=30, help="labeled states per run")
    if need_u:
        p.add_argument("--u", type=int, help="unlabeled pool size")
    p.add_argument("--M", type=int, default=2, help="incremental split count")
    p.add_argument("--trials", type=int, default=100, help="SDP repetitions per state")
    p.add_argument("--n-runs", type=int, default=10, help="labeled-set repetitions")
    p.add_argument("--folds", type=int, default=10, help="baseline CV folds")
    _s4vm_flags(p)


def _s4vm_flags(p: argparse.ArgumentParser):
    p.add_argument("--beta", type=float, default=0.1, help="balance slack")
    p.add_argument("--lam", type=float, default=3.0, help="worst-case loss weight")
    p.add_argument("--T", type=int, default=10, help="separator count")
    p.add_argument("--n-samples", type=int, default=100, help="candidate labelings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steerml",
        description="Steerability labeling (SDP witness) and safe semi-supervised "
        "classification of two-qubit states.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a balanced SDP-labeled dataset (CSV on stdout)")
    p.add_argument("--n", type=int, help="dataset size (even)")
    p.add_argument("--m", type=int)
    p.add_argument("--trials", type=int, default=100)
    _common_flags(p)

    p = sub.add_parser("label", help="SDP-label a state file (prints -1 or +1)")
    p.add_argument("--state", help="JSON state file {rho_re, rho_im}")
    p.add_argument("--m", type=int)
    p.add_argument("--trials", type=int, default=100)
    _common_flags(p)

    p = sub.add_parser("train-svm", help="grid-search and train an SVM on a dataset CSV")
    p.add_argument("--data", help="dataset CSV (features + label)")
    p.add_argument("--folds", type=int, default=10)
    _common_flags(p)

    p = sub.add_parser("s4vm", help="semi-supervised labels for an unlabeled CSV")
    p.add_argument("--labeled", help="labeled dataset CSV")
    p.add_argument("--unlabeled", help="unlabeled features CSV")
    p.add_argument("--C1", type=float, default=1.0)
    p.add_argument("--C2", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=1.0)
    _s4vm_flags(p)
    _common_flags(p)

    p = sub.add_parser("compare", help="SVM vs S4VM errors over labeled-set draws")
    _experiment_flags(p)
    _common_flags(p)

    p = sub.add_parser("class-errors", help="per-class SVM vs S4VM errors")
    _experiment_flags(p)
    _common_flags(p)

    p = sub.add_parser("werner", help="generalized Werner sweep with analytic truth")
    p.add_argument("--m", type=int)
    p.add_argument("--l", type=int, default=30)
    p.add_argument("--xi", type=float, default=float(np.pi / 8), help="state angle (radians)")
    p.add_argument("--n-points", type=int, default=500)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--folds", type=int, default=10)
    _s4vm_flags(p)
    _common_flags(p)

    p = sub.add_parser("msplit", help="incremental-protocol errors per split count M")
    p.add_argument("--M-list", default="1,2,4,8", help="comma-separated split counts")
    _experiment_flags(p)
    _common_flags(p)

    return parser


def _apply_config_file(parser, args):
    """Fill flag values from a flat key=value file (flags still win)."""
    if not args.config:
        return args
    values = {}
    with open(args.config) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SteermlError(f"{args.config}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            values[key.strip().replace("-", "_")] = raw.strip()
    known = vars(args)
    for key, raw in values.items():
        if key not in known:
            parser.error(f"unknown config key '{key}'")
        try:
            parsed: object = int(raw)
        except ValueError:
            try:
                parsed = float(raw)
            except ValueError:
                parsed = raw
        default = parser.get_default(key)
        if known[key] == default:
            setattr(args, key, parsed)
    return args


def _ensure_out_dir(args):
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


def _experiment_config(args, u=None) -> ExperimentConfig:
    return ExperimentConfig(
        m=args.m,
        l=args.l,
        u=args.u if u is None else u,
        M=args.M if hasattr(args, "M") else 1,
        trials=args.trials,
        n_runs=getattr(args, "n_runs", 1),
        seeds=(args.seed,),
        grid=GridSpec(folds=args.folds),
        s4vm=S4vmParams(beta=args.beta, lam=args.lam, T=args.T, n_samples=args.n_samples),
        sdp=SdpSettings(),
        threads=args.threads,
    )


def _cli_config_dict(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("config", "verbose"):
            continue
        out[key] = value
    return out


def cmd_gen(args) -> int:
    data = pipeline.generate_balanced_dataset(
        args.n, args.m, trials=args.trials, rng_seed=args.seed
    )
    csv_text = svm_core.dataset_to_csv(data)
    sys.stdout.write(csv_text)
    out_dir = _ensure_out_dir(args)
    if out_dir:
        svm_core.save_dataset(data, os.path.join(out_dir, "dataset.csv"))
        pipeline.write_manifest(out_dir, "gen", _cli_config_dict(args))
    return 0


def cmd_label(args) -> int:
    state = qstate.load_state(args.state)
    label = sdp_steer.label_state(state, args.m, trials=args.trials, rng_seed=args.seed)
    print(label)
    out_dir = _ensure_out_dir(args)
    if out_dir:
        pipeline.write_manifest(
            out_dir, "label", _cli_config_dict(args), input_files={"state": args.state}
        )
    return 0


def cmd_train_svm(args) -> int:
    data = svm_core.load_dataset(args.data)
    folds = min(args.folds, len(data))
    params, acc = pipeline.grid_search_threaded(
        data, GridSpec(folds=folds), rng_seed=args.seed, threads=args.threads
    )
    model = svm_core.train(data, params)
    _emit({"C": params.C, "gamma": params.gamma, "cv_accuracy": acc, "folds": folds})
    out_dir = _ensure_out_dir(args)
    if out_dir:
        svm_core.save_model(model, os.path.join(out_dir, "model.json"))
        pipeline.write_manifest(
            out_dir, "train-svm", _cli_config_dict(args), input_files={"data": args.data}
        )
    return 0


def _load_features(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        drop_last = header and header[-1] == "label"
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if drop_last:
                parts = parts[:-1]
            rows.append([float(v) for v in parts])
    return np.asarray(rows, dtype=float)


def cmd_s4vm(args) -> int:
    labeled = svm_core.load_dataset(args.labeled)
    unlabeled = _load_features(args.unlabeled)
    params = S4vmParams(
        beta=args.beta,
        lam=args.lam,
        T=args.T,
        n_samples=args.n_samples,
        C1=args.C1,
        C2=args.C2,
        gamma=args.gamma,
    )
    result = s4vm_core.s4vm_run(labeled, unlabeled, params, rng_seed=args.seed)
    for label in result.labels:
        print(int(label))
    out_dir = _ensure_out_dir(args)
    if out_dir:
        s4vm_core.save_run_report(
            result, params, args.seed, os.path.join(out_dir, "run_report.json")
        )
        pipeline.write_manifest(
            out_dir,
            "s4vm",
            _cli_config_dict(args),
            input_files={"labeled": args.labeled, "unlabeled": args.unlabeled},
        )
    return 0


def cmd_compare(args, per_class=False) -> int:
    config = _experiment_config(args)
    result = pipeline.compare_runs(config)
    runs = []
    for run in result.runs:
        row = {
            "run_id": run.run_id,
            "svm_error": run.svm.overall_error,
            "s4vm_error": run.s4vm.overall_error,
            "difference": run.difference,
        }
        if per_class:
            row.update(
                svm_pos=run.svm.positive_error,
                svm_neg=run.svm.negative_error,
                s4vm_pos=run.s4vm.positive_error,
                s4vm_neg=run.s4vm.negative_error,
            )
        runs.append(row)
    summary = {
        "max_difference": result.max_difference,
        "mean_difference": result.mean_difference,
        "runs": runs,
    }
    if per_class:
        summary["max_difference_positive"] = max(
            r["svm_pos"] - r["s4vm_pos"] for r in runs
        )
        summary["max_difference_negative"] = max(
            r["svm_neg"] - r["s4vm_neg"] for r in runs
        )
    _emit(summary)
    out_dir = _ensure_out_dir(args)
    if out_dir:
        pipeline.write_comparison_csv(result, os.path.join(out_dir, "comparison.csv"))
        pipeline.write_manifest(
            out_dir, "class-errors" if per_class else "compare", _cli_config_dict(args)
        )
    return 0


def cmd_werner(args) -> int:
    config = ExperimentConfig(
        m=args.m,
        l=args.l,
        u=args.n_points,
        M=1,
        trials=args.trials,
        n_runs=1,
        seeds=(args.seed,),
        grid=GridSpec(folds=args.folds),
        s4vm=S4vmParams(beta=args.beta, lam=args.lam, T=args.T, n_samples=args.n_samples),
        threads=args.threads,
    )
    result = pipeline.werner_sweep(
        args.l, args.xi, args.n_points, args.m, config, rng_seed=args.seed
    )
    _emit(
        {
            "svm_accuracy": result.svm_accuracy,
            "s4vm_accuracy": result.s4vm_accuracy,
            "fallback_used": result.fallback_used,
        }
    )
    out_dir = _ensure_out_dir(args)
    if out_dir:
        pipeline.write_werner_csv(result, os.path.join(out_dir, "werner_sweep.csv"))
        pipeline.write_manifest(out_dir, "werner", _cli_config_dict(args))
    return 0


def cmd_msplit(args) -> int:
    M_values = [int(tok) for tok in args.M_list.split(",") if tok.strip()]
    config = _experiment_config(args)
    rows = pipeline.msplit_runs(config, M_values)
    _emit(
        {
            "rows": [
                {"M": M, "run_id": rid, "error": rep.overall_error}
                for M, rid, rep in rows
            ]
        }
    )
    out_dir = _ensure_out_dir(args)
    if out_dir:
        pipeline.write_msplit_csv(rows, config, os.path.join(out_dir, "msplit.csv"))
        pipeline.write_manifest(out_dir, "msplit", _cli_config_dict(args))
    return 0


_HANDLERS = {
    "gen": cmd_gen,
    "label": cmd_label,
    "train-svm": cmd_train_svm,
    "s4vm": cmd_s4vm,
    "compare": cmd_compare,
    "class-errors": lambda args: cmd_compare(args, per_class=True),
    "werner": cmd_werner,
    "msplit": cmd_msplit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, args)
        missing = [
            name for name in _REQUIRED.get(args.command, ()) if getattr(args, name) is None
        ]
        if missing:
            parser.error(
                f"{args.command}: missing required option(s): "
                + ", ".join("--" + name.replace("_", "-") for name in missing)
            )
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _HANDLERS[args.command](args)
    except SteermlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
