"""Command-line entry points.

Every subcommand accepts ``--config <json>``, ``--out <dir>`` and ``--seed``.
A config document is a flat JSON object whose keys are the subcommand's long
flags (dashes or underscores) plus optional ``"model"`` and ``"train"`` objects
holding :class:`~specformer.model.ModelConfig` and
:class:`~specformer.train.TrainConfig` fields. Explicit flags win over the
document. Unknown keys are an error.

Exit codes: 0 success, 1 runtime failure, 2 usage, config or dataset error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks
from ._accel import backend_name
from .analysis import condense_attention
from .graph import (
    FILTERS,
    DatasetError,
    SparseGraph,
    grid_graph,
    load_node_dataset,
    make_filter,
    make_synthetic_task,
    normalized_laplacian,
    random_split,
    stochastic_block_model,
)
from .linalg import EigenSystem, symmetric_eig, truncate_spectrum
from .model import ModelConfig
from .train import TrainConfig, train_nodecls, train_synthetic

log = logging.getLogger("specformer")

# Defaults for the synthetic regression run: the small variant, about 3.6K parameters.
SYNTH_MODEL = dict(variant="small", d=16, heads=1, combine_bias=False)
NODECLS_MODEL = dict(variant="small", d=16, heads=2, feature_dropout=0.5)
NODECLS_TRAIN = dict(
    max_epochs=2000,
    patience=200,
    lr=0.01,
    weight_decay=5e-4,
    loss="cross-entropy",
    metric="accuracy",
)


class UsageError(Exception):
    """Bad flags or config; exit status 2."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    return doc


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser, defaults: dict):
    """Merge the config document under the explicit flags.

    Returns ``(options, model_overrides, train_overrides)``.
    """
    doc = _read_json(args.config) if args.config else {}
    known = {a.dest for a in parser._actions} - {"help", "config", "command"}
    model = dict(doc.pop("model", {}) or {})
    train = dict(doc.pop("train", {}) or {})
    opts = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        opts[dest] = value
    for dest in known:
        flag = getattr(args, dest, None)
        if flag is not None:
            opts[dest] = flag
        opts.setdefault(dest, defaults.get(dest))
    for name, section, cls in (("model", model, ModelConfig), ("train", train, TrainConfig)):
        unknown = set(section) - _field_names(cls)
        if unknown:
            raise UsageError(f"unknown {name} config key(s): {sorted(unknown)}")
    return opts, model, train


def _make_config(cls, base: dict, overrides: dict):
    try:
        return cls(**{**base, **overrides})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _out_dir(opts) -> Path:
    out = Path(opts["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _parse_grid(text: str) -> tuple[int, int]:
    parts = str(text).lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad grid size {text!r}; expected N or HxW") from None
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2 or min(dims) < 1:
        raise UsageError(f"bad grid size {text!r}; expected N or HxW")
    return dims[0], dims[1]


def _parse_truncate(text: Optional[str]) -> Optional[tuple[int, int]]:
    if not text:
        return None
    found = {}
    for part in str(text).split(","):
        key, _, value = part.partition(":")
        if key not in ("smallest", "largest") or not value.isdigit():
            raise UsageError(f"bad --truncate {text!r}; expected smallest:K,largest:K")
        found[key] = int(value)
    return found.get("smallest", 0), found.get("largest", 0)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, parser) -> int:
    opts, model_kw, train_kw = _resolve(args, parser, {"filter": "lowpass", "grid": "32", "images": 10, "seed": 0, "max_filter_points": 256})
    if opts["filter"] not in FILTERS:
        raise UsageError(f"unknown filter {opts['filter']!r}; choose from {sorted(FILTERS)}")
    h, w = _parse_grid(opts["grid"])
    seed = int(opts["seed"])
    model_config = _make_config(ModelConfig, SYNTH_MODEL, model_kw)
    train_config = _make_config(TrainConfig, {"seed": seed}, train_kw)
    task = make_synthetic_task(h, w, int(opts["images"]), make_filter(opts["filter"]), seed)
    report, _ = train_synthetic(task, model_config, train_config, int(opts["max_filter_points"]))

    out = _out_dir(opts)
    summary = {
        **report.summary(),
        "filter": opts["filter"],
        "grid": [h, w],
        "images": int(opts["images"]),
        "seed": seed,
        "backend": backend_name(),
        "model": model_config.to_dict(),
        "train": dataclasses.asdict(train_config),
    }
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "loss.csv").write_text(report.loss_csv())
    _write_csv(out / "learned_filter.csv", ["lambda", "g_true", "g_learned"], report.filter_curve.tolist())
    (out / "attention_condensed.csv").write_text(report.attention.to_csv())
    print(f"{opts['filter']}: r2={report.r2:.6f} sse={report.final_sse:.6g} "
          f"epochs={report.epochs} seconds={report.seconds:.1f} -> {out}")
    return 0


def _load_graph(opts) -> SparseGraph:
    if opts.get("data") and opts.get("sbm"):
        raise UsageError("pass either --data or --sbm, not both")
    if opts.get("data"):
        return load_node_dataset(opts["data"])
    if opts.get("sbm"):
        return stochastic_block_model([100, 100], 0.2, 0.01, seed=int(opts["seed"]))
    raise UsageError("a dataset is required: --data DIR or --sbm")


def _nodecls_run(graph, eig, model_config, train_config, run_seed):
    splits = random_split(graph.n, run_seed)
    cfg = dataclasses.replace(train_config, seed=run_seed)
    report, _ = train_nodecls(graph, splits, model_config, cfg, eig=eig)
    return {
        "seed": run_seed,
        "test_accuracy": report.test_accuracy,
        "best_epoch": report.best_epoch,
        "epochs": report.epochs,
        "seconds": report.seconds,
    }


def cmd_nodecls(args, parser) -> int:
    opts, model_kw, train_kw = _resolve(args, parser, {"runs": 10, "seed": 0, "parallel": 1})
    graph = _load_graph(opts)
    truncate = _parse_truncate(opts.get("truncate"))
    runs = int(opts["runs"])
    if runs < 1:
        raise UsageError("--runs must be positive")
    base = {**NODECLS_MODEL, "in_dim": graph.features.shape[1], "out_dim": graph.num_classes}
    model_config = _make_config(ModelConfig, base, model_kw)
    train_config = _make_config(TrainConfig, NODECLS_TRAIN, train_kw)

    eig: EigenSystem = symmetric_eig(normalized_laplacian(graph))
    if truncate is not None:
        try:
            eig = truncate_spectrum(eig, *truncate)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    seeds = [int(opts["seed"]) + r for r in range(runs)]
    jobs = (graph, eig, model_config, train_config)
    if int(opts["parallel"]) > 1:
        with ProcessPoolExecutor(max_workers=int(opts["parallel"])) as pool:
            results = list(pool.map(_nodecls_run, *zip(*[jobs] * runs), seeds))
    else:
        results = [_nodecls_run(*jobs, s) for s in seeds]

    accs = np.array([r["test_accuracy"] for r in results])
    std = float(accs.std(ddof=1)) if runs > 1 else 0.0
    summary = {
        "mean": float(accs.mean()),
        "ci95": 1.96 * std / math.sqrt(runs),
        "runs": results,
        "q": eig.q,
        "n": graph.n,
        "num_classes": graph.num_classes,
        "model": model_config.to_dict(),
        "train": dataclasses.asdict(train_config),
    }
    out = _out_dir(opts)
    (out / "nodecls_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"accuracy {100 * summary['mean']:.2f} +/- {100 * summary['ci95']:.2f} "
          f"over {runs} run(s), q={eig.q}")
    return 0


def cmd_eig(args, parser) -> int:
    opts, _, _ = _resolve(args, parser, {})
    if bool(opts.get("grid")) == bool(opts.get("data")):
        raise UsageError("pass exactly one of --grid HxW or --data DIR")
    graph = grid_graph(*_parse_grid(opts["grid"])) if opts.get("grid") else load_node_dataset(opts["data"])
    eig = symmetric_eig(normalized_laplacian(graph))
    out = _out_dir(opts)
    _write_csv(out / "eigenvalues.csv", ["index", "lambda"], [(k, float(v)) for k, v in enumerate(eig.eigenvalues)])
    if opts.get("vectors"):
        u = eig.eigenvectors
        _write_csv(out / "eigenvectors.csv", [f"u{k}" for k in range(eig.q)], [[float(v) for v in row] for row in u])
    print(",".join(f"{v:.17g}" for v in eig.eigenvalues))
    return 0


def cmd_gradcheck(args, parser) -> int:
    opts, _, _ = _resolve(args, parser, {"seed": 0})
    reports = checks.run_suite(seed=int(opts["seed"]), include_models=not opts.get("ops_only"))
    width = max(len(k) for k in reports)
    lines = [f"{'check':<{width}}  max_rel_err  status"]
    for name, rep in reports.items():
        lines.append(f"{name:<{width}}  {rep.max_error:11.3e}  {'ok' if rep.passed else 'FAIL'}")
    print("\n".join(lines))
    failed = [k for k, r in reports.items() if not r.passed]
    if opts.get("out"):
        out = _out_dir(opts)
        doc = {k: {"max_error": r.max_error, "passed": r.passed, "per_param": r.errors} for k, r in reports.items()}
        (out / "gradcheck.json").write_text(json.dumps(doc, indent=2) + "\n")
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _read_numeric_csv(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DatasetError(f"missing file: {p}")
    rows = []
    with p.open() as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise DatasetError(f"{p}:{lineno}: non-numeric value") from None
    if not rows:
        raise DatasetError(f"{p}: no numeric rows")
    if len({len(r) for r in rows}) != 1:
        raise DatasetError(f"{p}: ragged rows")
    return np.array(rows)


def cmd_attn_condense(args, parser) -> int:
    opts, _, _ = _resolve(args, parser, {})
    if not opts.get("attention") or not opts.get("lambdas"):
        raise UsageError("--attention and --lambdas are required")
    b = _read_numeric_csv(opts["attention"])
    lam = _read_numeric_csv(opts["lambdas"])
    lam = lam[:, -1] if lam.shape[1] > 1 else lam[:, 0]
    try:
        result = condense_attention(b, lam)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = result.to_csv()
    if opts.get("out"):
        (_out_dir(opts) / "attention_condensed.csv").write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specformer", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthetic spectral filter regression on a grid")
    _common(p)
    p.add_argument("--filter", choices=sorted(FILTERS))
    p.add_argument("--grid", help="grid size N or HxW (default 32)")
    p.add_argument("--images", type=int, help="number of signals (default 10)")
    p.add_argument("--max-filter-points", type=int, help="points in learned_filter.csv (default 256)")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("nodecls", help="node classification over seeded random splits")
    _common(p)
    p.add_argument("--data", help="dataset directory (edges.txt, features.csv, labels.txt)")
    p.add_argument("--sbm", action="store_const", const=True, help="use the built-in two-community SBM")
    p.add_argument("--runs", type=int, help="number of seeded runs (default 10)")
    p.add_argument("--truncate", help="keep smallest:K,largest:K eigenpairs")
    p.add_argument("--parallel", type=int, help="worker processes (default 1)")
    p.set_defaults(handler=cmd_nodecls)

    p = sub.add_parser("eig", help="eigendecomposition of a normalized Laplacian")
    _common(p)
    p.add_argument("--grid", help="grid size N or HxW")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--vectors", action="store_const", const=True, help="also write eigenvectors.csv")
    p.set_defaults(handler=cmd_eig)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the model")
    _common(p)
    p.add_argument("--ops-only", action="store_const", const=True, help="skip the model checks")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("attn-condense", help="condense an attention map into 3x3 bands")
    _common(p)
    p.add_argument("--attention", help="CSV with a q x q row-stochastic matrix")
    p.add_argument("--lambdas", help="CSV with q eigenvalues (last column used)")
    p.set_defaults(handler=cmd_attn_condense)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.handler(args, sub)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
