"""Command-line surface and run-directory management.

Subcommands: generate, fit, predict, ablate, evaluate, report, config.
Exit codes: 0 success, 1 validation/input error, 2 runtime or solver error.
Messages go to standard error; data goes to files or standard output.

Config files are flat `key = value` text with `#` comments; every key also
exists as a CLI flag, and `themes config --defaults` prints the full set.
Run directories are self-describing: a manifest records the config snapshot,
dataset hash, seeds, package versions, timestamps, and output inventory.
Model and metrics files carry no timestamps, so reruns with the same seed
produce byte-identical artifacts; the manifest is the only file that varies.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__, pipeline, synthgen
from .edm import PolicyNet, SamplerError, TrainingError
from .metrics import aggregate_runs, write_report_csv, write_report_json, write_svg_bars
from .pipeline import (ABLATION_NAMES, ThemesConfig, ThemesModel, dump_json,
                       evaluate_model, fit, predict_actions, run_ablation)
from .synthgen import GenerationError, GeneratorConfig, generate, load_ground_truth
from .tglasso import SolverError
from .trajdata import DataError, load_dataset, save_dataset, split_dataset


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _atomic_json(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    dump_json(tmp, doc)
    os.replace(tmp, path)


def read_flat_file(path) -> dict:
    """Parse `key = value` lines; `#` starts a comment; blanks are skipped."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    out = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{p}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _flag_dest(key: str) -> str:
    return "opt_" + key.replace(".", "__")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key = value config file")
    group = parser.add_argument_group("config overrides (see `themes config --defaults`)")
    for key, _, kind in pipeline._FLAT_FIELDS:
        group.add_argument(f"--{key}", dest=_flag_dest(key), metavar=kind.upper(),
                           help=argparse.SUPPRESS)


def _effective_config(args) -> ThemesConfig:
    flat = ThemesConfig().to_flat()
    if getattr(args, "config", None):
        file_flat = read_flat_file(args.config)
        unknown = sorted(set(file_flat) - set(flat))
        if unknown:
            raise DataError(f"unknown config keys in {args.config}: {', '.join(unknown)}")
        flat.update(file_flat)
    for key in list(flat):
        override = getattr(args, _flag_dest(key), None)
        if override is not None:
            flat[key] = override
    try:
        return ThemesConfig.from_flat(flat)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _resolve_model_dir(path) -> Path:
    p = Path(path)
    if (p / "model.json").is_file():
        return p
    if (p / "model" / "model.json").is_file():
        return p / "model"
    raise DataError(f"no model.json under {p}")


class _RunLock:
    """Exclusive .lock file per run directory; one fit per directory."""

    def __init__(self, directory: Path):
        self.path = directory / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(f"run directory is locked by {self.path}; "
                            "remove the file if no other run is active") from None
        os.write(self.fd, f"pid {os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc_info):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def _dataset_entry(path: Path, dataset) -> dict:
    return {
        "path": str(path),
        "sha256": _sha256(path),
        "trajectories": len(dataset.trajectories),
        "steps": int(dataset.total_steps),
    }


def _versions() -> dict:
    return {"themes": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _seed_entry(cfg: ThemesConfig) -> dict:
    ticc, em, edm_cfg = pipeline.derived_configs(cfg)
    return {"root": cfg.seed, "ticc": ticc.seed, "em": em.seed, "edm": edm_cfg.seed}


# ---------------------------------------------------------------- commands


def _cmd_generate(args) -> int:
    presets = {
        "default": GeneratorConfig(),
        "small": GeneratorConfig(N=12, segments_per_trajectory=3,
                                 mean_segment_length=12),
    }
    cfg = presets[args.preset]
    overrides = {
        "seed": args.seed,
        "N": args.trajectories,
        "m": args.state_dim,
        "A": args.actions,
        "K_true": args.k_true,
        "G_true": args.g_true,
        "segments_per_trajectory": args.segments,
        "mean_segment_length": args.segment_length,
        "mean_separation": args.mean_separation,
        "precision_sparsity": args.precision_sparsity,
        "lag_strength": args.lag_strength,
        "logit_scale": args.logit_scale,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if not 0 < args.test_fraction < 1:
        raise DataError("--test-fraction must be in (0, 1)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    dataset, truth = generate(cfg)
    split_seed = int(np.random.SeedSequence([cfg.seed, 5]).generate_state(1)[0])
    train, test = split_dataset(dataset, args.test_fraction, split_seed)
    save_dataset(train, out / "train.jsonl")
    save_dataset(test, out / "test.jsonl")
    synthgen.save_ground_truth(truth, out / "truth.json")
    manifest = {
        "schema_version": 1,
        "command": "generate",
        "preset": args.preset,
        "generator": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in vars(cfg).items()},
        "versions": _versions(),
        "started_at": started,
        "finished_at": _now(),
        "datasets": {
            "train": _dataset_entry(out / "train.jsonl", train),
            "test": _dataset_entry(out / "test.jsonl", test),
        },
        "outputs": ["train.jsonl", "test.jsonl", "truth.json"],
        "status": "done",
    }
    _atomic_json(out / "manifest.json", manifest)
    print(f"wrote {len(train.trajectories)} train / {len(test.trajectories)} test "
          f"trajectories to {out}", file=sys.stderr)
    return 0


def _fit_like(args, command: str) -> int:
    cfg = _effective_config(args)
    if command == "ablate":
        method = args.name
    else:
        method = "THEMES_0" if cfg.skip_regulator else "THEMES"
    data_path = Path(args.data)
    dataset = load_dataset(data_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with _RunLock(out):
        manifest = {
            "schema_version": 1,
            "command": command,
            "method": method,
            "config": cfg.to_json(),
            "dataset": _dataset_entry(data_path, dataset),
            "seeds": _seed_entry(cfg),
            "versions": _versions(),
            "started_at": _now(),
            "finished_at": None,
            "outputs": [],
            "status": "running",
        }
        _atomic_json(out / "manifest.json", manifest)
        if method == "THEMES":
            model = fit(dataset, cfg)
        else:
            model = run_ablation(method, dataset, cfg)
        model.save(out / "model")
        manifest["finished_at"] = _now()
        manifest["outputs"] = ["model/model.json", "model/segmentation.json"]
        manifest["status"] = "done"
        _atomic_json(out / "manifest.json", manifest)
    diag = model.diagnostics
    print(f"{method}: K={model.K} G={model.G} "
          f"outer_iterations={diag.get('outer_iterations')} "
          f"converged={diag.get('converged')} -> {out / 'model'}", file=sys.stderr)
    return 0


def _cmd_fit(args) -> int:
    return _fit_like(args, "fit")


def _cmd_ablate(args) -> int:
    return _fit_like(args, "ablate")


def _cmd_predict(args) -> int:
    if bool(args.policy) == bool(args.model):
        raise DataError("provide exactly one of --model or --policy")
    dataset = load_dataset(args.data)
    out = Path(args.out)
    rows = []
    if args.policy:
        doc = json.loads(Path(args.policy).read_text(encoding="utf-8"))
        net = PolicyNet.from_json(doc)
        if net.W1.shape[1] != dataset.state_dim:
            raise DataError(f"policy expects {net.W1.shape[1]} features, "
                            f"dataset has {dataset.state_dim}")
        for tr in dataset.trajectories:
            probs = np.exp(net.log_probs(tr.states))
            for t in range(len(tr)):
                rows.append({"traj": tr.id, "t": float(tr.timestamps[t]),
                             "p": probs[t].tolist(), "k": 0})
    else:
        model = ThemesModel.load(_resolve_model_dir(args.model))
        preds = predict_actions(model, dataset)
        for tr in dataset.trajectories:
            pr = preds[tr.id]
            for t in range(len(tr)):
                rows.append({"traj": tr.id, "t": float(tr.timestamps[t]),
                             "p": pr.probs[t].tolist(), "k": int(pr.labels[t])})
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} predictions to {out}", file=sys.stderr)
    return 0


def _cmd_evaluate(args) -> int:
    model_dir = _resolve_model_dir(args.model)
    model = ThemesModel.load(model_dir)
    dataset = load_dataset(args.data)
    truth_labels = None
    if args.truth:
        truth = load_ground_truth(args.truth)
        missing = [tr.id for tr in dataset.trajectories
                   if tr.id not in truth.regime_labels]
        if missing:
            raise DataError(f"ground truth lacks labels for: {', '.join(missing[:5])}")
        truth_labels = truth.regime_labels
    report = evaluate_model(model, dataset, truth_labels=truth_labels)
    run_dir = model_dir.parent if model_dir.name == "model" else model_dir
    method = args.method
    seed = model.config.seed
    manifest_path = run_dir / "manifest.json"
    if method is None and manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        method = manifest.get("method")
    doc = {"schema_version": 1, "method": method or "unknown", "seed": seed, **report}
    out = Path(args.out) if args.out else run_dir / "metrics.json"
    dump_json(out, doc)
    json.dump(doc, sys.stdout, sort_keys=True, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_report(args) -> int:
    per_method_runs = {}
    for run in args.runs:
        path = Path(run)
        metrics_path = path if path.is_file() else path / "metrics.json"
        if not metrics_path.is_file():
            raise DataError(f"no metrics.json under {path}")
        doc = json.loads(metrics_path.read_text(encoding="utf-8"))
        method = doc.get("method", "unknown")
        record = {k: v for k, v in doc.items()
                  if k not in ("method", "seed", "schema_version", "steps")
                  and (v is None or isinstance(v, (int, float)))}
        per_method_runs.setdefault(method, []).append(record)
    if not per_method_runs:
        raise DataError("no runs to report")
    table = {name: aggregate_runs(runs) for name, runs in per_method_runs.items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", table)
    write_report_json(out / "report.json", table, per_method_runs)
    try:
        write_svg_bars(out / "report.svg", table, metric=args.plot_metric)
    except ValueError as exc:
        print(f"skipping plot: {exc}", file=sys.stderr)
    print((out / "report.csv").read_text(encoding="utf-8"), end="")
    return 0


def _cmd_config(args) -> int:
    if args.defaults:
        flat = ThemesConfig().to_flat()
    else:
        flat = _effective_config(args).to_flat()
    for key, value in flat.items():
        print(f"{key} = {value}")
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="themes",
                     description="Offline apprenticeship learning over "
                                 "sub-trajectory clusters")
    parser.add_argument("--version", action="version", version=f"themes {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("generate", help="synthesize a benchmark dataset")
    p.add_argument("--preset", choices=["default", "small"], default="default")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--state-dim", type=int, default=None)
    p.add_argument("--actions", type=int, default=None)
    p.add_argument("--k-true", type=int, default=None)
    p.add_argument("--g-true", type=int, default=None)
    p.add_argument("--segments", type=int, default=None)
    p.add_argument("--segment-length", type=int, default=None)
    p.add_argument("--mean-separation", type=float, default=None)
    p.add_argument("--precision-sparsity", type=float, default=None)
    p.add_argument("--lag-strength", type=float, default=None)
    p.add_argument("--logit-scale", type=float, default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="fit the full pipeline on a dataset")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("ablate", help="fit one of the named method variants")
    p.add_argument("--name", required=True, choices=list(ABLATION_NAMES))
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("predict", help="per-timestep action probabilities")
    p.add_argument("--model", metavar="DIR")
    p.add_argument("--policy", metavar="FILE",
                   help="single policy-net JSON instead of a model directory")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a model on a dataset")
    p.add_argument("--model", required=True, metavar="DIR")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--truth", metavar="FILE", help="ground-truth labels (synthetic)")
    p.add_argument("--out", metavar="FILE")
    p.add_argument("--method", metavar="NAME", help="method label for reports")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="aggregate metrics across runs")
    p.add_argument("--runs", required=True, nargs="+", metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--plot-metric", default="f1", metavar="METRIC")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("config", help="print configuration keys and values")
    p.add_argument("--defaults", action="store_true",
                   help="print the built-in defaults and exit")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (SolverError, TrainingError, SamplerError, GenerationError,
            np.linalg.LinAlgError) as exc:
        print(f"themes {args.command}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"themes {args.command}: not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, IsADirectoryError, NotADirectoryError,
            PermissionError) as exc:
        print(f"themes {args.command}: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"themes {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
