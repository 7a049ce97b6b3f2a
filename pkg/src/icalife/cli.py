"""Command-line entry point.

Subcommands cover the full workflow: generate or load a dataset, extract
features, benchmark regressors, replay the monitoring strategy, sweep its
margin, and verify the numerical core without any dataset at all.  Every
run writes a manifest so outputs can be traced back to their inputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, ensemble
from .baselines import REGRESSOR_KINDS, RegressorSpec, fit_svr
from .datamodel import (build_regression_dataset, generate_synthetic_fleet,
                        label_fleet, load_fleet, write_fleet)
from .errors import IcalifeError, ValidationError
from .evaluation import TARGETS, evaluate, write_results_csv, \
    write_summary_csv
from .ica import (FEATURE_NAMES, design_lowpass, extract_fleet_features,
                  spearman)
from .monitoring import (StrategyConfig, compute_kpis, simulate, sweep_k,
                         write_kpi_csv, write_sweep_csv, write_trace_csv)
from .selftest import run_selftest

DATASET_ENV_VAR = "ICALIFE_DATASET"

DEFAULT_K_VALUES = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one run; unknown keys are rejected on load."""

    dataset_dir: str | None = None
    output_dir: str = "icalife_out"
    target: str = "soh"
    models: tuple = REGRESSOR_KINDS
    seed: int = 7
    cells: int = 8
    cell: str | None = None
    k: float = 2.0
    k_values: tuple = DEFAULT_K_VALUES
    n_min: int = 40
    soh_eol: float = 0.8
    epochs: int = 100
    filter_order: int = 4
    filter_cutoff_hz: float = 0.01
    smooth_window: int = 25

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValidationError(f"unknown target {self.target!r}")
        object.__setattr__(self, "models", tuple(self.models))
        unknown = [m for m in self.models if m not in REGRESSOR_KINDS]
        if unknown or not self.models:
            raise ValidationError(f"unknown models {unknown} "
                                  f"(choose from {REGRESSOR_KINDS})")
        object.__setattr__(self, "k_values",
                           tuple(float(k) for k in self.k_values))
        if self.cells < 1:
            raise ValidationError("cells must be at least 1")

    @classmethod
    def from_mapping(cls, mapping) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        return cls(**mapping)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["models"] = list(self.models)
        out["k_values"] = list(self.k_values)
        return out

    def strategy(self, k=None) -> StrategyConfig:
        return StrategyConfig(k=self.k if k is None else k,
                              n_min=self.n_min, soh_eol=self.soh_eol,
                              epochs=self.epochs)


def dataset_fingerprint(dataset_dir) -> str:
    """Content hash of every CSV in the dataset directory."""
    paths = sorted(Path(dataset_dir).glob("*.csv"))
    if not paths:
        raise ValidationError(f"no CSV files in {dataset_dir}")
    digest = hashlib.sha256()
    for path in paths:
        digest.update(path.name.encode("utf-8"))
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return "sha256:" + digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: RunConfig,
                   fingerprint: str | None, outputs) -> Path:
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config": config.as_dict(),
        "dataset_fingerprint": fingerprint,
        "outputs": sorted(str(o) for o in outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _resolve_config(args, **overrides) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.is_file():
            raise ValidationError(f"config file {config_path} not found")
        try:
            loaded = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        data.update(loaded)
    env = os.environ.get(DATASET_ENV_VAR)
    if env:
        data["dataset_dir"] = env
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(data)


def _require_dataset(config: RunConfig) -> str:
    if config.dataset_dir is None:
        raise ValidationError(
            f"no dataset directory (use --dataset, ${DATASET_ENV_VAR}, "
            "or a config file)")
    return config.dataset_dir


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_labeled(config: RunConfig):
    fleet = label_fleet(load_fleet(_require_dataset(config)),
                        soh_eol=config.soh_eol)
    spec = design_lowpass(config.filter_order, config.filter_cutoff_hz, 1.0)
    features = extract_fleet_features(fleet, spec, config.smooth_window)
    return fleet, features


def _num(value) -> str:
    return repr(float(value))


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args) -> int:
    config = _resolve_config(args, cells=args.cells, seed=args.seed,
                             output_dir=args.out)
    out = _out_dir(config)
    fleet = generate_synthetic_fleet(config.cells, config.seed)
    files = write_fleet(fleet, out)
    write_manifest(out, "synth", config, dataset_fingerprint(out),
                   [p.name for p in files])
    print(f"wrote {len(files)} dataset files to {out}")
    return 0


def _cmd_features(args) -> int:
    config = _resolve_config(args, dataset_dir=args.dataset,
                             output_dir=args.out)
    fleet, features = _load_labeled(config)
    out = _out_dir(config)

    features_path = out / "features.csv"
    columns = {"soh": [], "rul": [], "vectors": []}
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("cell_id", "cycle_number") + FEATURE_NAMES
                        + ("soh", "rul"))
        for cell in fleet:
            for i, diag in enumerate(cell.diagnostics):
                vec = features[(cell.cell_id, diag.cycle_number)].as_array()
                soh = float(cell.soh_by_diag[i])
                rul = float(cell.rul_by_diag[i])
                writer.writerow([cell.cell_id, diag.cycle_number]
                                + [_num(v) for v in vec]
                                + [_num(soh), _num(rul)])
                columns["vectors"].append(vec)
                columns["soh"].append(soh)
                columns["rul"].append(rul)

    matrix = np.vstack(columns["vectors"])
    corr_path = out / "correlations.csv"
    with open(corr_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("feature", "target", "spearman"))
        for target in ("soh", "rul"):
            truth = np.array(columns[target])
            for j, name in enumerate(FEATURE_NAMES):
                writer.writerow([name, target,
                                 _num(spearman(matrix[:, j], truth))])

    fingerprint = dataset_fingerprint(config.dataset_dir)
    write_manifest(out, "features", config, fingerprint,
                   [features_path.name, corr_path.name])
    print(f"wrote {features_path.name} and {corr_path.name} to {out}")
    return 0


def _model_spec(kind: str, config: RunConfig) -> RegressorSpec:
    hp = {"epochs": config.epochs} if kind == "gprn" else {}
    return RegressorSpec(kind=kind, hyperparameters=hp, seed=config.seed)


def _cmd_evaluate(args) -> int:
    models = tuple(args.models.split(",")) if args.models else None
    config = _resolve_config(args, dataset_dir=args.dataset,
                             output_dir=args.out, target=args.target,
                             models=models)
    fleet, features = _load_labeled(config)
    rows = build_regression_dataset(fleet, config.target, features)
    out = _out_dir(config)
    outputs = []
    reports = []
    for kind in config.models:
        report = evaluate(_model_spec(kind, config), rows, config.target)
        reports.append(report)
        path = write_results_csv(
            report, out / f"results_{config.target}_{kind}.csv")
        outputs.append(path.name)
        print(f"{kind}: test MAE {report.mae_test:.6g}, "
              f"max {report.max_error_test:.6g}, "
              f"{report.n_failed} failed splits")
    summary = write_summary_csv(reports, out / f"summary_{config.target}.csv")
    outputs.append(summary.name)
    write_manifest(out, "evaluate", config,
                   dataset_fingerprint(config.dataset_dir), outputs)
    return 0


def _train_for_holdout(fleet, features, holdout: str, config: RunConfig):
    rul_rows = build_regression_dataset(fleet, "rul", features)
    soh_rows = build_regression_dataset(fleet, "soh", features)
    grouped = {}
    for row in rul_rows:
        if row.cell_id != holdout:
            grouped.setdefault(row.cell_id, []).append(row)
    gprn = ensemble.train_gprn(
        {cid: (np.vstack([r.features.as_array() for r in rows]),
               np.array([r.rul for r in rows]))
         for cid, rows in grouped.items()},
        config.epochs)
    train_soh = [r for r in soh_rows if r.cell_id != holdout]
    soh_model = fit_svr(
        np.vstack([r.features.as_array() for r in train_soh]),
        np.array([r.soh for r in train_soh]))
    return gprn, soh_model


def _cmd_monitor(args) -> int:
    config = _resolve_config(args, dataset_dir=args.dataset,
                             output_dir=args.out, cell=args.cell, k=args.k)
    if config.cell is None:
        raise ValidationError("monitor needs --cell (or config key 'cell')")
    fleet, features = _load_labeled(config)
    by_id = {c.cell_id: c for c in fleet}
    if config.cell not in by_id:
        raise ValidationError(
            f"cell {config.cell!r} not in dataset ({sorted(by_id)})")
    gprn, soh_model = _train_for_holdout(fleet, features, config.cell,
                                         config)
    cell = by_id[config.cell]
    trace = simulate(cell, gprn, soh_model, config.strategy(),
                     features=features)
    kpis = compute_kpis(trace, cell)
    out = _out_dir(config)
    path = write_trace_csv(trace, out / f"monitor_trace_{cell.cell_id}.csv")
    write_manifest(out, "monitor", config,
                   dataset_fingerprint(config.dataset_dir), [path.name])
    print(f"{cell.cell_id}: status={trace.status} stop={trace.stop_cycle} "
          f"U={kpis.utilization:.4f} M={kpis.steps} "
          f"overcycled={kpis.overcycled} dN_eol={kpis.delta_n_eol:.6g} "
          f"dSoH_eol={kpis.delta_soh_eol:.6g}")
    return 0


def _cmd_sweep(args) -> int:
    k_values = tuple(float(k) for k in args.k_values.split(",")) \
        if args.k_values else None
    config = _resolve_config(args, dataset_dir=args.dataset,
                             output_dir=args.out, k_values=k_values)
    fleet, features = _load_labeled(config)
    result = sweep_k(fleet, config.k_values, config.strategy(k=0.0),
                     features=features)
    out = _out_dir(config)
    outputs = [write_sweep_csv(result.rows, out / "sweep_k.csv").name]
    for k in config.k_values:
        per_cell = [c for c in result.per_cell if c.k == k]
        outputs.append(write_kpi_csv(per_cell,
                                     out / f"kpi_{k:g}.csv").name)
    write_manifest(out, "sweep", config,
                   dataset_fingerprint(config.dataset_dir), outputs)
    for row in result.rows:
        print(f"k={row.k:g}: U={row.utilization:.4f} M={row.steps:.2f} "
              f"P_over={row.p_over:.4f}")
    return 0


def _cmd_selftest(args) -> int:
    results = run_selftest(n_cells=args.cells, seed=args.seed)
    for result in results:
        print(result.line())
    if all(r.passed for r in results):
        print(f"all {len(results)} checks passed")
        return 0
    return 1


# ---------------------------------------------------------------------------
# argument wiring

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icalife",
        description="Battery SoH/RUL estimation from diagnostic cycles")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        p.add_argument("--config", help="JSON config file")
        if dataset:
            p.add_argument("--dataset", help="dataset directory")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic fleet dataset")
    p.add_argument("--cells", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("features",
                       help="extract features and rank correlations")
    common(p)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("evaluate", help="benchmark regressors across splits")
    common(p)
    p.add_argument("--target", choices=TARGETS, default=None)
    p.add_argument("--models", help="comma-separated regressor kinds")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("monitor", help="replay monitoring on one cell")
    common(p)
    p.add_argument("--cell", help="held-out cell id")
    p.add_argument("--k", type=float, default=None,
                   help="margin multiplier")
    p.set_defaults(func=_cmd_monitor)

    p = sub.add_parser("sweep", help="sweep the margin multiplier")
    common(p)
    p.add_argument("--k-values", dest="k_values",
                   help="comma-separated k grid")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("selftest", help="run the dataset-free check suite")
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IcalifeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
