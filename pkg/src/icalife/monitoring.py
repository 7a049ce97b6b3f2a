"""Iterative RUL-guided monitoring replayed against recorded trajectories.

The strategy measures a cell, subtracts a k-sigma margin from the RUL
estimate, operates for that many cycles, and repeats until the margin or
the SoH estimate says stop.  Replay snaps each requested measurement to
the nearest recorded diagnostic.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ensemble
from .baselines import fit_svr
from .datamodel import (SOH_EOL_DEFAULT, CellHistory,
                        build_regression_dataset)
from .errors import ValidationError
from .evaluation import enumerate_splits
from .ica import extract_fleet_features

logger = logging.getLogger(__name__)

N_MIN_DEFAULT = 40
ITERATION_CAP = 50

TRACE_STATUSES = ("stopped", "data_exhausted", "iteration_cap")


@dataclass(frozen=True)
class StrategyConfig:
    """Margin multiplier, stop thresholds and the ensemble's epoch budget."""

    k: float
    n_min: int = N_MIN_DEFAULT
    soh_eol: float = SOH_EOL_DEFAULT
    epochs: int = 100

    def __post_init__(self):
        if not np.isfinite(self.k) or self.k < 0:
            raise ValidationError("k must be a non-negative finite margin")
        if self.n_min < 1:
            raise ValidationError("n_min must be at least 1 cycle")
        if not 0.0 < self.soh_eol < 1.0:
            raise ValidationError("soh_eol must lie in (0, 1)")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")


@dataclass(frozen=True)
class MonitoringEvent:
    """One measurement: RUL estimate, its margin, SoH estimate, decision."""

    measured_cycle: int
    rul_mean: float
    rul_sigma: float
    rul_cons: float
    soh_est: float
    decision: str

    def __post_init__(self):
        if self.decision not in ("operate", "stop"):
            raise ValidationError(f"unknown decision {self.decision!r}")
        if not np.isfinite(self.rul_sigma) or self.rul_sigma < 0:
            raise ValidationError("rul_sigma must be finite and non-negative")


@dataclass(frozen=True)
class MonitoringTrace:
    """Every event of one replay plus how and where it ended."""

    cell_id: str
    config: StrategyConfig
    events: tuple
    status: str
    stop_cycle: int

    def __post_init__(self):
        if self.status not in TRACE_STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        if not self.events:
            raise ValidationError("trace must contain at least one event")

    @property
    def steps(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class KPIReport:
    """Cycle-life utilization and safety margins of one replay."""

    utilization: float
    steps: int
    overcycled: bool
    delta_n_eol: float
    delta_soh_eol: float

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("a replay has at least one measurement")
        if not 0.0 <= self.utilization:
            raise ValidationError("utilization must be non-negative")


def simulate_from_estimates(cell: CellHistory, rul_means, rul_sigmas,
                            soh_estimates,
                            cfg: StrategyConfig) -> MonitoringTrace:
    """Replay the strategy over per-diagnostic estimate arrays.

    The arrays give the model outputs at every recorded diagnostic of the
    cell, in order.  Measurements snap to the nearest diagnostic (ties
    toward the earlier one); requesting a cycle past the last diagnostic
    ends the trace as data-exhausted, stopping there.
    """
    cycles = cell.cycle_numbers
    if len(cycles) < 2:
        raise ValidationError(f"{cell.cell_id}: need at least 2 diagnostics")
    rul_means = np.asarray(rul_means, dtype=float)
    rul_sigmas = np.asarray(rul_sigmas, dtype=float)
    soh_estimates = np.asarray(soh_estimates, dtype=float)
    if not (rul_means.shape == rul_sigmas.shape == soh_estimates.shape
            == cycles.shape):
        raise ValidationError("one estimate per recorded diagnostic required")

    events = []
    status = "iteration_cap"
    target = 0.0
    for _ in range(ITERATION_CAP):
        if target > cycles[-1]:
            status = "data_exhausted"
            break
        idx = int(np.argmin(np.abs(cycles - target)))
        cons = rul_means[idx] - cfg.k * rul_sigmas[idx]
        stop = cons <= cfg.n_min or soh_estimates[idx] <= cfg.soh_eol
        events.append(MonitoringEvent(
            measured_cycle=int(cycles[idx]),
            rul_mean=float(rul_means[idx]),
            rul_sigma=float(rul_sigmas[idx]),
            rul_cons=float(cons),
            soh_est=float(soh_estimates[idx]),
            decision="stop" if stop else "operate"))
        if stop:
            status = "stopped"
            break
        target = cycles[idx] + max(round(cons), 1)
    stop_cycle = int(cycles[-1]) if status == "data_exhausted" \
        else events[-1].measured_cycle
    if status == "iteration_cap":
        logger.warning("%s: iteration cap hit at cycle %d", cell.cell_id,
                       stop_cycle)
    return MonitoringTrace(cell_id=cell.cell_id, config=cfg,
                           events=tuple(events), status=status,
                           stop_cycle=stop_cycle)


def simulate(cell: CellHistory, gprn: ensemble.GPRnModel, soh_model,
             cfg: StrategyConfig, features=None) -> MonitoringTrace:
    """Replay the strategy with a RUL ensemble and an SoH regressor.

    ``features`` may carry precomputed vectors keyed by (cell_id,
    cycle_number); otherwise they are extracted here.  The monitored cell
    must not be one of the ensemble's training cells.
    """
    if cell.cell_id in gprn.cell_ids:
        raise ValidationError(
            f"{cell.cell_id} is a training cell of the ensemble")
    if len(cell.diagnostics) < 2:
        raise ValidationError(f"{cell.cell_id}: need at least 2 diagnostics")
    if features is None:
        features = extract_fleet_features([cell])
    try:
        x = np.vstack([features[(cell.cell_id, d.cycle_number)].as_array()
                       for d in cell.diagnostics])
    except KeyError as exc:
        raise ValidationError(f"missing features for diagnostic {exc}")
    rul_means, rul_vars = ensemble.mixture_batch(gprn, x)
    return simulate_from_estimates(cell, rul_means, np.sqrt(rul_vars),
                                   soh_model.predict(x), cfg)


def compute_kpis(trace: MonitoringTrace, cell: CellHistory) -> KPIReport:
    """Utilization, step count and end-of-life margins for one replay."""
    if cell.n_eol is None or cell.soh_by_diag is None:
        raise ValidationError(f"{cell.cell_id}: aging labels not computed")
    stop = float(trace.stop_cycle)
    soh_at_stop = float(np.interp(stop, cell.cycle_numbers,
                                  cell.soh_by_diag))
    return KPIReport(
        utilization=stop / cell.n_eol,
        steps=trace.steps,
        overcycled=stop > cell.n_eol,
        delta_n_eol=cell.n_eol - stop,
        delta_soh_eol=soh_at_stop - trace.config.soh_eol,
    )


# ---------------------------------------------------------------------------
# hyperparameter sweep

@dataclass(frozen=True)
class CellKpis:
    """KPI means for one cell over the splits that hold it out."""

    cell_id: str
    k: float
    utilization: float
    steps: float
    p_over: float
    delta_n_eol: float
    delta_soh_eol: float


@dataclass(frozen=True)
class SweepRow:
    """Fleet-mean KPIs at one margin multiplier."""

    k: float
    utilization: float
    steps: float
    p_over: float
    delta_n_eol: float
    delta_soh_eol: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    per_cell: tuple


def _cell_rows(samples, cells, target):
    picked = [s for s in samples if s.cell_id in cells]
    x = np.vstack([s.features.as_array() for s in picked])
    y = np.array([getattr(s, target) for s in picked])
    return picked, x, y


def sweep_k(fleet, k_values, cfg: StrategyConfig,
            features=None) -> SweepResult:
    """Replay every holdout cell under each margin multiplier.

    Models are trained once per 2-cell holdout split (RUL ensemble on the
    train cells, SVR SoH estimator on their SoH rows) and reused across
    the k grid; estimates per diagnostic likewise.  Each cell's KPIs are
    averaged over the splits that hold it out, and each sweep row over
    all runs at that k.
    """
    k_values = [float(k) for k in k_values]
    if not k_values:
        raise ValidationError("need at least one k value")
    by_id = {cell.cell_id: cell for cell in fleet}
    if features is None:
        features = extract_fleet_features(fleet)
    rul_rows = build_regression_dataset(fleet, "rul", features)
    soh_rows = build_regression_dataset(fleet, "soh", features)
    plans = enumerate_splits(sorted(by_id))

    runs = {k: {cid: [] for cid in by_id} for k in k_values}
    for plan in plans:
        picked, _, _ = _cell_rows(rul_rows, plan.train_cells, "rul")
        per_cell_data = {}
        for row in picked:
            per_cell_data.setdefault(row.cell_id, []).append(row)
        grouped = {cid: (np.vstack([r.features.as_array() for r in rows]),
                         np.array([r.rul for r in rows]))
                   for cid, rows in per_cell_data.items()}
        gprn = ensemble.train_gprn(grouped, cfg.epochs)
        _, soh_x, soh_y = _cell_rows(soh_rows, plan.train_cells, "soh")
        soh_model = fit_svr(soh_x, soh_y)
        for cell_id in sorted(plan.test_cells):
            cell = by_id[cell_id]
            x = np.vstack([features[(cell_id, d.cycle_number)].as_array()
                           for d in cell.diagnostics])
            rul_means, rul_vars = ensemble.mixture_batch(gprn, x)
            rul_sigmas = np.sqrt(rul_vars)
            soh_est = soh_model.predict(x)
            for k in k_values:
                trace = simulate_from_estimates(
                    cell, rul_means, rul_sigmas, soh_est, replace(cfg, k=k))
                runs[k][cell_id].append(compute_kpis(trace, cell))

    def _mean(reports, field):
        return float(np.mean([float(getattr(r, field)) for r in reports]))

    per_cell = []
    rows = []
    for k in k_values:
        for cell_id in sorted(by_id):
            reports = runs[k][cell_id]
            per_cell.append(CellKpis(
                cell_id=cell_id, k=k,
                utilization=_mean(reports, "utilization"),
                steps=_mean(reports, "steps"),
                p_over=_mean(reports, "overcycled"),
                delta_n_eol=_mean(reports, "delta_n_eol"),
                delta_soh_eol=_mean(reports, "delta_soh_eol")))
        pooled = [r for cid in sorted(by_id) for r in runs[k][cid]]
        rows.append(SweepRow(
            k=k,
            utilization=_mean(pooled, "utilization"),
            steps=_mean(pooled, "steps"),
            p_over=_mean(pooled, "overcycled"),
            delta_n_eol=_mean(pooled, "delta_n_eol"),
            delta_soh_eol=_mean(pooled, "delta_soh_eol")))
    return SweepResult(rows=tuple(rows), per_cell=tuple(per_cell))


# ---------------------------------------------------------------------------
# CSV emission

TRACE_COLUMNS = ("measured_cycle", "rul_mean", "rul_sigma", "rul_cons",
                 "soh_est", "decision")

KPI_COLUMNS = ("cell_id", "U", "M", "P_over", "dN_eol", "dSoH_eol")

SWEEP_COLUMNS = ("k", "U", "M", "P_over", "dN_eol", "dSoH_eol")


def _num(value) -> str:
    return repr(float(value))


def write_trace_csv(trace: MonitoringTrace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for e in trace.events:
            writer.writerow([e.measured_cycle, _num(e.rul_mean),
                             _num(e.rul_sigma), _num(e.rul_cons),
                             _num(e.soh_est), e.decision])
    return path


def write_kpi_csv(per_cell, path) -> Path:
    """Per-cell KPI means for a single k."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KPI_COLUMNS)
        for c in per_cell:
            writer.writerow([c.cell_id, _num(c.utilization), _num(c.steps),
                             _num(c.p_over), _num(c.delta_n_eol),
                             _num(c.delta_soh_eol)])
    return path


def write_sweep_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([_num(r.k), _num(r.utilization), _num(r.steps),
                             _num(r.p_over), _num(r.delta_n_eol),
                             _num(r.delta_soh_eol)])
    return path
