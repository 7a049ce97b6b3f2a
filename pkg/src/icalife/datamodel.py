"""Canonical dataset model: cell histories, SoH/RUL labels, synthetic fleet.

On-disk format (UTF-8, LF, '.' decimal, header row required):

* ``cells.csv`` with columns ``cell_id,rated_capacity_mah``
* one ``diagnostics_<cell_id>.csv`` per cell with columns
  ``cycle_number,time_s,voltage_v,current_a,charge_mah,temperature_c``,
  rows grouped by cycle_number and time-sorted within a cycle. Only the
  charge portion of each diagnostic cycle is required.

All records are immutable after construction and safe to share across
threads. Numeric values are serialized with 9 significant digits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Mapping

import numpy as np

from .errors import (
    DatasetNotFoundError,
    EolUndeterminedError,
    ParseError,
    ValidationError,
)

if TYPE_CHECKING:  # only for annotations; avoids a runtime import cycle
    from .ica import FeatureVector

VOLTAGE_MIN_V = 2.0
VOLTAGE_MAX_V = 4.5
DEFAULT_RATED_CAPACITY_MAH = 740.0
SOH_EOL_DEFAULT = 0.8
RUL_EXTENSION_CYCLES = 400.0

DIAG_COLUMNS = ("cycle_number", "time_s", "voltage_v", "current_a",
                "charge_mah", "temperature_c")


@dataclass(frozen=True)
class Sample:
    """One measurement record of a diagnostic charge cycle."""

    time_s: float
    voltage_v: float
    current_a: float
    charge_mah: float
    temperature_c: float


@dataclass(frozen=True)
class DiagnosticCycle:
    """All samples of one instrumented charge cycle, stored as column arrays."""

    cell_id: str
    cycle_number: int
    time_s: np.ndarray
    voltage_v: np.ndarray
    current_a: np.ndarray
    charge_mah: np.ndarray
    temperature_c: np.ndarray
    end_of_charge_capacity_mah: float

    def __post_init__(self):
        n = len(self.time_s)
        if n == 0:
            raise ValidationError(
                f"{self.cell_id} cycle {self.cycle_number}: no samples")
        for name in ("voltage_v", "current_a", "charge_mah", "temperature_c"):
            if len(getattr(self, name)) != n:
                raise ValidationError(
                    f"{self.cell_id} cycle {self.cycle_number}: "
                    f"column {name} length mismatch")
        if np.any(np.diff(self.time_s) <= 0):
            raise ValidationError(
                f"{self.cell_id} cycle {self.cycle_number}: "
                "time_s not strictly increasing")
        if np.any((self.voltage_v < VOLTAGE_MIN_V) |
                  (self.voltage_v > VOLTAGE_MAX_V)):
            raise ValidationError(
                f"{self.cell_id} cycle {self.cycle_number}: voltage outside "
                f"[{VOLTAGE_MIN_V}, {VOLTAGE_MAX_V}] V")
        if not self.end_of_charge_capacity_mah > 0:
            raise ValidationError(
                f"{self.cell_id} cycle {self.cycle_number}: "
                "end-of-charge capacity must be positive")

    @property
    def n_samples(self) -> int:
        return len(self.time_s)

    def samples(self) -> Iterator[Sample]:
        for i in range(self.n_samples):
            yield Sample(self.time_s[i], self.voltage_v[i], self.current_a[i],
                         self.charge_mah[i], self.temperature_c[i])


@dataclass(frozen=True)
class CellHistory:
    """All diagnostic cycles of one cell plus derived aging labels."""

    cell_id: str
    rated_capacity_mah: float
    diagnostics: tuple[DiagnosticCycle, ...]
    soh_by_diag: np.ndarray | None = None
    n_eol: float | None = None
    rul_by_diag: np.ndarray | None = None

    def __post_init__(self):
        numbers = [d.cycle_number for d in self.diagnostics]
        if sorted(numbers) != numbers or len(set(numbers)) != len(numbers):
            raise ValidationError(
                f"{self.cell_id}: diagnostics must be sorted by unique "
                "cycle_number")

    @property
    def cycle_numbers(self) -> np.ndarray:
        return np.array([d.cycle_number for d in self.diagnostics], dtype=float)


@dataclass(frozen=True)
class LabeledSample:
    """One regression row: feature vector plus SoH and RUL labels."""

    cell_id: str
    cycle_number: int
    features: "FeatureVector"
    soh: float
    rul: float


def _end_of_charge(current_a: np.ndarray, charge_mah: np.ndarray,
                   context: str) -> float:
    charging = np.nonzero(current_a > 0)[0]
    if len(charging) == 0:
        raise ValidationError(f"{context}: no charging samples (current <= 0)")
    return float(charge_mah[charging[-1]])


def _make_cycle(cell_id: str, cycle_number: int,
                columns: dict[str, list[float]]) -> DiagnosticCycle:
    arrays = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    eoc = _end_of_charge(arrays["current_a"], arrays["charge_mah"],
                         f"{cell_id} cycle {cycle_number}")
    return DiagnosticCycle(cell_id=cell_id, cycle_number=cycle_number,
                           end_of_charge_capacity_mah=eoc, **arrays)


def load_fleet(dataset_dir: str | Path) -> list[CellHistory]:
    """Load every cell listed in ``cells.csv`` of a canonical dataset dir."""
    dataset_dir = Path(dataset_dir)
    cells_path = dataset_dir / "cells.csv"
    if not cells_path.is_file():
        raise DatasetNotFoundError(f"missing {cells_path}")

    fleet: list[CellHistory] = []
    with open(cells_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_id", "rated_capacity_mah"]:
            raise ParseError(cells_path, 1, f"unexpected header {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(cells_path, line_no, f"expected 2 columns, got {len(row)}")
            try:
                rated = float(row[1])
            except ValueError as exc:
                raise ParseError(cells_path, line_no, str(exc)) from None
            fleet.append(_load_cell(dataset_dir, row[0], rated))
    return fleet


def _load_cell(dataset_dir: Path, cell_id: str, rated: float) -> CellHistory:
    path = dataset_dir / f"diagnostics_{cell_id}.csv"
    if not path.is_file():
        raise DatasetNotFoundError(f"missing {path}")

    cycles: list[DiagnosticCycle] = []
    seen: set[int] = set()
    current_number: int | None = None
    columns: dict[str, list[float]] = {}

    def flush():
        if current_number is not None:
            cycles.append(_make_cycle(cell_id, current_number, columns))

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(DIAG_COLUMNS):
            raise ParseError(path, 1, f"unexpected header {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(path, line_no, f"expected 6 columns, got {len(row)}")
            try:
                number = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if number != current_number:
                if number in seen:
                    raise ParseError(path, line_no,
                                     f"cycle {number} appears in two groups")
                flush()
                seen.add(number)
                current_number = number
                columns = {k: [] for k in DIAG_COLUMNS[1:]}
            for key, value in zip(DIAG_COLUMNS[1:], values):
                columns[key].append(value)
    flush()
    cycles.sort(key=lambda c: c.cycle_number)
    return CellHistory(cell_id=cell_id, rated_capacity_mah=rated,
                       diagnostics=tuple(cycles))


def _fmt(value: float) -> str:
    """Serialize with 9 significant digits."""
    return format(float(value), ".9g")


def write_fleet(fleet: list[CellHistory], out_dir: str | Path) -> list[Path]:
    """Write a fleet in the canonical format; returns the files written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    cells_path = out_dir / "cells.csv"
    with open(cells_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "rated_capacity_mah"])
        for cell in fleet:
            writer.writerow([cell.cell_id, _fmt(cell.rated_capacity_mah)])
    written.append(cells_path)

    for cell in fleet:
        path = out_dir / f"diagnostics_{cell.cell_id}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAG_COLUMNS)
            for diag in cell.diagnostics:
                for i in range(diag.n_samples):
                    writer.writerow([
                        diag.cycle_number,
                        _fmt(diag.time_s[i]),
                        _fmt(diag.voltage_v[i]),
                        _fmt(diag.current_a[i]),
                        _fmt(diag.charge_mah[i]),
                        _fmt(diag.temperature_c[i]),
                    ])
        written.append(path)
    return written


def compute_soh_labels(history: CellHistory) -> CellHistory:
    """SoH per diagnostic: end-of-charge capacity over rated capacity."""
    if not history.rated_capacity_mah > 0:
        raise ValidationError(f"{history.cell_id}: rated capacity must be > 0")
    soh = np.array([d.end_of_charge_capacity_mah / history.rated_capacity_mah
                    for d in history.diagnostics])
    return replace(history, soh_by_diag=soh)


def compute_eol_and_rul(history: CellHistory,
                        soh_eol: float = SOH_EOL_DEFAULT) -> CellHistory:
    """Locate the first downward SoH crossing of ``soh_eol`` and label RUL.

    The end-of-life cycle count is linearly interpolated between the two
    diagnostics bracketing the crossing; a diagnostic sitting exactly on the
    threshold defines it directly. RUL may become negative past EOL.
    """
    if history.soh_by_diag is None:
        raise ValidationError(f"{history.cell_id}: SoH labels not computed")
    soh = history.soh_by_diag
    cycles = history.cycle_numbers
    n_eol = None
    for i in range(len(soh)):
        if soh[i] == soh_eol:
            n_eol = float(cycles[i])
            break
        if i > 0 and soh[i - 1] > soh_eol > soh[i]:
            frac = (soh[i - 1] - soh_eol) / (soh[i - 1] - soh[i])
            n_eol = float(cycles[i - 1] + frac * (cycles[i] - cycles[i - 1]))
            break
    if n_eol is None:
        raise EolUndeterminedError(
            f"{history.cell_id}: SoH never crosses {soh_eol}")
    rul = n_eol - cycles
    return replace(history, n_eol=n_eol, rul_by_diag=rul)


def label_fleet(fleet: list[CellHistory],
                soh_eol: float = SOH_EOL_DEFAULT) -> list[CellHistory]:
    """Convenience: SoH, EOL and RUL labels for every cell."""
    return [compute_eol_and_rul(compute_soh_labels(cell), soh_eol)
            for cell in fleet]


def build_regression_dataset(
    fleet: list[CellHistory],
    target: str,
    features: Mapping[tuple[str, int], "FeatureVector"],
) -> list[LabeledSample]:
    """Assemble regression rows for the given target.

    ``soh`` keeps diagnostics with SoH >= 0.8; ``rul`` keeps diagnostics up
    to EOL + 400 cycles. ``features`` maps (cell_id, cycle_number) to the
    extracted feature vector; diagnostics without an entry are skipped.
    """
    if target not in ("soh", "rul"):
        raise ValidationError(f"unknown target {target!r}")
    rows: list[LabeledSample] = []
    for cell in fleet:
        if cell.soh_by_diag is None or cell.rul_by_diag is None:
            raise ValidationError(f"{cell.cell_id}: labels not computed")
        for i, diag in enumerate(cell.diagnostics):
            key = (cell.cell_id, diag.cycle_number)
            if key not in features:
                continue
            soh = float(cell.soh_by_diag[i])
            rul = float(cell.rul_by_diag[i])
            if target == "soh" and soh < SOH_EOL_DEFAULT:
                continue
            if target == "rul" and diag.cycle_number > cell.n_eol + RUL_EXTENSION_CYCLES:
                continue
            rows.append(LabeledSample(cell_id=cell.cell_id,
                                      cycle_number=diag.cycle_number,
                                      features=features[key],
                                      soh=soh, rul=rul))
    return rows


# ---------------------------------------------------------------------------
# Synthetic fleet
# ---------------------------------------------------------------------------
# Test fixture standing in for the measured fleet: stretched-exponential
# capacity fade, a monotone two-plateau charge-voltage template whose plateau
# sharpness degrades with SoH, 1 mV additive voltage noise. All emitted
# values are quantized so the 9-significant-digit serialization is lossless.

_V_MIN = 2.90
_V_TOP = 4.30
_CHARGE_RATE_A = 0.74          # 1C for the 740 mAh reference cell
_VOLTAGE_NOISE_V = 1e-3
_SOH_NOISE = 5e-4
_DIAG_SPACING = 100


def _synthetic_params(n_cells: int, seed: int) -> list[dict]:
    rng = np.random.default_rng(seed)
    if n_cells == 1:
        targets = np.array([4200.0])
    else:
        targets = np.linspace(3000.0, 5400.0, n_cells)
    targets = targets + rng.uniform(-100.0, 100.0, n_cells)
    params = []
    for i in range(n_cells):
        beta = rng.uniform(0.95, 1.35)
        tau = targets[i] / math.log(1.0 / 0.8) ** (1.0 / beta)
        params.append({
            "cell_id": f"syn{i + 1:02d}",
            "beta": beta,
            "tau": tau,
            "target_eol": float(targets[i]),
            "mu1": 3.575 + rng.uniform(-0.008, 0.008),
            "mu2": 3.830 + rng.uniform(-0.010, 0.010),
            "s1": 0.028 * (1.0 + rng.uniform(-0.05, 0.05)),
            "s2": 0.045 * (1.0 + rng.uniform(-0.05, 0.05)),
            "w1": 0.20 * (1.0 + rng.uniform(-0.03, 0.03)),
            "w2": 0.40 * (1.0 + rng.uniform(-0.03, 0.03)),
            "w3": 0.10 * (1.0 + rng.uniform(-0.03, 0.03)),
            "noise_seed": int(rng.integers(0, 2**31 - 1)),
        })
    return params


def _template_charge_curve(p: dict, soh: float,
                           q_total_mah: float) -> tuple[np.ndarray, np.ndarray]:
    """Charge-vs-voltage template on a dense grid, normalized to q_total."""
    fade = 1.0 - soh
    mu1 = p["mu1"] + 0.12 * fade
    mu2 = p["mu2"] + 0.25 * fade
    s1 = p["s1"] * (1.0 + 1.8 * fade)
    s2 = p["s2"] * (1.0 + 1.6 * fade)
    w1, w2, w3 = p["w1"], p["w2"], p["w3"]
    w_lin = 1.0 - w1 - w2 - w3

    v = np.linspace(_V_MIN, _V_TOP, 4000)

    def logistic(z):
        return 1.0 / (1.0 + np.exp(-z))

    # a third, age-independent plateau slows the voltage rise above the CV
    # threshold: the trace keeps charging past 4.195 V, so the constant-
    # current cut later discards the top-of-trace filter transient
    g = (w1 * logistic((v - mu1) / s1)
         + w2 * logistic((v - mu2) / s2)
         + w3 * logistic((v - 4.25) / 0.04)
         + w_lin * (v - _V_MIN) / (_V_TOP - _V_MIN))
    q = q_total_mah * (g - g[0]) / (g[-1] - g[0])
    return v, q


def generate_synthetic_fleet(n_cells: int, seed: int) -> list[CellHistory]:
    """Deterministic synthetic fleet with per-cell fade rates.

    Each cell gets diagnostics every 100 cycles from cycle 0 until well past
    its EOL crossing, each holding a 1 Hz constant-current charge trace whose
    IC peak magnitudes decay monotonically with the programmed fade.
    """
    if n_cells < 1:
        raise ValidationError("n_cells must be >= 1")
    fleet = []
    for p in _synthetic_params(n_cells, seed):
        noise_rng = np.random.default_rng(p["noise_seed"])
        last_cycle = int(math.ceil((p["target_eol"] + 480.0) / _DIAG_SPACING))
        diagnostics = []
        for k in range(last_cycle + 1):
            cycle_number = k * _DIAG_SPACING
            soh_prog = math.exp(-((cycle_number / p["tau"]) ** p["beta"]))
            soh_meas = soh_prog * (1.0 + _SOH_NOISE * noise_rng.standard_normal())
            q_end = round(DEFAULT_RATED_CAPACITY_MAH * soh_meas, 4)

            rate_mah_s = _CHARGE_RATE_A * 1000.0 / 3600.0
            t_end = q_end / rate_mah_s
            t = np.arange(0.0, math.floor(t_end) + 1.0)
            if t_end - t[-1] < 1e-3:
                t = t[:-1]
            t = np.append(t, round(t_end, 5))
            q = np.round(rate_mah_s * t[:-1], 4)
            q = np.append(q, q_end)

            v_grid, q_grid = _template_charge_curve(p, soh_prog, q_end)
            v = np.interp(q, q_grid, v_grid)
            v = v + _VOLTAGE_NOISE_V * noise_rng.standard_normal(len(v))
            v = np.round(np.clip(v, _V_MIN - 0.05, _V_TOP + 0.05), 6)

            diagnostics.append(DiagnosticCycle(
                cell_id=p["cell_id"],
                cycle_number=cycle_number,
                time_s=t,
                voltage_v=v,
                current_a=np.full(len(t), _CHARGE_RATE_A),
                charge_mah=q,
                temperature_c=np.full(len(t), 40.0),
                end_of_charge_capacity_mah=q_end,
            ))
        fleet.append(CellHistory(cell_id=p["cell_id"],
                                 rated_capacity_mah=DEFAULT_RATED_CAPACITY_MAH,
                                 diagnostics=tuple(diagnostics)))
    return fleet


def synthetic_truth(n_cells: int, seed: int) -> dict[str, dict]:
    """Ground-truth fade recorded by the generator, keyed by cell id.

    ``true_soh`` holds the measured (noise-included, quantized) SoH value per
    diagnostic, i.e. exactly what the labeling pipeline should recover.
    """
    truth = {}
    params = _synthetic_params(n_cells, seed)
    for cell, p in zip(generate_synthetic_fleet(n_cells, seed), params):
        soh = [d.end_of_charge_capacity_mah / cell.rated_capacity_mah
               for d in cell.diagnostics]
        truth[cell.cell_id] = {
            "cycles": cell.cycle_numbers,
            "true_soh": np.array(soh),
            "target_eol": p["target_eol"],
            "beta": p["beta"],
            "tau": p["tau"],
        }
    return truth
