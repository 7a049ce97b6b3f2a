"""Cross-cell benchmark harness.

Enumerates every 2-cell holdout split of the fleet, fits a regressor on
the remaining cells, and reports train/test MAE, maximum test error and
range-normalized MAE per split and aggregated.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import RegressorSpec, fit_regressor
from .datamodel import LabeledSample
from .errors import FitError, IcalifeError, UndefinedMetricError, \
    ValidationError

logger = logging.getLogger(__name__)

TEST_CELLS_PER_SPLIT = 2

TARGETS = ("soh", "rul")


@dataclass(frozen=True)
class SplitPlan:
    """One train/test partition of the fleet by cell id."""

    train_cells: frozenset
    test_cells: frozenset

    def __post_init__(self):
        object.__setattr__(self, "train_cells", frozenset(self.train_cells))
        object.__setattr__(self, "test_cells", frozenset(self.test_cells))
        if not self.train_cells or not self.test_cells:
            raise ValidationError("both cell sets must be non-empty")
        if self.train_cells & self.test_cells:
            raise ValidationError("train and test cells overlap")

    @property
    def split_id(self) -> str:
        return "+".join(sorted(self.test_cells))


def enumerate_splits(cell_ids,
                     test_size: int = TEST_CELLS_PER_SPLIT) -> list[SplitPlan]:
    """All unordered ``test_size``-cell holdouts, in lexicographic order."""
    ids = list(cell_ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("cell ids must be distinct")
    if test_size < 1:
        raise ValidationError("test_size must be positive")
    if len(ids) < test_size + 1:
        raise ValidationError(
            f"need more than {test_size} cells, got {len(ids)}")
    ordered = sorted(ids)
    return [SplitPlan(train_cells=frozenset(ordered) - frozenset(pair),
                      test_cells=frozenset(pair))
            for pair in itertools.combinations(ordered, test_size)]


@dataclass(frozen=True)
class SplitMetrics:
    """Per-split scores; NaN metrics and a reason when the fit failed."""

    split_id: str
    n_train: int
    n_test: int
    mae_train: float
    mae_test: float
    max_error_test: float
    nmae_test: float
    error: str | None = None

    def __post_init__(self):
        if self.error is None:
            if not (0.0 <= self.mae_test
                    <= self.max_error_test * (1.0 + 1e-9) + 1e-30):
                raise ValidationError(
                    "mae_test must lie in [0, max_error_test]")

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate of all splits: mean MAEs, worst max error, failure count."""

    target: str
    model_kind: str
    splits: tuple
    mae_train: float
    mae_test: float
    max_error_test: float
    nmae_test: float
    n_failed: int


def nmae(predictions, truths) -> float:
    """Mean absolute error divided by the range of the truths."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if len(truths) < 2 or len(predictions) != len(truths):
        raise ValidationError("need two or more prediction/truth pairs")
    if not (np.all(np.isfinite(predictions)) and np.all(np.isfinite(truths))):
        raise ValidationError("predictions and truths must be finite")
    span = float(truths.max() - truths.min())
    if span == 0.0:
        raise UndefinedMetricError("truth range is zero")
    return float(np.mean(np.abs(predictions - truths))) / span


def _rows(samples, cells):
    picked = [s for s in samples if s.cell_id in cells]
    x = np.vstack([s.features.as_array() for s in picked])
    return picked, x


def _labels(picked, target):
    if target == "soh":
        return np.array([s.soh for s in picked])
    return np.array([s.rul for s in picked])


def evaluate(spec: RegressorSpec, samples: list[LabeledSample],
             target: str) -> MetricsReport:
    """Score ``spec`` over every 2-cell holdout split of ``samples``.

    Each split fits on the train cells' rows only and predicts both sides;
    a split whose fit or scoring raises is marked failed and excluded from
    the aggregates, which are the mean MAE / NMAE over succeeding splits
    and the maximum of their per-split maximum errors.
    """
    if target not in TARGETS:
        raise ValidationError(f"unknown target {target!r}")
    if not samples:
        raise ValidationError("no samples to evaluate")
    cells = sorted({s.cell_id for s in samples})
    plans = enumerate_splits(cells)
    per_split = []
    for plan in plans:
        train, x_train = _rows(samples, plan.train_cells)
        test, x_test = _rows(samples, plan.test_cells)
        y_train = _labels(train, target)
        y_test = _labels(test, target)
        try:
            model = fit_regressor(spec, x_train, y_train,
                                  cell_ids=[s.cell_id for s in train])
            pred_train = model.predict(x_train)
            pred_test = model.predict(x_test)
            errors = np.abs(pred_test - y_test)
            metrics = SplitMetrics(
                split_id=plan.split_id,
                n_train=len(train),
                n_test=len(test),
                mae_train=float(np.mean(np.abs(pred_train - y_train))),
                mae_test=float(np.mean(errors)),
                max_error_test=float(errors.max()),
                nmae_test=nmae(pred_test, y_test),
            )
        except IcalifeError as exc:
            logger.warning("split %s failed: %s", plan.split_id, exc)
            metrics = SplitMetrics(split_id=plan.split_id,
                                   n_train=len(train), n_test=len(test),
                                   mae_train=math.nan, mae_test=math.nan,
                                   max_error_test=math.nan,
                                   nmae_test=math.nan, error=str(exc))
        per_split.append(metrics)
    good = [m for m in per_split if m.ok]
    if not good:
        raise FitError(f"all {len(per_split)} splits failed; "
                       f"first: {per_split[0].error}")
    return MetricsReport(
        target=target,
        model_kind=spec.kind,
        splits=tuple(per_split),
        mae_train=float(np.mean([m.mae_train for m in good])),
        mae_test=float(np.mean([m.mae_test for m in good])),
        max_error_test=float(max(m.max_error_test for m in good)),
        nmae_test=float(np.mean([m.nmae_test for m in good])),
        n_failed=len(per_split) - len(good),
    )


# ---------------------------------------------------------------------------
# CSV emission

RESULT_COLUMNS = ("split_id", "n_train", "n_test", "mae_train", "mae_test",
                  "max_error_test", "nmae_test", "status", "error")

SUMMARY_COLUMNS = ("model", "target", "n_splits", "n_failed", "mae_train",
                   "mae_test", "max_error_test", "nmae_test")


def _cell(value: float) -> str:
    # repr round-trips doubles exactly, keeping reruns byte-identical
    return repr(float(value))


def write_results_csv(report: MetricsReport, path) -> Path:
    """Per-split rows, one line per holdout pair."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for m in report.splits:
            writer.writerow([
                m.split_id, m.n_train, m.n_test, _cell(m.mae_train),
                _cell(m.mae_test), _cell(m.max_error_test),
                _cell(m.nmae_test), "ok" if m.ok else "failed",
                m.error or "",
            ])
    return path


def write_summary_csv(reports, path) -> Path:
    """One aggregate row per report, benchmark-table shaped."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in reports:
            writer.writerow([
                r.model_kind, r.target, len(r.splits), r.n_failed,
                _cell(r.mae_train), _cell(r.mae_test),
                _cell(r.max_error_test), _cell(r.nmae_test),
            ])
    return path
