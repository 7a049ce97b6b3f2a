"""Incremental-capacity curves and aging features from CC charge segments.

Pipeline: isolate the constant-current part of a diagnostic charge cycle,
low-pass the voltage trace (zero-phase Butterworth), form the per-step
incremental capacity I*dt/dV on a merged voltage grid, smooth it, and read
off five scalar features:

* F1  global IC peak height [mAh/V]
* F2  voltage at the global peak [V]
* F3  IC maximum inside the (3.5, 3.65) V window [mAh/V]
* F4  steepest positive IC slope inside the window [(mAh/V)/V]
* F5  voltage at that slope [V]

Feature quality is checked with Spearman rank correlation against SoH.
All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np
from scipy import signal as _signal

from .errors import (
    DegenerateCurveError,
    FeatureWindowError,
    NoPositiveSlopeError,
    NumericalError,
    UndefinedCorrelationError,
    ValidationError,
)

if TYPE_CHECKING:
    from .datamodel import CellHistory, DiagnosticCycle

WINDOW_LOW_V = 3.5
WINDOW_HIGH_V = 3.65
CC_VOLTAGE_CEILING_V = 4.2 - 0.005
CC_CURRENT_TOLERANCE = 0.02
MIN_STEP_V = 1e-5
DEFAULT_SMOOTH_WINDOW = 25
_COULOMB_PER_MAH = 3.6


@dataclass(frozen=True)
class FilterSpec:
    """Discrete low-pass filter: order, band edge, and its coefficients."""

    order: int
    cutoff_hz: float
    sample_rate_hz: float
    b: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ICCurve:
    """Smoothed incremental capacity over a strictly increasing voltage grid."""

    voltage_v: np.ndarray
    ic_mah_per_v: np.ndarray

    def __post_init__(self):
        if len(self.voltage_v) != len(self.ic_mah_per_v):
            raise ValidationError("curve arrays must have equal length")
        if np.any(np.diff(self.voltage_v) <= 0):
            raise ValidationError("curve voltage must be strictly increasing")
        if not np.all(np.isfinite(self.ic_mah_per_v)):
            raise ValidationError("curve contains non-finite IC values")

    @property
    def n_points(self) -> int:
        return len(self.voltage_v)


@dataclass(frozen=True)
class FeatureVector:
    f1_ic_peak: float
    f2_v_at_peak: float
    f3_ic_max_window: float
    f4_slope_max_window: float
    f5_v_at_slope_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.f1_ic_peak, self.f2_v_at_peak,
                         self.f3_ic_max_window, self.f4_slope_max_window,
                         self.f5_v_at_slope_max])

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "f5")


def design_lowpass(order: int, cutoff_hz: float,
                   sample_rate_hz: float) -> FilterSpec:
    """Butterworth low-pass (analog prototype, pre-warped bilinear transform)."""
    if order < 1:
        raise ValidationError("filter order must be >= 1")
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValidationError(
            f"cutoff {cutoff_hz} Hz outside (0, {sample_rate_hz / 2}) Hz")
    b, a = _signal.butter(order, cutoff_hz, btype="low", fs=sample_rate_hz)
    b = b * (a.sum() / b.sum())  # pin the DC gain to exactly 1
    if np.any(np.abs(np.roots(a)) >= 1.0):
        raise NumericalError("designed filter is unstable")
    return FilterSpec(order=order, cutoff_hz=cutoff_hz,
                      sample_rate_hz=sample_rate_hz, b=b, a=a)


def default_filter() -> FilterSpec:
    """The 4th-order, 0.01 Hz design used for 1 Hz diagnostic traces."""
    return design_lowpass(4, 0.01, 1.0)


def zero_phase_filter(spec: FilterSpec, x: np.ndarray) -> np.ndarray:
    """Forward-backward filtering with odd-reflection edge padding.

    Running the filter once in each direction cancels its phase response.
    Before the passes the padded signal is detrended by the line through
    its endpoints: startup transients then scale with the local slope
    rather than the signal's absolute level, and both passes see exact
    mirror-image conditions, so filtering commutes with reversal.
    """
    x = np.asarray(x, dtype=float)
    pad = 3 * spec.order
    if len(x) <= pad:
        raise ValidationError(
            f"signal length {len(x)} too short for padding {pad}")
    ext = np.concatenate([2 * x[0] - x[pad:0:-1], x,
                          2 * x[-1] - x[-2:-pad - 2:-1]])
    line = np.linspace(ext[0], ext[-1], len(ext))

    # the detrended signal is zero at both pad ends, so zero-extending the
    # run buffer until the impulse response has died lets each pass finish
    # its full response; truncating mid-tail would break the forward vs
    # backward mirror symmetry at the edges
    decay = np.abs(np.roots(spec.a)).max()
    tail = min(50000, int(np.ceil(np.log(1e-14) / np.log(decay))))
    buf = np.concatenate([np.zeros(tail), ext - line, np.zeros(tail)])
    buf = _signal.lfilter(spec.b, spec.a, buf)
    buf = _signal.lfilter(spec.b, spec.a, buf[::-1])[::-1]
    r = buf[tail:-tail] + line
    return r[pad:-pad]


def extract_cc_segment(cycle: "DiagnosticCycle") -> slice:
    """Locate the constant-current charge portion of a diagnostic cycle.

    Keeps samples whose current sits within 2% of the median charging
    current and whose voltage is below the CV hold level (4.195 V), then
    returns the longest contiguous run of such samples.
    """
    current = cycle.current_a
    charging = current > 0
    if not np.any(charging):
        raise DegenerateCurveError(
            f"{cycle.cell_id} cycle {cycle.cycle_number}: no charging samples")
    med = float(np.median(current[charging]))
    ok = (np.abs(current - med) <= CC_CURRENT_TOLERANCE * med) \
        & (cycle.voltage_v < CC_VOLTAGE_CEILING_V)

    best_start, best_len = 0, 0
    start = None
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best_len:
                best_start, best_len = start, i - start
            start = None
    if best_len < 2:
        raise DegenerateCurveError(
            f"{cycle.cell_id} cycle {cycle.cycle_number}: CC segment too short")
    return slice(best_start, best_start + best_len)


def _merge_steps(t: np.ndarray, v: np.ndarray,
                 current_a: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-step IC on a merged grid: steps under 10 uV are folded forward."""
    mids, ics = [], []
    anchor_t, anchor_v = t[0], v[0]
    for k in range(1, len(v)):
        dv = v[k] - anchor_v
        if dv < MIN_STEP_V:
            continue
        dt = t[k] - anchor_t
        mids.append(0.5 * (anchor_v + v[k]))
        ics.append(current_a * dt / (_COULOMB_PER_MAH * dv))
        anchor_t, anchor_v = t[k], v[k]
    return np.array(mids), np.array(ics)


def _smooth_centered(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at edges."""
    half = window // 2
    out = np.empty_like(y)
    n = len(y)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = y[i - h:i + h + 1].mean()
    return out


def compute_ic_curve(cycle: "DiagnosticCycle",
                     spec: FilterSpec | None = None,
                     smooth_window: int = DEFAULT_SMOOTH_WINDOW) -> ICCurve:
    """Smoothed IC = I*dt/dV over the CC segment of one diagnostic cycle.

    The voltage trace is zero-phase filtered before differencing; each
    retained step contributes I*(t_k - t_{k-1}) / (V_k - V_{k-1}) in mAh/V
    at the step's midpoint voltage. Steps narrower than 10 uV are merged
    with the following step before division. Negative residuals after the
    moving-average smoothing are clamped to zero.
    """
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValidationError("smooth_window must be a positive odd integer")
    if spec is None:
        spec = default_filter()

    # filter the whole trace, then cut: the edge transients of the short
    # reflection padding land outside the retained CC span
    v_filtered = zero_phase_filter(spec, cycle.voltage_v)
    seg = extract_cc_segment(cycle)
    t = cycle.time_s[seg]
    v_filtered = v_filtered[seg]
    current = float(np.median(cycle.current_a[seg]))

    mids, ics = _merge_steps(t, v_filtered, current)
    if len(mids) < 2:
        raise DegenerateCurveError(
            f"{cycle.cell_id} cycle {cycle.cycle_number}: "
            "fewer than 2 steps after merging")
    smooth = np.clip(_smooth_centered(ics, smooth_window), 0.0, None)
    return ICCurve(voltage_v=mids, ic_mah_per_v=smooth)


def extract_features(curve: ICCurve) -> FeatureVector:
    """Read the five aging features off a smoothed IC curve.

    Ties are broken toward lower voltage. Raises when the curve misses the
    (3.5, 3.65) V window entirely, or when no positive slope exists there.
    """
    if curve.n_points < 5:
        raise ValidationError("curve needs at least 5 points")
    v, ic = curve.voltage_v, curve.ic_mah_per_v

    i1 = int(np.argmax(ic))
    in_window = (v > WINDOW_LOW_V) & (v < WINDOW_HIGH_V)
    if not np.any(in_window):
        raise FeatureWindowError(
            f"curve spans [{v[0]:.3f}, {v[-1]:.3f}] V; "
            f"({WINDOW_LOW_V}, {WINDOW_HIGH_V}) V window not covered")
    window_idx = np.nonzero(in_window)[0]
    i3 = window_idx[int(np.argmax(ic[in_window]))]

    # centered differences at interior points of the window
    slope_idx = window_idx[(window_idx > 0) & (window_idx < len(v) - 1)]
    if len(slope_idx) == 0:
        raise NoPositiveSlopeError("window too narrow for slope estimation")
    slopes = (ic[slope_idx + 1] - ic[slope_idx - 1]) \
        / (v[slope_idx + 1] - v[slope_idx - 1])
    positive = slopes > 0
    if not np.any(positive):
        raise NoPositiveSlopeError("no positive IC slope inside the window")
    k = int(np.argmax(np.where(positive, slopes, -np.inf)))

    return FeatureVector(
        f1_ic_peak=float(ic[i1]),
        f2_v_at_peak=float(v[i1]),
        f3_ic_max_window=float(ic[i3]),
        f4_slope_max_window=float(slopes[k]),
        f5_v_at_slope_max=float(v[slope_idx[k]]),
    )


def extract_fleet_features(
    fleet: list["CellHistory"],
    spec: FilterSpec | None = None,
    smooth_window: int = DEFAULT_SMOOTH_WINDOW,
) -> Mapping[tuple[str, int], FeatureVector]:
    """Feature vectors for every diagnostic, keyed by (cell_id, cycle_number)."""
    if spec is None:
        spec = default_filter()
    out = {}
    for cell in fleet:
        for diag in cell.diagnostics:
            curve = compute_ic_curve(diag, spec, smooth_window)
            out[(cell.cell_id, diag.cycle_number)] = extract_features(curve)
    return out


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean of their covered positions."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Rank correlation: Pearson correlation of the average-rank vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("inputs must be 1-d arrays of equal length")
    if len(x) < 3:
        raise ValidationError("need at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("constant input has no rank ordering")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    r = float(rx @ ry / np.sqrt((rx @ rx) * (ry @ ry)))
    return min(1.0, max(-1.0, r))
