"""Benchmark regressors behind one fit/predict contract.

Six model families: a cubic polynomial in the dominant feature, a
multivariate polynomial with pairwise interactions, a small feed-forward
network, epsilon-insensitive support vector regression solved in the dual,
a single pooled GP, and a GP tuned by leave-one-cell-out validation.  All
of them standardize features and targets and report predictions in raw
target units.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ensemble, gp
from .errors import FitError, TrainingError, ValidationError
from .scaling import ColumnScaler, fit_scaler

logger = logging.getLogger(__name__)

REGRESSOR_KINDS = ("poly1d", "polymulti", "ffnn", "svr", "gpr", "gpr_loco",
                   "gprn")

RIDGE_LAMBDA = 1e-8

FFNN_LAYERS = (64, 64)
FFNN_EPOCHS = 1000
FFNN_LEARN_RATE = 1e-3

SVR_C = 10.0
SVR_EPSILON = 0.01
SVR_KKT_TOL = 1e-3
SVR_MAX_PASSES = 100_000

POOLED_GPR_EPOCHS = 200

# log-spaced LOCO search grid: (signal var, shared lengthscale, noise var)
LOCO_GRID = tuple(itertools.product((0.5, 1.0, 2.0), (0.3, 1.0, 3.0),
                                    (1e-4, 1e-2, 1e-1)))

_ALLOWED_KEYS = {
    "poly1d": {"degree"},
    "polymulti": {"degree", "interactions"},
    "ffnn": {"layers", "epochs", "learn_rate"},
    "svr": {"c", "epsilon", "lengthscales", "kkt_tol", "max_passes"},
    "gpr": {"epochs"},
    "gpr_loco": {"hyper_grid"},
    "gprn": {"epochs"},
}


@dataclass(frozen=True)
class RegressorSpec:
    """Declarative model choice: kind, kind-specific overrides, and seed."""

    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ValidationError(
                f"unknown regressor kind {self.kind!r}; "
                f"expected one of {REGRESSOR_KINDS}")
        unknown = set(self.hyperparameters) - _ALLOWED_KEYS[self.kind]
        if unknown:
            raise ValidationError(
                f"unknown {self.kind} hyperparameters: {sorted(unknown)}")


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("features must form a non-empty matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    return x


def _as_targets(y, n) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != n:
        raise ValidationError(f"{n} feature rows but {len(y)} targets")
    if not np.all(np.isfinite(y)):
        raise ValidationError("targets must be finite")
    return y


# ---------------------------------------------------------------------------
# polynomials

def _design_matrix(z: np.ndarray, exponents) -> np.ndarray:
    cols = [np.prod(z ** np.asarray(e, dtype=float), axis=1)
            for e in exponents]
    return np.column_stack(cols)


@dataclass(frozen=True)
class PolynomialModel:
    """Least-squares fit over a monomial basis of standardized features."""

    columns: tuple
    exponents: tuple
    coefficients: np.ndarray
    feature_scaler: ColumnScaler
    target_scaler: ColumnScaler

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)[:, list(self.columns)]
        design = _design_matrix(self.feature_scaler.transform(x),
                                self.exponents)
        return self.target_scaler.inverse_transform(
            design @ self.coefficients)


def _fit_polynomial(x, y, columns, exponents, ridge) -> PolynomialModel:
    feature_scaler = fit_scaler(x)
    target_scaler = fit_scaler(y)
    design = _design_matrix(feature_scaler.transform(x), exponents)
    gram = design.T @ design
    if ridge:
        gram = gram + ridge * np.eye(len(gram))
    try:
        coef = np.linalg.solve(gram, design.T @ target_scaler.transform(y))
    except np.linalg.LinAlgError:
        raise FitError("normal equations are rank deficient") from None
    if not np.all(np.isfinite(coef)):
        raise FitError("polynomial solve produced non-finite coefficients")
    return PolynomialModel(columns=tuple(columns), exponents=tuple(exponents),
                           coefficients=coef, feature_scaler=feature_scaler,
                           target_scaler=target_scaler)


def fit_poly1d(x, y, degree: int = 3) -> PolynomialModel:
    """Polynomial in the dominant feature (column 0) alone, by normal
    equations on the standardized values."""
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    if degree < 1:
        raise ValidationError("degree must be at least 1")
    if len(x) < degree + 1:
        raise ValidationError(
            f"need at least {degree + 1} samples for degree {degree}")
    exponents = [(p,) for p in range(degree + 1)]
    return _fit_polynomial(x[:, :1], y, (0,), exponents, ridge=0.0)


def fit_polymulti(x, y, degree: int = 3,
                  interactions: bool = True) -> PolynomialModel:
    """Per-feature monomials up to ``degree`` plus pairwise interaction
    terms, ridge-stabilized least squares."""
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    if degree < 1:
        raise ValidationError("degree must be at least 1")
    d = x.shape[1]
    exponents = [(0,) * d]
    for j in range(d):
        for p in range(1, degree + 1):
            e = [0] * d
            e[j] = p
            exponents.append(tuple(e))
    if interactions:
        for i, j in itertools.combinations(range(d), 2):
            e = [0] * d
            e[i] = e[j] = 1
            exponents.append(tuple(e))
    if len(x) <= len(exponents):
        raise FitError(
            f"{len(exponents)}-term basis needs more than {len(x)} samples")
    return _fit_polynomial(x, y, tuple(range(d)), exponents,
                           ridge=RIDGE_LAMBDA)


# ---------------------------------------------------------------------------
# feed-forward network

@dataclass(frozen=True)
class FFNNModel:
    """Fully connected ReLU network trained by full-batch Adam."""

    weights: tuple
    biases: tuple
    feature_scaler: ColumnScaler
    target_scaler: ColumnScaler

    def predict(self, x) -> np.ndarray:
        h = self.feature_scaler.transform(_as_matrix(x))
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return self.target_scaler.inverse_transform(h[:, 0])


def fit_ffnn(x, y, layers=FFNN_LAYERS, epochs: int = FFNN_EPOCHS,
             learn_rate: float = FFNN_LEARN_RATE, seed: int = 0) -> FFNNModel:
    """Train a d -> hidden... -> 1 ReLU network for exactly ``epochs``
    full-batch Adam steps on the mean squared error.

    Weights start He-uniform from ``seed`` and biases at zero, so two fits
    with equal data and seed produce identical parameters.
    """
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    if len(x) < 2:
        raise ValidationError("need at least 2 samples")
    if epochs < 0 or learn_rate <= 0:
        raise ValidationError("epochs must be >= 0 and learn rate positive")
    feature_scaler = fit_scaler(x)
    target_scaler = fit_scaler(y)
    xs = feature_scaler.transform(x)
    ys = target_scaler.transform(y)
    sizes = [x.shape[1], *layers, 1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    params = []
    for w, b in zip(weights, biases):
        params.extend([w, b])
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n = len(xs)
    n_layers = len(weights)
    for epoch in range(epochs):
        # forward, keeping pre-activations for the ReLU masks; divergence
        # overflows here and is caught by the loss check
        acts = [xs]
        pre = []
        h = xs
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n_layers):
                z = h @ weights[i] + biases[i]
                pre.append(z)
                h = np.maximum(z, 0.0) if i < n_layers - 1 else z
                acts.append(h)
            residual = acts[-1][:, 0] - ys
            loss = float(np.mean(residual ** 2))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        grads = [None] * len(params)
        dz = (2.0 / n) * residual[:, None]
        for i in reversed(range(n_layers)):
            grads[2 * i] = acts[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            if i > 0:
                dz = (dz @ weights[i].T) * (pre[i - 1] > 0.0)
        for j, p in enumerate(params):
            g = grads[j]
            m[j] = gp.ADAM_BETA1 * m[j] + (1 - gp.ADAM_BETA1) * g
            v[j] = gp.ADAM_BETA2 * v[j] + (1 - gp.ADAM_BETA2) * g * g
            m_hat = m[j] / (1 - gp.ADAM_BETA1 ** (epoch + 1))
            v_hat = v[j] / (1 - gp.ADAM_BETA2 ** (epoch + 1))
            p -= learn_rate * m_hat / (np.sqrt(v_hat) + gp.ADAM_EPS)
    return FFNNModel(weights=tuple(weights), biases=tuple(biases),
                     feature_scaler=feature_scaler,
                     target_scaler=target_scaler)


# ---------------------------------------------------------------------------
# support vector regression

@dataclass(frozen=True)
class SVRModel:
    """Dual epsilon-SVR solution over an ARD-RBF kernel."""

    beta: np.ndarray
    bias: float
    train_inputs: np.ndarray
    train_targets: np.ndarray
    lengthscales: np.ndarray
    c: float
    epsilon: float
    feature_scaler: ColumnScaler
    target_scaler: ColumnScaler

    @property
    def n_support(self) -> int:
        return int(np.sum(np.abs(self.beta) > 1e-12))

    def predict(self, x) -> np.ndarray:
        xs = self.feature_scaler.transform(_as_matrix(x))
        k = gp.rbf_gram(xs, self.train_inputs, 1.0, self.lengthscales)
        return self.target_scaler.inverse_transform(k @ self.beta + self.bias)


def _optimal_bias(residuals: np.ndarray, epsilon: float):
    """Bias minimizing the epsilon-insensitive loss, via its breakpoints.

    The minimizer of a convex piecewise-linear function is an interval
    whose endpoints are breakpoints; the midpoint centers flat solutions
    inside the tube instead of pinning them to an edge.
    """
    points = np.concatenate([residuals - epsilon, residuals + epsilon])
    losses = np.maximum(
        np.abs(residuals[None, :] - points[:, None]) - epsilon, 0.0).sum(axis=1)
    floor = losses.min()
    flat = points[losses <= floor + 1e-9 * max(floor, 1.0)]
    bias = float(flat.min() + flat.max()) / 2.0
    hinge = float(np.maximum(np.abs(residuals - bias) - epsilon, 0.0).sum())
    return bias, hinge


def _svr_gap(k, ys, a, c, epsilon):
    """Duality gap certificate at the current iterate.

    The dual value is taken at the complementary representation of beta,
    which is always dual-feasible and at least as good as the raw iterate.
    """
    n = len(ys)
    beta = a[:n] - a[n:]
    f = k @ beta
    quad = 0.5 * float(beta @ f)
    bias, hinge = _optimal_bias(ys - f, epsilon)
    primal = quad + c * hinge
    dual = float(ys @ beta) - quad - epsilon * float(np.sum(np.abs(beta)))
    return primal - dual, bias


def fit_svr(x, y, c: float = SVR_C, epsilon: float = SVR_EPSILON,
            lengthscales=None, kkt_tol: float = SVR_KKT_TOL,
            max_passes: int = SVR_MAX_PASSES) -> SVRModel:
    """Solve the epsilon-SVR dual by pairwise coordinate updates.

    Repeatedly picks the maximal-violating pair of dual variables and
    solves the two-variable subproblem in closed form, stopping once the
    primal-dual objective gap drops to ``kkt_tol`` (in standardized target
    units).  The bias is the exact minimizer of the primal hinge loss at
    the final beta.
    """
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    n = len(x)
    if n < 2:
        raise ValidationError("need at least 2 samples")
    if c <= 0 or epsilon <= 0 or kkt_tol <= 0:
        raise ValidationError("c, epsilon and kkt_tol must be positive")
    feature_scaler = fit_scaler(x)
    target_scaler = fit_scaler(y)
    xs = feature_scaler.transform(x)
    ys = target_scaler.transform(y)
    ls = np.ones(x.shape[1]) if lengthscales is None else np.asarray(
        lengthscales, dtype=float)
    if ls.shape != (x.shape[1],) or np.any(ls <= 0):
        raise ValidationError("lengthscales must be positive, one per feature")
    k = gp.rbf_gram(xs, xs, 1.0, ls)

    # dual variables a = [alpha; alpha*], gradient of the 2n-variable QP
    a = np.zeros(2 * n)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    grad = np.concatenate([epsilon - ys, epsilon + ys])
    diag = np.concatenate([np.diag(k), np.diag(k)])
    gap, bias = _svr_gap(k, ys, a, c, epsilon)
    passes = 0
    stalled = False
    while gap > kkt_tol and not stalled:
        if passes >= max_passes:
            raise FitError(
                f"SVR did not converge within {max_passes} passes "
                f"(gap {gap:.3g})")
        # a block of pairwise updates between gap certifications
        for _ in range(max(n, 16)):
            passes += 1
            value = -sign * grad
            up = np.where(sign > 0, a < c, a > 0)
            down = np.where(sign > 0, a > 0, a < c)
            if not up.any() or not down.any():
                stalled = True
                break
            i = int(np.argmax(np.where(up, value, -np.inf)))
            j = int(np.argmin(np.where(down, value, np.inf)))
            violation = value[i] - value[j]
            if violation <= 1e-12:
                stalled = True
                break
            ri, rj = i % n, j % n
            eta = max(diag[i] + diag[j] - 2.0 * k[ri, rj], 1e-12)
            step = violation / eta
            step = min(step, c - a[i] if sign[i] > 0 else a[i])
            step = min(step, a[j] if sign[j] > 0 else c - a[j])
            a[i] += sign[i] * step
            a[j] -= sign[j] * step
            delta = step * (k[:, ri] - k[:, rj])
            grad += np.concatenate([delta, -delta])
        gap, bias = _svr_gap(k, ys, a, c, epsilon)
    if gap > kkt_tol:
        raise FitError(
            f"SVR stalled with duality gap {gap:.3g} above {kkt_tol:g}")
    beta = a[:n] - a[n:]
    beta[np.abs(beta) < 1e-15] = 0.0
    return SVRModel(beta=beta, bias=bias, train_inputs=xs, train_targets=ys,
                    lengthscales=ls, c=c, epsilon=epsilon,
                    feature_scaler=feature_scaler,
                    target_scaler=target_scaler)


# ---------------------------------------------------------------------------
# GP-backed baselines

@dataclass(frozen=True)
class GPRegressor:
    """Single pooled GP behind the baseline predict contract."""

    model: gp.GPModel
    epochs: int

    def predict(self, x) -> np.ndarray:
        return gp.predict_batch(self.model, _as_matrix(x))[0]


def fit_pooled_gpr(x, y, epochs: int = POOLED_GPR_EPOCHS) -> GPRegressor:
    """One GP on all rows pooled, hyperparameters tuned for ``epochs``."""
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    if len(x) < 2:
        raise ValidationError("need at least 2 samples")
    hyper, _ = gp.optimize_hyperparams(x, y, steps=epochs)
    return GPRegressor(model=gp.fit_gp(x, y, hyper), epochs=int(epochs))


@dataclass(frozen=True)
class LocoGPRegressor:
    """Pooled GP refit with the grid candidate that won leave-one-cell-out."""

    model: gp.GPModel
    grid: tuple
    loco_maes: tuple
    chosen: tuple

    def predict(self, x) -> np.ndarray:
        return gp.predict_batch(self.model, _as_matrix(x))[0]


def _grid_hyper(candidate, n_dims: int) -> gp.GPHyper:
    signal_var, lengthscale, noise_var = candidate
    return gp.GPHyper(np.log(signal_var),
                      np.full(n_dims, np.log(lengthscale)),
                      np.log(noise_var))


def fit_gpr_loco(per_cell_data, hyper_grid=None) -> LocoGPRegressor:
    """Grid search scored by leave-one-cell-out MAE, then a pooled refit.

    Each grid candidate is a (signal var, shared lengthscale, noise var)
    triple in standardized units.  Candidates are scored by fitting on all
    but one cell and predicting the held-out cell, averaged over holdouts;
    ties keep the earlier grid entry.
    """
    if len(per_cell_data) < 2:
        raise ValidationError("leave-one-cell-out needs at least 2 cells")
    grid = tuple(tuple(c) for c in (LOCO_GRID if hyper_grid is None
                                    else hyper_grid))
    if not grid:
        raise ValidationError("hyperparameter grid is empty")
    arrays = {cell: (_as_matrix(cx), _as_targets(cy, len(_as_matrix(cx))))
              for cell, (cx, cy) in per_cell_data.items()}
    cells = list(arrays)
    d = next(iter(arrays.values()))[0].shape[1]
    maes = []
    for candidate in grid:
        hyper = _grid_hyper(candidate, d)
        errors = []
        for held_out in cells:
            train_x = np.vstack([arrays[c][0] for c in cells if c != held_out])
            train_y = np.concatenate([arrays[c][1] for c in cells
                                      if c != held_out])
            model = gp.fit_gp(train_x, train_y, hyper)
            pred = gp.predict_batch(model, arrays[held_out][0])[0]
            errors.append(float(np.mean(np.abs(pred - arrays[held_out][1]))))
        maes.append(float(np.mean(errors)))
        logger.debug("LOCO candidate %s -> MAE %.6g", candidate, maes[-1])
    best = int(np.argmin(maes))
    all_x = np.vstack([arrays[c][0] for c in cells])
    all_y = np.concatenate([arrays[c][1] for c in cells])
    model = gp.fit_gp(all_x, all_y, _grid_hyper(grid[best], d))
    return LocoGPRegressor(model=model, grid=grid, loco_maes=tuple(maes),
                           chosen=grid[best])


@dataclass(frozen=True)
class GprnRegressor:
    """Ensemble mixture behind the baseline predict contract."""

    model: ensemble.GPRnModel

    def predict(self, x) -> np.ndarray:
        return ensemble.mixture_batch(self.model, _as_matrix(x))[0]


# ---------------------------------------------------------------------------
# dispatch

def _group_by_cell(x, y, cell_ids):
    if cell_ids is None:
        raise ValidationError("this regressor kind needs per-row cell ids")
    cell_ids = list(cell_ids)
    if len(cell_ids) != len(x):
        raise ValidationError("one cell id per row required")
    grouped = {}
    for cell in dict.fromkeys(cell_ids):
        mask = np.array([cid == cell for cid in cell_ids])
        grouped[cell] = (x[mask], y[mask])
    return grouped


def fit_regressor(spec: RegressorSpec, x, y, cell_ids=None):
    """Fit the regressor described by ``spec`` on rows (x, y).

    ``cell_ids`` groups rows by cell for the kinds that train per cell or
    validate across cells; the other kinds ignore it.
    """
    x = _as_matrix(x)
    y = _as_targets(y, len(x))
    hp = dict(spec.hyperparameters)
    if spec.kind == "poly1d":
        return fit_poly1d(x, y, **hp)
    if spec.kind == "polymulti":
        return fit_polymulti(x, y, **hp)
    if spec.kind == "ffnn":
        return fit_ffnn(x, y, seed=spec.seed, **hp)
    if spec.kind == "svr":
        return fit_svr(x, y, **hp)
    if spec.kind == "gpr":
        return fit_pooled_gpr(x, y, **hp)
    if spec.kind == "gpr_loco":
        return fit_gpr_loco(_group_by_cell(x, y, cell_ids), **hp)
    return GprnRegressor(model=ensemble.train_gprn(
        _group_by_cell(x, y, cell_ids), hp.get("epochs", 20)))
