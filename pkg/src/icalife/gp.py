"""Exact Gaussian-process regression with an ARD squared-exponential kernel.

Hyperparameters live in log space so gradient ascent is unconstrained.
Models standardize features and targets internally; predictions come back
in raw target units at the observation level (latent variance plus noise),
which is what downstream consumers of the uncertainty need.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError, ValidationError
from .scaling import ColumnScaler, fit_scaler

logger = logging.getLogger(__name__)

BASE_JITTER = 1e-8
MAX_JITTER = 1e-2
INIT_LOG_NOISE_VAR = -2.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LEARN_RATE = 0.05


@dataclass(frozen=True)
class GPHyper:
    """Signal variance, per-dimension lengthscales, and noise variance.

    All three are stored as logarithms; the exponentiated values are
    therefore strictly positive by construction.
    """

    log_signal_var: float
    log_lengthscales: np.ndarray
    log_noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float))
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_signal_var", float(self.log_signal_var))
        object.__setattr__(self, "log_noise_var", float(self.log_noise_var))
        if not (np.isfinite(self.log_signal_var)
                and np.isfinite(self.log_noise_var)
                and np.all(np.isfinite(ls))):
            raise ValidationError("hyperparameters must be finite in log space")

    @property
    def signal_var(self) -> float:
        return float(np.exp(self.log_signal_var))

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))

    @property
    def n_dims(self) -> int:
        return len(self.log_lengthscales)

    def as_vector(self) -> np.ndarray:
        """Pack as [log signal var, log lengthscales..., log noise var]."""
        return np.concatenate([[self.log_signal_var], self.log_lengthscales,
                               [self.log_noise_var]])

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> GPHyper:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or len(theta) < 3:
            raise ValidationError("hyperparameter vector needs >= 3 entries")
        return cls(float(theta[0]), theta[1:-1].copy(), float(theta[-1]))


def default_hyper(n_dims: int) -> GPHyper:
    """Neutral start on standardized data: unit scales, noise var e^-2."""
    return GPHyper(0.0, np.zeros(n_dims), INIT_LOG_NOISE_VAR)


@dataclass(frozen=True)
class PredictiveDistribution:
    """Posterior mean and observation-level variance in raw target units."""

    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.variance)):
            raise ValidationError("predictive moments must be finite")
        if self.variance < 0.0:
            raise ValidationError("predictive variance must be non-negative")


@dataclass(frozen=True)
class GPModel:
    """Immutable fitted state: standardized data, scalers, and factorization.

    chol_factor is the lower Cholesky factor of K + (noise_var + jitter) I
    on the standardized inputs, and alpha solves that matrix against the
    standardized targets.
    """

    train_inputs: np.ndarray
    train_targets: np.ndarray
    feature_scaler: ColumnScaler
    target_scaler: ColumnScaler
    hyper: GPHyper
    chol_factor: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def n_train(self) -> int:
        return len(self.train_targets)


def rbf_gram(xa: np.ndarray, xb: np.ndarray, signal_var: float,
             lengthscales: np.ndarray) -> np.ndarray:
    """ARD-RBF Gram block between two row matrices.

    Built from explicit pairwise differences rather than the expanded
    norm identity: coincident rows then give exactly signal_var.
    """
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    diff = (xa[:, None, :] - xb[None, :, :]) / lengthscales
    return signal_var * np.exp(-0.5 * np.sum(diff * diff, axis=2))


def kernel_rbf_ard(a: np.ndarray, b: np.ndarray, hyper: GPHyper) -> float:
    """Covariance between two feature vectors under the ARD-RBF kernel."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (hyper.n_dims,) or b.shape != (hyper.n_dims,):
        raise ValidationError(
            f"kernel inputs must be {hyper.n_dims}-vectors, "
            f"got shapes {a.shape} and {b.shape}")
    z = (a - b) / hyper.lengthscales
    return hyper.signal_var * float(np.exp(-0.5 * np.dot(z, z)))


def _validate_training_arrays(x, y):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("training inputs must form a non-empty matrix")
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != x.shape[0]:
        raise ValidationError(
            f"{x.shape[0]} input rows but {len(y)} targets")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValidationError("training data must be finite")
    return x, y


def _factorize(xs: np.ndarray, hyper: GPHyper, jitter: float):
    """Cholesky of K + noise + jitter, escalating jitter x10 on breakdown."""
    # extreme hyperparameters overflow to inf/nan here; the finiteness
    # check below turns that into a clean NumericalError
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        k = rbf_gram(xs, xs, hyper.signal_var, hyper.lengthscales)
        k[np.diag_indices_from(k)] += hyper.noise_var
    if not np.all(np.isfinite(k)):
        raise NumericalError("kernel matrix is not finite")
    eye = np.eye(len(k))
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(k + j * eye), j
        except np.linalg.LinAlgError:
            if j >= MAX_JITTER:
                raise NumericalError(
                    f"Cholesky factorization failed at maximum jitter "
                    f"{MAX_JITTER:g}") from None
            j = min(j * 10.0, MAX_JITTER)
            logger.debug("factorization failed, jitter escalated to %g", j)


def _assemble(xs, ys, feature_scaler, target_scaler, hyper, jitter) -> GPModel:
    # shared by fit_gp and model deserialization, which must rebuild the
    # factorization from already-standardized arrays without re-fitting
    # the scalers
    chol, used = _factorize(xs, hyper, jitter)
    alpha = cho_solve((chol, True), ys)
    return GPModel(train_inputs=xs, train_targets=ys,
                   feature_scaler=feature_scaler, target_scaler=target_scaler,
                   hyper=hyper, chol_factor=chol, alpha=alpha, jitter=used)


def fit_gp(x: np.ndarray, y: np.ndarray, hyper: GPHyper | None = None,
           jitter: float = BASE_JITTER) -> GPModel:
    """Standardize the data and factorize the regularized Gram matrix.

    Features are standardized per dimension and the target as a whole;
    zero-variance columns scale by 1 (with a warning from the scaler).
    The jitter starts at the given value and is escalated tenfold up to
    ``MAX_JITTER`` whenever the factorization breaks down; the value that
    succeeded is recorded on the model.
    """
    x, y = _validate_training_arrays(x, y)
    if jitter <= 0.0 or not np.isfinite(jitter):
        raise ValidationError("jitter must be positive and finite")
    if hyper is None:
        hyper = default_hyper(x.shape[1])
    elif hyper.n_dims != x.shape[1]:
        raise ValidationError(
            f"hyperparameters cover {hyper.n_dims} dimensions, "
            f"data has {x.shape[1]}")
    feature_scaler = fit_scaler(x)
    target_scaler = fit_scaler(y)
    xs = feature_scaler.transform(x)
    ys = target_scaler.transform(y)
    return _assemble(xs, ys, feature_scaler, target_scaler, hyper, jitter)


def predict_batch(model: GPModel, x: np.ndarray):
    """Posterior means and observation-level variances for rows of ``x``.

    Returns a pair of arrays in raw target units.  The latent variance is
    clamped at zero before the noise floor is added, so the reported
    variance is never negative.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = model.train_inputs.shape[1]
    if x.shape[1] != d:
        raise ValidationError(f"expected {d}-dimensional inputs, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("prediction inputs must be finite")
    sv = model.hyper.signal_var
    xs = model.feature_scaler.transform(x)
    ks = rbf_gram(xs, model.train_inputs, sv, model.hyper.lengthscales)
    mean_std = ks @ model.alpha
    v = solve_triangular(model.chol_factor, ks.T, lower=True)
    latent = sv - np.sum(v * v, axis=0)
    var_std = np.maximum(latent, 0.0) + model.hyper.noise_var
    y_std = float(model.target_scaler.std)
    mean = mean_std * y_std + float(model.target_scaler.mean)
    return mean, var_std * y_std ** 2


def predict(model: GPModel, x_star: np.ndarray) -> PredictiveDistribution:
    """Posterior for a single feature vector, in raw target units."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x_star.ndim != 1:
        raise ValidationError("predict takes a single feature vector")
    mean, var = predict_batch(model, x_star[None, :])
    return PredictiveDistribution(mean=float(mean[0]), variance=float(var[0]))


def log_marginal_likelihood(model: GPModel) -> float:
    """Marginal log-likelihood of the standardized targets under the model."""
    ys = model.train_targets
    return float(-0.5 * ys @ model.alpha
                 - np.sum(np.log(np.diag(model.chol_factor)))
                 - 0.5 * model.n_train * np.log(2.0 * np.pi))


def lml_gradient(model: GPModel) -> np.ndarray:
    """Analytic LML gradient over the packed log-hyperparameter vector.

    Component order matches ``GPHyper.as_vector()``.  Each entry is
    0.5 tr((alpha alpha^T - K^-1) dK/dtheta) with dK/dtheta chain-ruled
    into log space, where K is the regularized Gram matrix.
    """
    xs = model.train_inputs
    hyper = model.hyper
    ls = hyper.lengthscales
    k_sig = rbf_gram(xs, xs, hyper.signal_var, ls)
    kinv = cho_solve((model.chol_factor, True), np.eye(model.n_train))
    a = np.outer(model.alpha, model.alpha) - kinv
    grads = np.empty(hyper.n_dims + 2)
    grads[0] = 0.5 * np.sum(a * k_sig)
    diff = xs[:, None, :] - xs[None, :, :]
    for j in range(hyper.n_dims):
        scaled = diff[:, :, j] / ls[j]
        grads[j + 1] = 0.5 * np.sum(a * (k_sig * scaled * scaled))
    grads[-1] = 0.5 * np.trace(a) * hyper.noise_var
    return grads


def optimize_hyperparams(x: np.ndarray, y: np.ndarray,
                         init: GPHyper | None = None, steps: int = 100,
                         learn_rate: float = DEFAULT_LEARN_RATE):
    """Fixed-budget Adam ascent on the log marginal likelihood.

    Runs exactly ``steps`` updates with no early stopping; the step budget
    itself is the regularizer.  Returns ``(hyper, trace)`` where trace[i]
    is the LML at the parameters held before update i and trace[-1] is the
    LML of the returned hyperparameters.
    """
    x, y = _validate_training_arrays(x, y)
    if steps < 0:
        raise ValidationError("step count must be non-negative")
    if learn_rate <= 0.0:
        raise ValidationError("learn rate must be positive")
    if init is None:
        init = default_hyper(x.shape[1])
    theta = init.as_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = np.empty(steps + 1)

    def evaluate(vec, step):
        try:
            model = fit_gp(x, y, GPHyper.from_vector(vec))
            value = log_marginal_likelihood(model)
        except NumericalError as exc:
            raise NumericalError(
                f"ascent aborted at step {step}: {exc}") from exc
        if not np.isfinite(value):
            raise NumericalError(
                f"non-finite LML at ascent step {step} "
                f"(theta={np.array2string(vec, precision=4)})")
        return value, model

    for step in range(steps):
        trace[step], model = evaluate(theta, step)
        g = lml_gradient(model)
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** (step + 1))
        v_hat = v / (1.0 - ADAM_BETA2 ** (step + 1))
        theta = theta + learn_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if not np.all(np.isfinite(theta)):
            raise NumericalError(
                f"hyperparameters diverged at ascent step {step}")
    final = GPHyper.from_vector(theta) if steps else init
    trace[-1], _ = evaluate(theta, steps)
    return final, trace
