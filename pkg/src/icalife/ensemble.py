"""Per-cell GP experts combined as a uniform Gaussian mixture.

One expert is trained on each cell's rows alone; predictions pool the
experts' moments.  The total predictive variance splits into an epistemic
part (average expert variance) and an aleatoric part (spread of expert
means), which downstream consumers can report separately.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import gp
from .errors import IcalifeError, TrainingError, ValidationError
from .scaling import ColumnScaler

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GPRnModel:
    """Trained ensemble: (cell_id, GPModel) pairs in training order."""

    experts: tuple
    weights: np.ndarray
    epochs_used: int

    def __post_init__(self):
        experts = tuple(self.experts)
        object.__setattr__(self, "experts", experts)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(experts) < 1:
            raise ValidationError("ensemble needs at least one expert")
        if w.shape != (len(experts),):
            raise ValidationError(
                f"{len(experts)} experts but {w.shape} weights")
        if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValidationError("weights must be non-negative and sum to 1")

    @property
    def cell_ids(self) -> tuple:
        return tuple(cell_id for cell_id, _ in self.experts)

    @property
    def n_experts(self) -> int:
        return len(self.experts)


@dataclass(frozen=True)
class MixturePrediction:
    """Mixture moments in raw target units, with the per-expert breakdown."""

    mean: float
    variance: float
    epistemic: float
    aleatoric: float
    expert_means: np.ndarray
    expert_vars: np.ndarray

    def __post_init__(self):
        if self.epistemic < 0.0 or self.aleatoric < 0.0:
            raise ValidationError("variance components must be non-negative")
        slack = 1e-9 * max(self.variance, 1.0)
        if abs(self.variance - (self.epistemic + self.aleatoric)) > slack:
            raise ValidationError("variance must decompose exactly")


def mixture_moments(means, variances, weights):
    """Moments of a Gaussian mixture: mean, epistemic, aleatoric, total.

    The aleatoric term is the weighted spread of the component means around
    the mixture mean; the centered form sidesteps the cancellation that the
    raw second-moment difference suffers when the components agree.
    """
    m = np.asarray(means, dtype=float)
    s2 = np.asarray(variances, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (m.shape == s2.shape == w.shape) or m.ndim != 1 or len(m) == 0:
        raise ValidationError("moment arrays must be equal-length vectors")
    mean = float(w @ m)
    epistemic = float(w @ s2)
    aleatoric = float(w @ (m - mean) ** 2)
    return mean, epistemic, aleatoric, epistemic + aleatoric


def train_gprn(per_cell_data, epochs: int) -> GPRnModel:
    """Fit one GP expert per cell, each tuned for exactly ``epochs`` steps.

    ``per_cell_data`` maps cell id to an (inputs, targets) pair; iteration
    order fixes the expert order, so training is deterministic for a given
    mapping.  Weights are uniform across experts.
    """
    if not per_cell_data:
        raise ValidationError("ensemble needs at least one training cell")
    if epochs < 0:
        raise ValidationError("epoch budget must be non-negative")
    experts = []
    for cell_id, (x, y) in per_cell_data.items():
        if len(np.asarray(y).ravel()) < 2:
            raise ValidationError(
                f"cell {cell_id!r} has fewer than 2 samples")
        try:
            hyper, _ = gp.optimize_hyperparams(x, y, steps=epochs)
            model = gp.fit_gp(x, y, hyper)
        except IcalifeError as exc:
            raise TrainingError(
                f"expert for cell {cell_id!r} failed: {exc}") from exc
        experts.append((cell_id, model))
    count = len(experts)
    return GPRnModel(experts=tuple(experts),
                     weights=np.full(count, 1.0 / count),
                     epochs_used=int(epochs))


def predict_mixture(model: GPRnModel, x_star) -> MixturePrediction:
    """Pool the experts' posteriors at one input into mixture moments."""
    preds = [gp.predict(m, x_star) for _, m in model.experts]
    means = np.array([p.mean for p in preds])
    variances = np.array([p.variance for p in preds])
    mean, epistemic, aleatoric, variance = mixture_moments(
        means, variances, model.weights)
    return MixturePrediction(mean=mean, variance=variance,
                             epistemic=epistemic, aleatoric=aleatoric,
                             expert_means=means, expert_vars=variances)


def mixture_batch(model: GPRnModel, x):
    """Mixture means and total variances for many rows at once."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    means = np.empty((model.n_experts, len(x)))
    variances = np.empty_like(means)
    for i, (_, expert) in enumerate(model.experts):
        means[i], variances[i] = gp.predict_batch(expert, x)
    w = model.weights
    mean = w @ means
    total = w @ variances + w @ (means - mean) ** 2
    return mean, total


def tune_epochs(per_cell_data, candidate_epochs, train_cell_sets=None) -> int:
    """Pick the epoch budget whose ensembles track their own training data.

    Each candidate is scored by retraining the ensemble on every cell set
    in ``train_cell_sets`` (default: a single set holding all cells) and
    averaging the MAE of the mixture mean over that set's training rows.
    The candidate with the smallest score wins; ties go to fewer epochs.
    """
    candidates = [int(c) for c in candidate_epochs]
    if not candidates:
        raise ValidationError("need at least one candidate epoch budget")
    if train_cell_sets is None:
        train_cell_sets = [tuple(per_cell_data)]
    scores = {}
    for epochs in candidates:
        set_maes = []
        for cells in train_cell_sets:
            subset = {cell: per_cell_data[cell] for cell in cells}
            model = train_gprn(subset, epochs)
            errors = []
            for cell in cells:
                x, y = subset[cell]
                pred, _ = mixture_batch(model, _as_rows(x))
                errors.extend(np.abs(pred - np.asarray(y, dtype=float).ravel()))
            set_maes.append(float(np.mean(errors)))
        scores[epochs] = float(np.mean(set_maes))
        logger.debug("epoch budget %d -> training MAE %.6g",
                     epochs, scores[epochs])
    return min(candidates, key=lambda e: (scores[e], e))


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def export_gprn(model: GPRnModel) -> str:
    """Serialize the ensemble as a versioned JSON document."""
    experts = []
    for cell_id, m in model.experts:
        experts.append({
            "cell_id": cell_id,
            "log_signal_var": m.hyper.log_signal_var,
            "log_lengthscales": m.hyper.log_lengthscales.tolist(),
            "log_noise_var": m.hyper.log_noise_var,
            "jitter": m.jitter,
            "feature_mean": m.feature_scaler.mean.tolist(),
            "feature_std": m.feature_scaler.std.tolist(),
            "target_mean": float(m.target_scaler.mean),
            "target_std": float(m.target_scaler.std),
            "train_inputs": m.train_inputs.tolist(),
            "train_targets": m.train_targets.tolist(),
        })
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "gprn",
        # expert predictive variances are observation-level (noise included)
        "expert_variance_includes_noise": True,
        "epochs_used": model.epochs_used,
        "weights": model.weights.tolist(),
        "experts": experts,
    }
    return json.dumps(doc, indent=2)


def import_gprn(text: str) -> GPRnModel:
    """Rebuild an ensemble exported by :func:`export_gprn`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"ensemble document is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ValidationError("ensemble document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema version {version!r}")
    try:
        experts = []
        for e in doc["experts"]:
            hyper = gp.GPHyper(e["log_signal_var"],
                               np.asarray(e["log_lengthscales"], dtype=float),
                               e["log_noise_var"])
            feature_scaler = ColumnScaler(
                mean=np.asarray(e["feature_mean"], dtype=float),
                std=np.asarray(e["feature_std"], dtype=float))
            target_scaler = ColumnScaler(mean=np.float64(e["target_mean"]),
                                         std=np.float64(e["target_std"]))
            expert = gp._assemble(
                np.asarray(e["train_inputs"], dtype=float),
                np.asarray(e["train_targets"], dtype=float),
                feature_scaler, target_scaler, hyper, e["jitter"])
            experts.append((e["cell_id"], expert))
        return GPRnModel(experts=tuple(experts),
                         weights=np.asarray(doc["weights"], dtype=float),
                         epochs_used=int(doc["epochs_used"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed ensemble document: {exc!r}")
