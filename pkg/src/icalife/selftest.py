"""Dataset-free verification suite.

Checks the numerical core against independent oracles (dense GP algebra,
finite differences, Monte-Carlo mixtures, filter identities) and the full
pipeline against a synthetic fleet.  Runs without any measured data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ensemble, gp, ica
from .datamodel import generate_synthetic_fleet, label_fleet
from .errors import IcalifeError

logger = logging.getLogger(__name__)

SYNTH_SEED = 7
SYNTH_CELLS = 8


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: " \
               f"{self.detail}"


def _random_problem(rng, n, d):
    x = rng.uniform(-2, 2, size=(n, d)) * rng.uniform(0.5, 3)
    y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(n)
    hyper = gp.GPHyper(rng.uniform(-1, 1),
                       rng.uniform(-1, 1, size=d),
                       rng.uniform(-4, -1))
    return x, y, hyper


def check_gp_oracle(n_problems: int = 20) -> CheckResult:
    """Posterior and LML vs dense inversion / explicit determinant."""
    rng = np.random.default_rng(17)
    worst_post = 0.0
    worst_lml = 0.0
    for _ in range(n_problems):
        n, d = int(rng.integers(3, 11)), int(rng.integers(1, 4))
        x, y, hyper = _random_problem(rng, n, d)
        model = gp.fit_gp(x, y, hyper)
        xq = rng.uniform(-2, 2, size=(6, d))

        xs = model.train_inputs
        ys = model.train_targets
        k = gp.rbf_gram(xs, xs, hyper.signal_var, hyper.lengthscales)
        k += (hyper.noise_var + model.jitter) * np.eye(n)
        kinv = np.linalg.inv(k)
        ks = gp.rbf_gram(model.feature_scaler.transform(xq), xs,
                         hyper.signal_var, hyper.lengthscales)
        mean_s = ks @ kinv @ ys
        var_s = (hyper.signal_var - np.sum((ks @ kinv) * ks, axis=1)
                 + hyper.noise_var)
        t_std = float(model.target_scaler.std)
        mean = mean_s * t_std + float(model.target_scaler.mean)
        var = np.maximum(var_s, 0.0) * t_std ** 2

        got = gp.predict_batch(model, xq)
        worst_post = max(worst_post,
                         float(np.max(np.abs(got[0] - mean))),
                         float(np.max(np.abs(got[1] - var))))

        sign, logdet = np.linalg.slogdet(k)
        lml_ref = (-0.5 * ys @ kinv @ ys - 0.5 * logdet
                   - 0.5 * n * np.log(2 * np.pi))
        worst_lml = max(worst_lml,
                        abs(gp.log_marginal_likelihood(model) - lml_ref))
    passed = worst_post <= 1e-10 and worst_lml <= 1e-9
    return CheckResult(
        "gp_oracle", passed,
        f"worst posterior dev {worst_post:.2e} (tol 1e-10), "
        f"worst LML dev {worst_lml:.2e} (tol 1e-9), {n_problems} problems")


def check_gp_gradient(dims=(1, 2, 5), per_dim: int = 10) -> CheckResult:
    """Analytic LML gradient vs central finite differences."""
    rng = np.random.default_rng(23)
    h = 1e-5
    worst = 0.0
    for d in dims:
        for _ in range(per_dim):
            n = int(rng.integers(6, 14))
            x, y, hyper = _random_problem(rng, n, d)
            model = gp.fit_gp(x, y, hyper)
            analytic = gp.lml_gradient(model)
            theta = hyper.as_vector()
            fd = np.empty_like(analytic)
            for j in range(len(theta)):
                up, down = theta.copy(), theta.copy()
                up[j] += h
                down[j] -= h
                fd[j] = (gp.log_marginal_likelihood(
                             gp.fit_gp(x, y, gp.GPHyper.from_vector(up)))
                         - gp.log_marginal_likelihood(
                             gp.fit_gp(x, y, gp.GPHyper.from_vector(down)))
                         ) / (2 * h)
            rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-3)
            worst = max(worst, float(rel.max()))
    passed = worst <= 1e-4
    return CheckResult(
        "gp_gradient", passed,
        f"worst relative error {worst:.2e} (tol 1e-4), dims {list(dims)}")


def check_mixture_moments(n_mixtures: int = 10,
                          n_draws: int = 1_000_000) -> CheckResult:
    """Mixture mean/variance vs Monte-Carlo; exact decomposition identity."""
    rng = np.random.default_rng(29)
    worst_mc = 0.0
    worst_split = 0.0
    for _ in range(n_mixtures):
        means = rng.uniform(5, 15, size=5)
        variances = rng.uniform(0.5, 4, size=5)
        weights = np.full(5, 0.2)
        mean, epi, ale, total = ensemble.mixture_moments(means, variances,
                                                         weights)
        worst_split = max(worst_split,
                          abs(total - (epi + ale)) / max(total, 1.0))
        picks = rng.integers(0, 5, size=n_draws)
        draws = rng.normal(means[picks], np.sqrt(variances[picks]))
        worst_mc = max(worst_mc,
                       abs(draws.mean() - mean) / abs(mean),
                       abs(draws.var() - total) / total)
    passed = worst_mc <= 0.005 and worst_split <= 1e-9
    return CheckResult(
        "mixture_moments", passed,
        f"worst MC deviation {worst_mc:.2e} (tol 5e-3), "
        f"worst decomposition residual {worst_split:.2e} (tol 1e-9)")


def check_filter_identities() -> CheckResult:
    """Constant identity, in-band zero lag, reversal symmetry."""
    spec = ica.default_filter()
    n = 3000
    const_dev = float(np.max(np.abs(
        ica.zero_phase_filter(spec, np.full(n, 3.7)) - 3.7)))

    t = np.arange(n, dtype=float)
    wave = np.sin(2 * np.pi * 0.002 * t)
    out = ica.zero_phase_filter(spec, wave)
    inner = slice(300, n - 300)
    xc = np.correlate(out[inner] - out[inner].mean(),
                      wave[inner] - wave[inner].mean(), mode="full")
    lag = int(np.argmax(xc)) - (len(wave[inner]) - 1)

    rng = np.random.default_rng(31)
    noisy = np.cumsum(rng.standard_normal(n)) * 0.01 + 3.5
    rev_dev = float(np.max(np.abs(
        ica.zero_phase_filter(spec, noisy[::-1])[::-1]
        - ica.zero_phase_filter(spec, noisy))))

    passed = const_dev <= 1e-9 and lag == 0 and rev_dev <= 1e-9
    return CheckResult(
        "filter_identities", passed,
        f"constant dev {const_dev:.2e}, in-band lag {lag}, "
        f"reversal dev {rev_dev:.2e} (tol 1e-9)")


def check_charge_conservation(fleet) -> CheckResult:
    """Trapezoidal IC integral vs CC-segment charge throughput."""
    worst = 0.0
    for cell in fleet:
        for diag in (cell.diagnostics[0],
                     cell.diagnostics[len(cell.diagnostics) // 2],
                     cell.diagnostics[-1]):
            curve = ica.compute_ic_curve(diag)
            q = diag.charge_mah[ica.extract_cc_segment(diag)]
            throughput = float(q[-1] - q[0])
            integral = float(np.trapezoid(curve.ic_mah_per_v,
                                          curve.voltage_v))
            worst = max(worst, abs(integral - throughput) / throughput)
    passed = worst <= 0.02
    return CheckResult(
        "charge_conservation", passed,
        f"worst relative imbalance {worst:.2e} (tol 2e-2), "
        f"{len(fleet)} cells x 3 diagnostics")


def check_synthetic_correlation(fleet, features) -> CheckResult:
    """Peak IC tracks SoH within every synthetic cell."""
    worst = 1.0
    for cell in fleet:
        f1 = np.array([features[(cell.cell_id, d.cycle_number)].f1_ic_peak
                       for d in cell.diagnostics])
        rho = ica.spearman(f1, np.asarray(cell.soh_by_diag))
        worst = min(worst, rho)
    passed = worst >= 0.95
    return CheckResult(
        "synthetic_correlation", passed,
        f"min per-cell Spearman(F1, SoH) {worst:.4f} (floor 0.95), "
        f"{len(fleet)} cells")


def run_selftest(n_cells: int = SYNTH_CELLS,
                 seed: int = SYNTH_SEED) -> list[CheckResult]:
    """All checks, in a fixed order; never raises on a failing check."""
    results = [
        _guard(check_gp_oracle),
        _guard(check_gp_gradient),
        _guard(check_mixture_moments),
        _guard(check_filter_identities),
    ]
    try:
        fleet = label_fleet(generate_synthetic_fleet(n_cells, seed))
        features = ica.extract_fleet_features(fleet)
    except IcalifeError as exc:
        results.append(CheckResult("synthetic_fleet", False, str(exc)))
        return results
    results.append(_guard(check_charge_conservation, fleet))
    results.append(_guard(check_synthetic_correlation, fleet, features))
    return results


def _guard(check, *args) -> CheckResult:
    try:
        return check(*args)
    except IcalifeError as exc:
        return CheckResult(check.__name__.removeprefix("check_"), False,
                           f"raised: {exc}")
