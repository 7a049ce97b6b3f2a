"""GP regression core: kernel, fit, prediction, likelihood, ascent."""

import numpy as np
import pytest

from icalife import gp
from icalife.errors import NumericalError, ValidationError


def oracle_kernel(xa, xb, signal_var, lengthscales):
    """Pairwise ARD-RBF by explicit loops, independent of the implementation."""
    out = np.empty((len(xa), len(xb)))
    for i, a in enumerate(xa):
        for j, b in enumerate(xb):
            out[i, j] = signal_var * np.exp(
                -0.5 * np.sum(((a - b) / lengthscales) ** 2))
    return out


def oracle_posterior(model, x_raw):
    """Dense matrix-inverse evaluation of the posterior, raw target units."""
    xs = model.feature_scaler.transform(np.atleast_2d(x_raw))
    sv = model.hyper.signal_var
    ls = model.hyper.lengthscales
    k = oracle_kernel(model.train_inputs, model.train_inputs, sv, ls)
    reg = k + (model.hyper.noise_var + model.jitter) * np.eye(len(k))
    inv = np.linalg.inv(reg)
    ks = oracle_kernel(xs, model.train_inputs, sv, ls)
    mean_std = ks @ inv @ model.train_targets
    var_std = sv - np.sum((ks @ inv) * ks, axis=1) + model.hyper.noise_var
    y_std = float(model.target_scaler.std)
    return (mean_std * y_std + float(model.target_scaler.mean),
            var_std * y_std ** 2)


def random_problem(rng, n=None, d=None):
    n = n if n is not None else int(rng.integers(4, 11))
    d = d if d is not None else int(rng.integers(1, 4))
    x = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0)
    y = rng.standard_normal(n) * rng.uniform(0.5, 4.0) + rng.uniform(-2, 2)
    hyper = gp.GPHyper(rng.uniform(-1, 1),
                       rng.uniform(-1, 1, size=d),
                       rng.uniform(-3, -1))
    return x, y, hyper


class TestKernel:
    def test_zero_distance_gives_signal_var(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            _, _, hyper = random_problem(rng, n=4)
            a = rng.standard_normal(hyper.n_dims)
            assert gp.kernel_rbf_ard(a, a, hyper) == hyper.signal_var

    def test_unit_problem_closed_form(self):
        hyper = gp.GPHyper(0.0, np.zeros(1), -2.0)
        k = gp.kernel_rbf_ard(np.array([0.0]), np.array([1.0]), hyper)
        assert k == pytest.approx(np.exp(-0.5), abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        hyper = gp.GPHyper(0.3, rng.uniform(-1, 1, size=3), -1.0)
        for _ in range(100):
            a = rng.standard_normal(3)
            b = rng.standard_normal(3)
            assert gp.kernel_rbf_ard(a, b, hyper) == gp.kernel_rbf_ard(b, a, hyper)

    def test_dimension_mismatch_rejected(self):
        hyper = gp.GPHyper(0.0, np.zeros(2), -2.0)
        with pytest.raises(ValidationError):
            gp.kernel_rbf_ard(np.zeros(3), np.zeros(2), hyper)


class TestHyper:
    def test_default_start(self):
        hyper = gp.default_hyper(4)
        assert hyper.log_signal_var == 0.0
        assert np.all(hyper.log_lengthscales == 0.0)
        assert hyper.log_noise_var == -2.0

    def test_vector_round_trip(self):
        hyper = gp.GPHyper(0.7, np.array([-0.2, 1.1]), -2.5)
        back = gp.GPHyper.from_vector(hyper.as_vector())
        assert np.array_equal(back.as_vector(), hyper.as_vector())

    @pytest.mark.parametrize("bad", [np.inf, -np.inf, np.nan])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValidationError):
            gp.GPHyper(bad, np.zeros(1), -2.0)
        with pytest.raises(ValidationError):
            gp.GPHyper(0.0, np.array([bad]), -2.0)


class TestFit:
    def test_single_point_cholesky(self):
        hyper = gp.GPHyper(np.log(0.7), np.zeros(1), np.log(0.2))
        model = gp.fit_gp(np.array([[1.3]]), np.array([2.0]), hyper)
        expected = np.sqrt(0.7 + 0.2 + model.jitter)
        assert model.chol_factor.shape == (1, 1)
        assert model.chol_factor[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_factorization_invariants(self):
        rng = np.random.default_rng(11)
        x, y, hyper = random_problem(rng, n=10, d=3)
        model = gp.fit_gp(x, y, hyper)
        k = oracle_kernel(model.train_inputs, model.train_inputs,
                          hyper.signal_var, hyper.lengthscales)
        reg = k + (hyper.noise_var + model.jitter) * np.eye(10)
        recon = model.chol_factor @ model.chol_factor.T
        assert (np.linalg.norm(recon - reg) / np.linalg.norm(reg)) < 1e-8
        assert np.allclose(reg @ model.alpha, model.train_targets, atol=1e-8)

    def test_duplicate_rows_escalate_jitter(self):
        x = np.array([[0.3, 1.0], [0.3, 1.0], [0.3, 1.0], [1.7, -0.4]])
        y = np.array([1.0, 1.0, 1.0, 2.0])
        hyper = gp.GPHyper(0.0, np.zeros(2), np.log(1e-300))
        model = gp.fit_gp(x, y, hyper, jitter=1e-30)
        assert model.jitter > 1e-30
        recon = model.chol_factor @ model.chol_factor.T
        k = oracle_kernel(model.train_inputs, model.train_inputs, 1.0,
                          np.ones(2))
        reg = k + (hyper.noise_var + model.jitter) * np.eye(4)
        assert (np.linalg.norm(recon - reg) / np.linalg.norm(reg)) < 1e-8

    def test_max_jitter_exhausted(self):
        x = np.array([[0.3], [0.3], [0.3], [1.7]])
        y = np.array([1.0, 1.0, 1.0, 2.0])
        hyper = gp.GPHyper(np.log(1e20), np.zeros(1), np.log(1e-300))
        with pytest.raises(NumericalError, match="maximum jitter"):
            gp.fit_gp(x, y, hyper)

    def test_zero_variance_feature_scales_by_one(self, caplog):
        x = np.column_stack([np.full(6, 2.5), np.arange(6.0)])
        y = np.arange(6.0)
        with caplog.at_level("WARNING", logger="icalife.scaling"):
            model = gp.fit_gp(x, y)
        assert "zero-variance" in caplog.text
        assert float(model.feature_scaler.std[0]) == 1.0

    @pytest.mark.parametrize("x, y", [
        (np.empty((0, 2)), np.empty(0)),
        (np.ones((3, 2)), np.ones(4)),
        (np.array([[np.nan, 1.0]]), np.ones(1)),
        (np.ones((2, 1)), np.array([1.0, np.inf])),
    ])
    def test_bad_training_arrays(self, x, y):
        with pytest.raises(ValidationError):
            gp.fit_gp(x, y)

    def test_hyper_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            gp.fit_gp(np.ones((3, 2)), np.arange(3.0), gp.default_hyper(3))


class TestPredict:
    def test_interpolation_limit(self):
        rng = np.random.default_rng(21)
        x = rng.uniform(0, 4, size=(8, 1))
        y = np.cos(x[:, 0])
        hyper = gp.GPHyper(0.0, np.zeros(1), np.log(1e-12))
        model = gp.fit_gp(x, y, hyper)
        y_scale = float(model.target_scaler.std)
        for i in range(8):
            pred = gp.predict(model, x[i])
            assert abs(pred.mean - y[i]) <= 1e-4 * y_scale

    def test_prior_reversion_far_from_data(self):
        rng = np.random.default_rng(22)
        x, y, hyper = random_problem(rng, n=6, d=2)
        model = gp.fit_gp(x, y, hyper)
        far = x.max(axis=0) + 50 * model.feature_scaler.std * np.max(
            hyper.lengthscales)
        pred = gp.predict(model, far)
        y_std = float(model.target_scaler.std)
        prior_var = (hyper.signal_var + hyper.noise_var) * y_std ** 2
        assert pred.mean == pytest.approx(float(model.target_scaler.mean),
                                          abs=1e-10 * y_std)
        assert pred.variance == pytest.approx(prior_var, rel=1e-12)

    def test_dense_oracle_small_problem(self):
        rng = np.random.default_rng(23)
        x = np.sort(rng.uniform(0, 5, size=(5, 1)), axis=0)
        y = np.sin(x[:, 0])
        model = gp.fit_gp(x, y, gp.GPHyper(0.2, np.array([-0.3]), -2.3))
        grid = np.linspace(-1.0, 6.0, 40)[:, None]
        mean, var = gp.predict_batch(model, grid)
        mean_o, var_o = oracle_posterior(model, grid)
        assert np.allclose(mean, mean_o, atol=1e-10, rtol=0)
        assert np.allclose(var, var_o, atol=1e-10, rtol=0)

    def test_non_finite_input_rejected(self):
        model = gp.fit_gp(np.arange(4.0)[:, None], np.arange(4.0))
        with pytest.raises(ValidationError):
            gp.predict(model, np.array([np.nan]))

    def test_posterior_variance_at_most_prior(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            x, y, hyper = random_problem(rng)
            model = gp.fit_gp(x, y, hyper)
            grid = rng.standard_normal((30, x.shape[1])) * 3
            _, var = gp.predict_batch(model, grid)
            y_var = float(model.target_scaler.std) ** 2
            prior = (hyper.signal_var + hyper.noise_var) * y_var
            assert np.all(var <= prior + 1e-9 * y_var)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(25)
        x, y, hyper = random_problem(rng, n=9, d=2)
        perm = rng.permutation(9)
        model_a = gp.fit_gp(x, y, hyper)
        model_b = gp.fit_gp(x[perm], y[perm], hyper)
        grid = rng.standard_normal((20, 2))
        mean_a, var_a = gp.predict_batch(model_a, grid)
        mean_b, var_b = gp.predict_batch(model_b, grid)
        assert np.allclose(mean_a, mean_b, atol=1e-10, rtol=0)
        assert np.allclose(var_a, var_b, atol=1e-10, rtol=0)

    def test_target_affine_equivariance(self):
        rng = np.random.default_rng(26)
        x, y, hyper = random_problem(rng, n=8, d=2)
        grid = rng.standard_normal((15, 2))
        base_mean, base_var = gp.predict_batch(gp.fit_gp(x, y, hyper), grid)
        a, b = 3.5, -2.0
        mean, var = gp.predict_batch(gp.fit_gp(x, a * y + b, hyper), grid)
        assert np.allclose(mean, a * base_mean + b, rtol=1e-9)
        assert np.allclose(var, a ** 2 * base_var, rtol=1e-9)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(27)
        x, y, hyper = random_problem(rng, n=7, d=3)
        model = gp.fit_gp(x, y, hyper)
        grid = rng.standard_normal((5, 3))
        means, variances = gp.predict_batch(model, grid)
        for i in range(5):
            pred = gp.predict(model, grid[i])
            assert pred.mean == pytest.approx(means[i], rel=1e-13)
            assert pred.variance == pytest.approx(variances[i], rel=1e-13)

    def test_negative_variance_rejected_at_construction(self):
        with pytest.raises(ValidationError):
            gp.PredictiveDistribution(mean=0.0, variance=-1e-9)


class TestLogMarginalLikelihood:
    def test_single_standard_normal_point(self):
        hyper = gp.GPHyper(np.log(0.5), np.zeros(1), np.log(0.5))
        model = gp.fit_gp(np.array([[0.0]]), np.array([0.0]), hyper)
        expected = -0.5 * np.log(2 * np.pi)
        assert gp.log_marginal_likelihood(model) == pytest.approx(expected,
                                                                  abs=1e-5)

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(31)
        x, y, hyper = random_problem(rng, n=8, d=2)
        perm = rng.permutation(8)
        lml_a = gp.log_marginal_likelihood(gp.fit_gp(x, y, hyper))
        lml_b = gp.log_marginal_likelihood(gp.fit_gp(x[perm], y[perm], hyper))
        assert lml_a == pytest.approx(lml_b, abs=1e-9)

    def test_dense_determinant_formula(self):
        rng = np.random.default_rng(32)
        x, y, hyper = random_problem(rng, n=8, d=2)
        model = gp.fit_gp(x, y, hyper)
        k = oracle_kernel(model.train_inputs, model.train_inputs,
                          hyper.signal_var, hyper.lengthscales)
        reg = k + (hyper.noise_var + model.jitter) * np.eye(8)
        ys = model.train_targets
        _, logdet = np.linalg.slogdet(reg)
        expected = (-0.5 * ys @ np.linalg.inv(reg) @ ys - 0.5 * logdet
                    - 4.0 * np.log(2 * np.pi))
        assert gp.log_marginal_likelihood(model) == pytest.approx(expected,
                                                                  abs=1e-9)


def packed_lml(x, y, theta):
    return gp.log_marginal_likelihood(
        gp.fit_gp(x, y, gp.GPHyper.from_vector(theta)))


class TestGradient:
    @pytest.mark.parametrize("d", [1, 2, 5])
    def test_matches_central_differences(self, d):
        rng = np.random.default_rng(40 + d)
        h = 1e-5
        for _ in range(10):
            x, y, hyper = random_problem(rng, n=int(rng.integers(5, 9)), d=d)
            model = gp.fit_gp(x, y, hyper)
            analytic = gp.lml_gradient(model)
            theta = hyper.as_vector()
            for j in range(len(theta)):
                step = np.zeros_like(theta)
                step[j] = h
                fd = (packed_lml(x, y, theta + step)
                      - packed_lml(x, y, theta - step)) / (2 * h)
                rel = abs(analytic[j] - fd) / max(abs(fd), 1e-3)
                assert rel <= 1e-4

    def test_vanishes_at_optimum(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 3, size=(25, 1))
        y = np.sin(1.5 * x[:, 0]) + 0.05 * rng.standard_normal(25)
        coarse, _ = gp.optimize_hyperparams(x, y, steps=300)
        fine, _ = gp.optimize_hyperparams(x, y, init=coarse, steps=400,
                                          learn_rate=0.002)
        grad = gp.lml_gradient(gp.fit_gp(x, y, fine))
        assert np.linalg.norm(grad) <= 1e-3

    def test_deterministic(self):
        rng = np.random.default_rng(42)
        x, y, hyper = random_problem(rng, n=6, d=2)
        model = gp.fit_gp(x, y, hyper)
        assert np.array_equal(gp.lml_gradient(model), gp.lml_gradient(model))


class TestOptimize:
    def test_zero_steps_returns_init(self):
        rng = np.random.default_rng(50)
        x, y, hyper = random_problem(rng, n=6, d=2)
        out, trace = gp.optimize_hyperparams(x, y, init=hyper, steps=0)
        assert out is hyper
        assert len(trace) == 1

    def test_ascent_property(self):
        violations = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            x, y, _ = random_problem(rng)
            _, trace = gp.optimize_hyperparams(x, y, steps=50)
            if trace[-1] < trace[0]:
                violations.append((x, y))
        # a couple of overshoots are tolerated; they must vanish at half rate
        assert len(violations) <= 2
        for x, y in violations:
            _, trace = gp.optimize_hyperparams(x, y, steps=50,
                                               learn_rate=0.025)
            assert trace[-1] >= trace[0]

    def test_recovers_known_lengthscale(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 3, size=(40, 1))
        true_k = gp.rbf_gram(x, x, 1.0, np.array([0.5])) + 0.01 * np.eye(40)
        y = np.linalg.cholesky(true_k) @ rng.standard_normal(40)
        hyper, _ = gp.optimize_hyperparams(x, y, steps=500)
        # the model sees standardized inputs, so compare in those units
        true_std_units = 0.5 / x.std()
        ratio = hyper.lengthscales[0] / true_std_units
        assert 0.5 <= ratio <= 2.0

    def test_trace_final_entry_matches_returned_hyper(self):
        rng = np.random.default_rng(51)
        x, y, _ = random_problem(rng, n=7, d=1)
        hyper, trace = gp.optimize_hyperparams(x, y, steps=25)
        assert len(trace) == 26
        final = gp.log_marginal_likelihood(gp.fit_gp(x, y, hyper))
        assert trace[-1] == final

    def test_divergence_aborts_with_step_context(self):
        rng = np.random.default_rng(52)
        x, y, _ = random_problem(rng, n=6, d=1)
        with pytest.raises(NumericalError, match="step"):
            gp.optimize_hyperparams(x, y, steps=50, learn_rate=1e6)

    @pytest.mark.parametrize("kwargs", [
        {"steps": -1},
        {"steps": 10, "learn_rate": 0.0},
    ])
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValidationError):
            gp.optimize_hyperparams(np.ones((3, 1)), np.arange(3.0), **kwargs)
