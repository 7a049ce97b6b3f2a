"""Expert ensemble: training, mixture moments, epoch tuning, round trip."""

import numpy as np
import pytest

from icalife import ensemble, gp
from icalife.errors import TrainingError, ValidationError


def make_cell_data(rng, n_cells, n=8, d=2):
    data = {}
    for i in range(n_cells):
        x = rng.uniform(0, 3, size=(n, d))
        y = np.sin(x[:, 0]) + 0.3 * i + 0.05 * rng.standard_normal(n)
        data[f"cell{i}"] = (x, y)
    return data


@pytest.fixture(scope="module")
def trio():
    rng = np.random.default_rng(70)
    return make_cell_data(rng, 3)


class TestTraining:
    def test_single_expert_degenerate(self, trio):
        data = {"cell0": trio["cell0"]}
        model = ensemble.train_gprn(data, epochs=5)
        x_star = np.array([1.0, 2.0])
        mix = ensemble.predict_mixture(model, x_star)
        single = gp.predict(model.experts[0][1], x_star)
        assert mix.mean == single.mean
        assert mix.variance == single.variance
        assert mix.aleatoric == 0.0

    def test_six_cells_uniform_weights(self):
        rng = np.random.default_rng(71)
        model = ensemble.train_gprn(make_cell_data(rng, 6, n=5), epochs=0)
        assert model.n_experts == 6
        assert np.allclose(model.weights, 1.0 / 6.0, atol=1e-15)
        assert abs(model.weights.sum() - 1.0) <= 1e-12

    def test_zero_epochs_keeps_default_hyper(self, trio):
        model = ensemble.train_gprn(trio, epochs=0)
        for _, expert in model.experts:
            assert np.array_equal(expert.hyper.as_vector(),
                                  gp.default_hyper(2).as_vector())

    def test_deterministic_for_same_data_order(self, trio):
        a = ensemble.train_gprn(trio, epochs=10)
        b = ensemble.train_gprn(trio, epochs=10)
        x_star = np.array([0.5, 1.5])
        pa = ensemble.predict_mixture(a, x_star)
        pb = ensemble.predict_mixture(b, x_star)
        assert pa.mean == pb.mean
        assert pa.variance == pb.variance

    def test_undersized_cell_rejected(self, trio):
        data = dict(trio)
        data["runt"] = (np.array([[1.0, 1.0]]), np.array([1.0]))
        with pytest.raises(ValidationError, match="runt"):
            ensemble.train_gprn(data, epochs=0)

    def test_expert_failure_names_cell(self, trio):
        data = dict(trio)
        x_bad = np.array([[1.0, np.inf], [2.0, 1.0]])
        data["broken"] = (x_bad, np.array([1.0, 2.0]))
        with pytest.raises(TrainingError, match="broken"):
            ensemble.train_gprn(data, epochs=0)

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValidationError):
            ensemble.train_gprn({}, epochs=0)

    @pytest.mark.parametrize("weights", [
        np.array([0.5, 0.6]),
        np.array([-0.1, 1.1]),
        np.array([1.0]),
    ])
    def test_weight_validation(self, trio, weights):
        model = ensemble.train_gprn(trio, epochs=0)
        experts = model.experts[:2]
        with pytest.raises(ValidationError):
            ensemble.GPRnModel(experts=experts, weights=weights,
                               epochs_used=0)


class TestMixtureMoments:
    def test_two_expert_hand_case(self):
        mean, epi, ale, var = ensemble.mixture_moments(
            [100.0, 200.0], [0.0, 0.0], [0.5, 0.5])
        assert mean == 150.0
        assert epi == 0.0
        assert ale == 2500.0
        assert var == 2500.0

    def test_agreeing_experts_zero_aleatoric(self, trio):
        # the same cell twice gives bitwise-identical expert means
        data = {"a": trio["cell0"], "b": trio["cell0"]}
        model = ensemble.train_gprn(data, epochs=3)
        mix = ensemble.predict_mixture(model, np.array([1.2, 0.4]))
        assert mix.aleatoric <= 1e-9 * max(mix.variance, 1.0)
        assert mix.expert_means[0] == mix.expert_means[1]

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            means = rng.uniform(5.0, 15.0, size=5)
            variances = rng.uniform(0.5, 4.0, size=5)
            weights = np.full(5, 0.2)
            mean, _, _, var = ensemble.mixture_moments(means, variances,
                                                       weights)
            idx = rng.integers(0, 5, size=1_000_000)
            draws = (means[idx] + np.sqrt(variances[idx])
                     * rng.standard_normal(1_000_000))
            assert abs(draws.mean() - mean) / abs(mean) <= 0.005
            assert abs(draws.var() - var) / var <= 0.005

    def test_decomposition_identity_everywhere(self, trio):
        model = ensemble.train_gprn(trio, epochs=5)
        rng = np.random.default_rng(72)
        for _ in range(25):
            mix = ensemble.predict_mixture(model, rng.uniform(0, 3, size=2))
            residual = mix.variance - (mix.epistemic + mix.aleatoric)
            assert abs(residual) <= 1e-9 * max(mix.variance, 1.0)

    def test_mean_is_convex_combination(self, trio):
        model = ensemble.train_gprn(trio, epochs=5)
        rng = np.random.default_rng(73)
        for _ in range(25):
            mix = ensemble.predict_mixture(model, rng.uniform(-1, 4, size=2))
            assert mix.expert_means.min() <= mix.mean <= mix.expert_means.max()

    def test_expert_ordering_invariance(self, trio):
        forward = ensemble.train_gprn(trio, epochs=4)
        backward = ensemble.train_gprn(dict(reversed(trio.items())), epochs=4)
        x_star = np.array([2.0, 1.0])
        a = ensemble.predict_mixture(forward, x_star)
        b = ensemble.predict_mixture(backward, x_star)
        assert a.mean == pytest.approx(b.mean, abs=1e-12)
        assert a.variance == pytest.approx(b.variance, abs=1e-12)

    def test_removing_mean_matching_expert_keeps_moments(self):
        means = [100.0, 200.0, 150.0]
        variances = [30.0, 10.0, 20.0]
        full = ensemble.mixture_moments(means, variances, [1 / 3] * 3)
        reduced = ensemble.mixture_moments(means[:2], variances[:2],
                                           [0.5, 0.5])
        assert reduced[0] == pytest.approx(full[0], rel=1e-12)
        assert reduced[1] == pytest.approx(full[1], rel=1e-12)

    def test_batch_matches_pointwise(self, trio):
        model = ensemble.train_gprn(trio, epochs=3)
        rng = np.random.default_rng(74)
        grid = rng.uniform(0, 3, size=(6, 2))
        means, variances = ensemble.mixture_batch(model, grid)
        for i in range(6):
            mix = ensemble.predict_mixture(model, grid[i])
            assert means[i] == pytest.approx(mix.mean, rel=1e-12)
            assert variances[i] == pytest.approx(mix.variance, rel=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            ensemble.mixture_moments([1.0, 2.0], [1.0], [0.5, 0.5])


class TestTuneEpochs:
    def test_singleton_candidate(self, trio):
        assert ensemble.tune_epochs(trio, [20]) == 20

    def test_empty_candidates_rejected(self, trio):
        with pytest.raises(ValidationError):
            ensemble.tune_epochs(trio, [])

    def test_tie_prefers_fewer_epochs(self):
        # constant targets are fitted exactly at any budget, so all scores tie
        x = np.arange(6.0)[:, None]
        data = {"a": (x, np.full(6, 5.0)), "b": (x, np.full(6, 7.0))}
        assert ensemble.tune_epochs(data, [50, 5, 20]) == 5

    def test_selects_mae_minimizer(self, trio):
        candidates = [0, 10]
        sets = [tuple(trio)]
        chosen = ensemble.tune_epochs(trio, candidates, train_cell_sets=sets)
        maes = {}
        for epochs in candidates:
            model = ensemble.train_gprn(trio, epochs)
            errors = []
            for cell, (x, y) in trio.items():
                pred, _ = ensemble.mixture_batch(model, x)
                errors.extend(np.abs(pred - y))
            maes[epochs] = np.mean(errors)
        assert chosen == min(candidates, key=lambda e: (maes[e], e))

    def test_deterministic(self, trio):
        sets = [("cell0", "cell1"), ("cell1", "cell2"), ("cell0", "cell2")]
        first = ensemble.tune_epochs(trio, [0, 5, 15], train_cell_sets=sets)
        second = ensemble.tune_epochs(trio, [0, 5, 15], train_cell_sets=sets)
        assert first == second


class TestRoundTrip:
    def test_export_import_preserves_predictions(self, trio):
        model = ensemble.train_gprn(trio, epochs=8)
        doc = ensemble.export_gprn(model)
        back = ensemble.import_gprn(doc)
        assert back.epochs_used == model.epochs_used
        assert back.cell_ids == model.cell_ids
        rng = np.random.default_rng(75)
        for _ in range(10):
            x_star = rng.uniform(0, 3, size=2)
            a = ensemble.predict_mixture(model, x_star)
            b = ensemble.predict_mixture(back, x_star)
            assert a.mean == b.mean
            assert a.variance == b.variance

    def test_export_flags_noise_convention(self, trio):
        import json

        doc = json.loads(ensemble.export_gprn(ensemble.train_gprn(trio, 0)))
        assert doc["schema_version"] == ensemble.SCHEMA_VERSION
        assert doc["expert_variance_includes_noise"] is True

    def test_unknown_schema_version_rejected(self, trio):
        import json

        doc = json.loads(ensemble.export_gprn(ensemble.train_gprn(trio, 0)))
        doc["schema_version"] = 99
        with pytest.raises(ValidationError, match="schema"):
            ensemble.import_gprn(json.dumps(doc))

    @pytest.mark.parametrize("text", ["{not json", "[]", '{"schema_version": 1}'])
    def test_malformed_documents_rejected(self, text):
        with pytest.raises(ValidationError):
            ensemble.import_gprn(text)
