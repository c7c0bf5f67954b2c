import csv

import numpy as np
import pytest

from rc_denoise.exceptions import DegenerateSignalError, InvalidArgumentError, RankDeficiencyError, UntrainedModelError
from rc_denoise.models import HyperParams, RidgeConfig
from rc_denoise.services.reservoir import build_reservoir
from rc_denoise.services.training import (
    DenoisingDataset,
    fit_readout,
    nmse,
    predict,
    prepare_reservoir,
    ridge_fit,
    select_lambda,
    validation_nmse,
    write_cv_report,
)
from rc_denoise.trajectory import Trajectory


class TestRidgeFit:
    def test_matches_normal_equations(self, rng):
        for _ in range(100):
            rows = int(rng.integers(60, 200))
            cols = int(rng.integers(1, 50))
            states = rng.standard_normal((rows, cols))
            targets = rng.standard_normal((rows, 3))
            lam = 10.0 ** rng.uniform(-6, 2)
            brute = np.linalg.inv(states.T @ states + lam * np.eye(cols)) @ states.T @ targets
            np.testing.assert_allclose(ridge_fit(states, targets, lam), brute, atol=1e-8)

    def test_identity_design(self):
        np.testing.assert_allclose(ridge_fit(np.eye(3), np.array([1.0, 2.0, 3.0]), 1.0), [[0.5], [1.0], [1.5]])

    def test_zero_lambda_exact_fit(self, rng):
        states = rng.standard_normal((40, 5))
        weights = rng.standard_normal((5, 2))
        np.testing.assert_allclose(ridge_fit(states, states @ weights, 0.0), weights, atol=1e-10)

    def test_zero_lambda_rank_deficient(self):
        states = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(RankDeficiencyError):
            ridge_fit(states, np.ones(10), 0.0)

    def test_negative_lambda(self):
        with pytest.raises(InvalidArgumentError):
            ridge_fit(np.eye(2), np.ones(2), -1.0)

    def test_row_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            ridge_fit(np.eye(3), np.ones(4), 1.0)


class TestRidgeInvariants:
    @staticmethod
    def loss(states, targets, weights, ridge_lambda):
        return np.sum((states @ weights - targets) ** 2) + ridge_lambda * np.sum(weights ** 2)

    def test_weights_minimize_penalized_loss(self, rng):
        for _ in range(20):
            states = rng.standard_normal((80, 12))
            targets = rng.standard_normal((80, 3))
            ridge_lambda = 10.0 ** rng.uniform(-4, 1)
            weights = ridge_fit(states, targets, ridge_lambda)
            best = self.loss(states, targets, weights, ridge_lambda)
            for _ in range(10):
                perturbed = weights + 1e-3 * rng.standard_normal(weights.shape)
                assert self.loss(states, targets, perturbed, ridge_lambda) >= best

    def test_weight_norm_shrinks_as_lambda_grows(self, rng):
        states = rng.standard_normal((100, 15))
        targets = rng.standard_normal((100, 2))
        norms = [np.linalg.norm(ridge_fit(states, targets, lam)) for lam in np.logspace(-6, 3, 19)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


class TestSelectLambda:
    def test_prefers_small_lambda_for_noiseless_linear_data(self, rng):
        states = rng.standard_normal((300, 10))
        targets = states @ rng.standard_normal((10, 2))
        config = RidgeConfig(lambda_grid=[1e-8, 1e-2, 1e2, 1e6], folds=5)
        selection = select_lambda(states, targets, config)
        assert selection.ridge_lambda == 1e-8
        assert selection.fold_scores.shape == (4, 5)
        assert np.all(np.diff(selection.scores) >= 0)

    def test_ties_go_to_larger_lambda(self):
        states = np.zeros((20, 3))
        targets = np.ones((20, 1))
        selection = select_lambda(states, targets, RidgeConfig(lambda_grid=[1e-3, 1.0, 10.0], folds=4))
        assert selection.ridge_lambda == 10.0

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            RidgeConfig(lambda_grid=[])
        with pytest.raises(ValueError):
            RidgeConfig(lambda_grid=[1.0, 0.1])

    def test_too_few_rows(self):
        with pytest.raises(InvalidArgumentError):
            select_lambda(np.ones((3, 2)), np.ones(3), RidgeConfig(folds=5))

    def test_cv_report(self, rng, tmp_path):
        states = rng.standard_normal((50, 4))
        selection = select_lambda(states, states[:, :1], RidgeConfig(lambda_grid=[1e-4, 1.0], folds=2))
        path = write_cv_report(selection, tmp_path / "cv.csv")
        with open(path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["lambda", "fold", "nmse"]
        assert len(rows) == 1 + 2 * 2


class TestNMSE:
    def test_perfect_prediction(self):
        assert nmse(np.ones((5, 2)), np.ones((5, 2))) == 0.0

    def test_zero_prediction_is_one(self):
        truth = np.arange(1.0, 11.0)
        assert nmse(np.zeros(10), truth) == pytest.approx(1.0)

    def test_skip_rows(self):
        truth = np.array([5.0, 1.0, 1.0])
        assert nmse(np.array([0.0, 1.0, 1.0]), truth, skip=1) == 0.0

    def test_zero_truth(self):
        with pytest.raises(DegenerateSignalError):
            nmse(np.ones(3), np.zeros(3))

    def test_channel_mismatch(self):
        a = Trajectory(0.0, 1.0, np.ones((3, 1)), ("x",))
        b = Trajectory(0.0, 1.0, np.ones((3, 1)), ("y",))
        with pytest.raises(InvalidArgumentError):
            nmse(a, b)


class TestReadout:
    def test_predict_requires_training(self, lorenz_short):
        esn = build_reservoir(HyperParams(n_nodes=20), 3, seed=0)
        with pytest.raises(UntrainedModelError):
            predict(esn, lorenz_short)

    def test_fit_and_predict_lorenz(self, lorenz_short):
        inputs = lorenz_short.select(["x", "y"])
        dataset = DenoisingDataset(inputs, lorenz_short)
        config = RidgeConfig(lambda_grid=[1e-8, 1e-6, 1e-4], folds=3)
        esn = prepare_reservoir(HyperParams(n_nodes=150), [dataset], seed=1, bias=0.5)
        trained, selection = fit_readout(esn, [dataset], config)
        assert trained.w_out.shape == (150, 3)
        assert trained.ridge_lambda == selection.ridge_lambda
        prediction = predict(trained, inputs)
        assert prediction.channel_names == ("x", "y", "z")
        assert prediction.metadata["washout"] == 100
        assert validation_nmse(trained, dataset) < 1e-2

    def test_fixed_lambda_mode(self, lorenz_short):
        dataset = DenoisingDataset(lorenz_short.select(["x"]), lorenz_short.select(["x"]))
        esn = prepare_reservoir(HyperParams(n_nodes=30), [dataset], seed=0)
        trained, selection = fit_readout(esn, [dataset], RidgeConfig(mode="fixed", ridge_lambda=1e-3))
        assert selection is None
        assert trained.ridge_lambda == 1e-3

    def test_input_scale_fitted(self, lorenz_short):
        dataset = DenoisingDataset(lorenz_short.select(["x", "y"]), lorenz_short)
        esn = prepare_reservoir(HyperParams(n_nodes=20), [dataset], seed=0)
        np.testing.assert_allclose(esn.input_scale, lorenz_short.select(["x", "y"]).values.std(axis=0))

    def test_zero_leakage_gives_unit_nmse(self, lorenz_short):
        dataset = DenoisingDataset(lorenz_short.select(["x", "y"]), lorenz_short)
        esn = prepare_reservoir(HyperParams(n_nodes=20, leakage=0.0), [dataset], seed=0, bias=0.5)
        trained, _ = fit_readout(esn, [dataset], RidgeConfig(lambda_grid=[1e-6, 1.0], folds=2))
        assert validation_nmse(trained, dataset) == pytest.approx(1.0)

    def test_dataset_too_short_for_washout(self):
        short = Trajectory(0.0, 1.0, np.ones((50, 1)), ("x",))
        esn = build_reservoir(HyperParams(n_nodes=10), 1, seed=0)
        with pytest.raises(InvalidArgumentError):
            fit_readout(esn, [DenoisingDataset(short, short)], RidgeConfig())
