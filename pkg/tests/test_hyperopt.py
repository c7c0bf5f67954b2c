import csv
import math

import pytest

from rc_denoise.exceptions import InvalidArgumentError, NoFeasiblePointError, NumericalError
from rc_denoise.models import HyperParams, RidgeConfig, SearchSpace
from rc_denoise.services.hyperopt import ObjectiveResult, ReservoirObjective, objective, optimize, write_history

# leakage and spectral radius free, everything else pinned
PLANE = SearchSpace(
    n_nodes=(50, 50),
    leakage=(0.01, 1.0),
    spectral_radius=(0.01, 1.0),
    input_scaling=(1.0, 1.0),
    connectivity=(0.3, 0.3),
)


def bowl(phi: HyperParams) -> float:
    return (phi.leakage - 0.5) ** 2 + (phi.spectral_radius - 0.3) ** 2


class TestOptimize:
    def test_finds_bowl_minimum(self):
        result = optimize(PLANE, bowl, budget=40, seed=0)
        assert len(result.history) == 40
        assert result.best_loss < 5e-3
        warmup_best = min(r.loss for r in result.history[:10])
        assert result.best_loss <= warmup_best

    def test_history_stays_in_space(self):
        result = optimize(PLANE, bowl, budget=20, seed=1)
        for record in result.history:
            assert PLANE.contains(record.phi)
            assert record.phi.n_nodes == 50

    def test_deterministic_per_seed(self):
        a = optimize(PLANE, bowl, budget=15, seed=3)
        b = optimize(PLANE, bowl, budget=15, seed=3)
        assert [r.phi for r in a.history] == [r.phi for r in b.history]
        assert a.best == b.best

    def test_random_search(self):
        result = optimize(PLANE, bowl, budget=12, seed=0, method="random")
        assert [r.iteration for r in result.history] == list(range(12))
        assert result.best_loss == min(r.loss for r in result.history)

    def test_integer_node_count(self):
        space = PLANE.model_copy(update={"n_nodes": (10, 20)})
        result = optimize(space, lambda phi: abs(phi.n_nodes - 17), budget=12, seed=0)
        assert all(isinstance(r.phi.n_nodes, int) for r in result.history)

    def test_zero_budget(self):
        with pytest.raises(InvalidArgumentError):
            optimize(PLANE, bowl, budget=0)

    def test_fully_pinned_space_evaluates_once(self):
        space = SearchSpace(
            n_nodes=(30, 30),
            leakage=(0.4, 0.4),
            spectral_radius=(0.7, 0.7),
            input_scaling=(1.0, 1.0),
            connectivity=(0.2, 0.2),
        )
        result = optimize(space, bowl, budget=25)
        assert len(result.history) == 1
        assert result.best == HyperParams(
            n_nodes=30, leakage=0.4, spectral_radius=0.7, input_scaling=1.0, connectivity=0.2
        )

    def test_all_failures(self):
        with pytest.raises(NoFeasiblePointError):
            optimize(PLANE, lambda phi: math.inf, budget=6)

    def test_numeric_errors_count_as_failures(self):
        def flaky(phi):
            if phi.leakage > 0.5:
                raise NumericalError("unstable")
            return ObjectiveResult(phi.leakage, ridge_lambda=1e-6)

        result = optimize(PLANE, flaky, budget=16, seed=2)
        failed = [r for r in result.history if r.failed]
        assert all(r.loss == math.inf for r in failed)
        assert result.best.leakage <= 0.5
        assert result.best_record.ridge_lambda == 1e-6

    def test_parallel_warmup_matches_serial(self):
        serial = optimize(PLANE, bowl, budget=8, seed=4, jobs=1)
        parallel = optimize(PLANE, bowl, budget=8, seed=4, jobs=4)
        assert [r.phi for r in serial.history] == [r.phi for r in parallel.history]


class TestHistoryCSV:
    def test_columns(self, tmp_path):
        result = optimize(PLANE, lambda phi: ObjectiveResult(bowl(phi), 1e-4), budget=5, seed=0)
        path = write_history(result.history, tmp_path / "history.csv")
        with open(path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["iter", "N", "alpha", "gamma", "zeta", "p", "lambda", "loss", "seconds"]
        assert len(rows) == 6
        assert rows[1][1] == "50"
        assert float(rows[1][6]) == 1e-4


class TestReservoirObjective:
    def test_validation_loss_is_finite(self, small_data):
        phi = HyperParams(n_nodes=40)
        outcome = objective(phi, small_data.split.train, small_data.split.validation, _ridge(), bias=0.5)
        assert math.isfinite(outcome.loss)
        assert outcome.ridge_lambda in _ridge().lambda_grid

    def test_seed_average(self, small_data):
        phi = HyperParams(n_nodes=40)
        ridge = _ridge()
        single = [
            objective(phi, small_data.split.train, small_data.split.validation, ridge, seed=s).loss
            for s in (0, 1)
        ]
        averaged = ReservoirObjective(small_data.split.train, small_data.split.validation, ridge, seeds=(0, 1))
        assert averaged(phi).loss == pytest.approx(sum(single) / 2)


def _ridge():
    return RidgeConfig(lambda_grid=[1e-8, 1e-6, 1e-4, 1e-2], folds=3)
