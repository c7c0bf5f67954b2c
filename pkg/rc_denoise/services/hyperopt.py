"""
Hyperparameter Optimization Service

Derivative-free search over φ = (N, α, γ, ζ, p): a quasi-random (Sobol)
warm-up followed by proposals from a radial-basis-function surrogate fit to
the evaluation history (weighted surrogate/distance acquisition over local
perturbations of the incumbent plus uniform candidates). Pure random search
is selectable.
"""

import csv
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
from loguru import logger
from scipy.interpolate import RBFInterpolator
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from rc_denoise.exceptions import InvalidArgumentError, NoFeasiblePointError, NumericalError
from rc_denoise.models import EvalRecord, HyperParams, RidgeConfig, SearchSpace
from rc_denoise.runner import TaskRunner
from rc_denoise.services.training import (
    DenoisingDataset,
    fit_readout,
    prepare_reservoir,
    validation_nmse,
)

PARAMETERS = ("n_nodes", "leakage", "spectral_radius", "input_scaling", "connectivity")

WEIGHT_PATTERN = (0.3, 0.5, 0.8, 0.95)
SIGMA_MAX = 0.2
SIGMA_MIN = 0.2 * 0.5 ** 6
SUCCESS_TOLERANCE = 3


class ObjectiveResult(NamedTuple):
    loss: float
    ridge_lambda: Optional[float] = None


Objective = Callable[[HyperParams], Union[float, ObjectiveResult]]


@dataclass
class OptimizeResult:
    best: HyperParams
    best_loss: float
    history: List[EvalRecord]

    @property
    def best_record(self) -> EvalRecord:
        return min((r for r in self.history if not r.failed), key=lambda r: r.loss)


# MARK: - Objective

def objective(
    phi: HyperParams,
    train: Sequence[DenoisingDataset],
    validation: DenoisingDataset,
    ridge_config: RidgeConfig,
    seed: int = 0,
    bias: float = 0.0,
    washout: int = 100,
) -> ObjectiveResult:
    """Validation NMSE of a reservoir built from phi with a CV-selected readout"""
    try:
        esn = prepare_reservoir(phi, train, seed, bias=bias, washout=washout)
        trained, _ = fit_readout(esn, train, ridge_config)
        loss = validation_nmse(trained, validation)
    except NumericalError as e:
        logger.warning(f"Objective failed for {phi.model_dump()}: {e}")
        return ObjectiveResult(math.inf)
    return ObjectiveResult(loss, trained.ridge_lambda)


class ReservoirObjective:
    """Objective over a fixed dataset; averages the loss over reservoir seeds"""

    def __init__(
        self,
        train: Sequence[DenoisingDataset],
        validation: DenoisingDataset,
        ridge_config: RidgeConfig,
        seeds: Sequence[int] = (0,),
        bias: float = 0.0,
        washout: int = 100,
    ):
        self.train = tuple(train)
        self.validation = validation
        self.ridge_config = ridge_config
        self.seeds = tuple(seeds)
        self.bias = bias
        self.washout = washout

    def __call__(self, phi: HyperParams) -> ObjectiveResult:
        outcomes = [
            objective(phi, self.train, self.validation, self.ridge_config, seed, self.bias, self.washout)
            for seed in self.seeds
        ]
        if any(not math.isfinite(o.loss) for o in outcomes):
            return ObjectiveResult(math.inf)
        return ObjectiveResult(
            float(np.mean([o.loss for o in outcomes])),
            outcomes[0].ridge_lambda,
        )


# MARK: - Search space mapping

class _UnitMapping:
    """Maps the free dimensions of a SearchSpace onto the unit cube"""

    def __init__(self, space: SearchSpace):
        self.bounds = [tuple(getattr(space, name)) for name in PARAMETERS]
        self.free = [i for i, (lower, upper) in enumerate(self.bounds) if upper > lower]

    @property
    def dimension(self) -> int:
        return len(self.free)

    def to_hyper(self, unit: np.ndarray) -> HyperParams:
        values = {}
        for i, name in enumerate(PARAMETERS):
            lower, upper = self.bounds[i]
            if i in self.free:
                u = float(np.clip(unit[self.free.index(i)], 0.0, 1.0))
                value = lower + u * (upper - lower)
            else:
                value = lower
            if name == "n_nodes":
                value = int(round(value))
            values[name] = min(max(value, lower), upper)
        return HyperParams(**values)


# MARK: - Optimizer

def optimize(
    space: SearchSpace,
    objective: Objective,
    budget: int = 50,
    seed: int = 0,
    method: Literal["surrogate", "random"] = "surrogate",
    jobs: int = 1,
) -> OptimizeResult:
    """
    Minimize `objective` over `space` with `budget` evaluations

    Returns the best-seen φ and the full evaluation history. Failed
    evaluations (non-finite loss or numeric errors) count as +∞.
    """
    if budget < 1:
        raise InvalidArgumentError(f"budget must be at least 1, got {budget}")
    mapping = _UnitMapping(space)
    rng = np.random.default_rng(seed)
    history: List[EvalRecord] = []

    def evaluate(iteration: int, unit: np.ndarray) -> EvalRecord:
        phi = mapping.to_hyper(unit)
        started = time.perf_counter()
        try:
            outcome = objective(phi)
        except NumericalError as e:
            logger.warning(f"Evaluation {iteration} failed: {e}")
            outcome = ObjectiveResult(math.inf)
        if not isinstance(outcome, ObjectiveResult):
            outcome = ObjectiveResult(float(outcome))
        failed = not math.isfinite(outcome.loss)
        record = EvalRecord(
            iteration=iteration,
            phi=phi,
            loss=math.inf if failed else outcome.loss,
            ridge_lambda=outcome.ridge_lambda,
            seed=seed,
            seconds=time.perf_counter() - started,
            failed=failed,
        )
        logger.debug(f"eval {iteration}: loss={record.loss:.4e} phi={phi.model_dump()}")
        return record

    dimension = mapping.dimension
    if dimension == 0:
        history.append(evaluate(0, np.empty(0)))
        return _finish(history)

    n_warmup = budget if method == "random" else min(budget, math.ceil(budget / 4))
    if method == "random":
        warmup = rng.random((n_warmup, dimension))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sampler = qmc.Sobol(d=dimension, scramble=True, seed=int(rng.integers(2 ** 32)))
            warmup = sampler.random(n_warmup)

    runner = TaskRunner(jobs, log_level="DEBUG")
    records = runner.run({
        f"warm-up {i}": (lambda i=i: evaluate(i, warmup[i])) for i in range(n_warmup)
    })
    history.extend(records.values())
    points = [warmup[i] for i in range(n_warmup)]

    sigma = SIGMA_MAX
    fail_tolerance = max(dimension, 5)
    successes = failures = 0
    for iteration in range(n_warmup, budget):
        best_before = _best_loss(history)
        unit = _propose(np.asarray(points), history, sigma, iteration, rng)
        record = evaluate(iteration, unit)
        history.append(record)
        points.append(unit)

        if record.loss < best_before - 1e-3 * abs(best_before):
            successes, failures = successes + 1, 0
            logger.info(f"iter {iteration}: new best loss {record.loss:.4e}")
        else:
            successes, failures = 0, failures + 1
        if failures >= fail_tolerance:
            sigma, failures = max(sigma / 2.0, SIGMA_MIN), 0
        if successes >= SUCCESS_TOLERANCE:
            sigma, successes = min(sigma * 2.0, SIGMA_MAX), 0

    return _finish(history)


def _best_loss(history: List[EvalRecord]) -> float:
    return min((r.loss for r in history), default=math.inf)


def _finish(history: List[EvalRecord]) -> OptimizeResult:
    feasible = [r for r in history if not r.failed]
    if not feasible:
        raise NoFeasiblePointError(f"all {len(history)} evaluations failed")
    best = min(feasible, key=lambda r: r.loss)
    return OptimizeResult(best=best.phi, best_loss=best.loss, history=history)


def _propose(
    points: np.ndarray,
    history: List[EvalRecord],
    sigma: float,
    iteration: int,
    rng: np.random.Generator,
) -> np.ndarray:
    n_points, dimension = points.shape
    losses = np.array([r.loss for r in history])
    finite = np.isfinite(losses)
    if finite.sum() < dimension + 2:
        return rng.random(dimension)

    # median low-pass: large and failed values are capped at the median
    median = float(np.median(losses[finite]))
    values = np.where(finite, np.minimum(losses, median), median)
    try:
        surrogate = RBFInterpolator(points, values, kernel="thin_plate_spline", degree=1, smoothing=1e-10)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.debug(f"Surrogate fit failed ({e}); proposing a random point")
        return rng.random(dimension)

    incumbent = points[int(np.argmin(np.where(finite, losses, np.inf)))]
    n_candidates = min(100 * dimension, 5000)
    perturb = rng.random((n_candidates, dimension)) < min(1.0, 20.0 / dimension)
    perturb[np.arange(n_candidates), rng.integers(dimension, size=n_candidates)] = True
    local = incumbent + perturb * rng.normal(0.0, sigma, size=(n_candidates, dimension))
    local = np.abs(local)
    local = np.where(local > 1.0, 2.0 - local, local).clip(0.0, 1.0)
    candidates = np.vstack([local, rng.random((n_candidates, dimension))])

    distance = cdist(candidates, points).min(axis=1)
    candidates, distance = candidates[distance > 1e-6], distance[distance > 1e-6]
    if candidates.shape[0] == 0:
        return rng.random(dimension)

    predicted = surrogate(candidates)
    weight = WEIGHT_PATTERN[iteration % len(WEIGHT_PATTERN)]
    score = weight * _unit_scale(predicted) + (1.0 - weight) * (1.0 - _unit_scale(distance))
    return candidates[int(np.argmin(score))]


def _unit_scale(values: np.ndarray) -> np.ndarray:
    spread = values.max() - values.min()
    if spread <= 0:
        return np.zeros_like(values)
    return (values - values.min()) / spread


def write_history(history: Sequence[EvalRecord], path) -> Path:
    """CSV `iter,N,alpha,gamma,zeta,p,lambda,loss,seconds`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iter", "N", "alpha", "gamma", "zeta", "p", "lambda", "loss", "seconds"])
        for record in history:
            phi = record.phi
            writer.writerow([
                record.iteration,
                phi.n_nodes,
                format(phi.leakage, ".17g"),
                format(phi.spectral_radius, ".17g"),
                format(phi.input_scaling, ".17g"),
                format(phi.connectivity, ".17g"),
                "" if record.ridge_lambda is None else format(record.ridge_lambda, ".17g"),
                format(record.loss, ".17g"),
                f"{record.seconds:.3f}",
            ])
    return path
