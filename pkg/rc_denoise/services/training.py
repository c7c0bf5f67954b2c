"""
Training Service - ridge readout, cross-validated λ selection and NMSE
"""

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import linalg

from rc_denoise.exceptions import (
    DegenerateSignalError,
    InvalidArgumentError,
    RankDeficiencyError,
    UntrainedModelError,
)
from rc_denoise.models import RidgeConfig
from rc_denoise.services.reservoir import EchoStateNetwork, build_reservoir, run
from rc_denoise.trajectory import Trajectory

ArrayOrTrajectory = Union[np.ndarray, Trajectory]


@dataclass(frozen=True)
class DenoisingDataset:
    """Noisy observed inputs paired with clean targets on the same grid"""

    inputs: Trajectory
    targets: Trajectory
    clean_inputs: Optional[Trajectory] = None

    def __post_init__(self):
        if self.inputs.n_steps != self.targets.n_steps:
            raise InvalidArgumentError(
                f"inputs have {self.inputs.n_steps} rows, targets {self.targets.n_steps}"
            )


@dataclass(frozen=True)
class DenoisingSplit:
    train: Tuple[DenoisingDataset, ...]
    validation: DenoisingDataset

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        layouts = {(d.inputs.channel_names, d.targets.channel_names) for d in (*self.train, self.validation)}
        if len(layouts) != 1:
            raise InvalidArgumentError("training and validation data must share channel layout")


@dataclass(frozen=True)
class LambdaSelection:
    ridge_lambda: float
    grid: np.ndarray
    scores: np.ndarray
    fold_scores: np.ndarray


# MARK: - Ridge regression

def ridge_fit(states, targets, ridge_lambda: float) -> np.ndarray:
    """W_out = (RᵀR + λI)⁻¹ RᵀŶ via a symmetric positive-definite solve"""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if states.shape[0] != targets.shape[0]:
        raise InvalidArgumentError(f"{states.shape[0]} state rows but {targets.shape[0]} target rows")
    if ridge_lambda < 0:
        raise InvalidArgumentError(f"ridge coefficient must be non-negative, got {ridge_lambda}")
    if ridge_lambda == 0 and np.linalg.matrix_rank(states) < states.shape[1]:
        raise RankDeficiencyError("state matrix is rank deficient; use a ridge coefficient λ > 0")
    gram = states.T @ states
    gram[np.diag_indices_from(gram)] += ridge_lambda
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", linalg.LinAlgWarning)
            weights = linalg.solve(gram, states.T @ targets, assume_a="pos")
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"ridge system not positive definite at λ={ridge_lambda:g}: {exc}") from exc
    if any(issubclass(w.category, linalg.LinAlgWarning) for w in caught):
        logger.warning(f"Ill-conditioned ridge solve at λ={ridge_lambda:g}")
    return weights


def select_lambda(states, targets, config: RidgeConfig) -> LambdaSelection:
    """
    Contiguous-block k-fold cross-validation over the rows of R_n

    λ* minimizes the mean held-out NMSE; ties go to the larger λ.
    """
    grid = np.asarray(config.lambda_grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgumentError("lambda grid is empty")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    n_rows = states.shape[0]
    if n_rows < config.folds:
        raise InvalidArgumentError(f"{n_rows} rows cannot form {config.folds} folds")

    blocks = np.array_split(np.arange(n_rows), config.folds)
    gram_total = states.T @ states
    cross_total = states.T @ targets
    fold_scores = np.full((grid.size, config.folds), np.inf)

    for k, rows in enumerate(blocks):
        held_states, held_targets = states[rows], targets[rows]
        held_norm = float(np.sum(held_targets ** 2))
        if held_norm == 0.0:
            continue
        gram = gram_total - held_states.T @ held_states
        cross = cross_total - held_states.T @ held_targets
        eigvals, eigvecs = np.linalg.eigh(gram)
        eigvals = np.clip(eigvals, 0.0, None)
        projected = eigvecs.T @ cross
        for g, lam in enumerate(grid):
            denominator = eigvals + lam
            if np.any(denominator <= 0):
                continue
            weights = eigvecs @ (projected / denominator[:, None])
            residual = held_targets - held_states @ weights
            score = float(np.sum(residual ** 2)) / held_norm
            if np.isfinite(score):
                fold_scores[g, k] = score

    scores = fold_scores.mean(axis=1)
    best = None
    for g, score in enumerate(scores):
        if np.isfinite(score) and (best is None or score <= scores[best]):
            best = g
    if best is None:
        raise RankDeficiencyError("no λ in the grid produced a finite cross-validation score")
    logger.debug(f"Selected λ={grid[best]:g} (CV NMSE {scores[best]:.3e})")
    return LambdaSelection(float(grid[best]), grid, scores, fold_scores)


def write_cv_report(selection: LambdaSelection, path) -> Path:
    """CSV `lambda,fold,nmse`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["lambda", "fold", "nmse"])
        for g, lam in enumerate(selection.grid):
            for fold, score in enumerate(selection.fold_scores[g]):
                writer.writerow([format(lam, ".17g"), fold, format(score, ".17g")])
    return path


# MARK: - Readout fitting

def prepare_reservoir(
    hyper,
    datasets: Sequence[DenoisingDataset],
    seed: int,
    bias: float = 0.0,
    washout: int = 100,
) -> EchoStateNetwork:
    """Build a reservoir for the datasets' channel layout with fitted input scales"""
    first = datasets[0]
    esn = build_reservoir(
        hyper,
        first.inputs.n_channels,
        seed,
        bias=bias,
        washout=washout,
        input_channels=first.inputs.channel_names,
        output_channels=first.targets.channel_names,
    )
    stacked = np.vstack([d.inputs.values for d in datasets])
    scale = stacked.std(axis=0)
    scale[scale == 0.0] = 1.0
    return replace(esn, input_scale=scale)


def collect_states(esn: EchoStateNetwork, datasets: Sequence[DenoisingDataset]):
    """Stacked post-washout states and targets; the reservoir restarts per dataset"""
    state_blocks, target_blocks = [], []
    for dataset in datasets:
        if dataset.inputs.n_steps <= esn.washout:
            raise InvalidArgumentError(
                f"dataset of {dataset.inputs.n_steps} rows is not longer than the washout ({esn.washout})"
            )
        state_blocks.append(run(esn, dataset.inputs)[esn.washout:])
        target_blocks.append(dataset.targets.values[esn.washout:])
    return np.vstack(state_blocks), np.vstack(target_blocks)


def fit_readout(
    esn: EchoStateNetwork,
    datasets: Sequence[DenoisingDataset],
    config: RidgeConfig,
) -> Tuple[EchoStateNetwork, Optional[LambdaSelection]]:
    """Fit W_out with a fixed λ or a cross-validated one (config.mode)"""
    states, targets = collect_states(esn, datasets)
    selection = None
    if config.mode == "fixed":
        ridge_lambda = config.ridge_lambda
    else:
        selection = select_lambda(states, targets, config)
        ridge_lambda = selection.ridge_lambda
    w_out = ridge_fit(states, targets, ridge_lambda)
    trained = replace(
        esn,
        w_out=w_out,
        ridge_lambda=ridge_lambda,
        input_channels=datasets[0].inputs.channel_names,
        output_channels=datasets[0].targets.channel_names,
    )
    return trained, selection


def predict(esn: EchoStateNetwork, inputs: Trajectory) -> Trajectory:
    """Y = R_n·W_out on the full time axis; washout length is in the metadata"""
    if not esn.is_trained:
        raise UntrainedModelError("reservoir has no trained readout")
    outputs = run(esn, inputs) @ esn.w_out
    names = esn.output_channels or tuple(f"y{i}" for i in range(outputs.shape[1]))
    return Trajectory(inputs.t0, inputs.dt, outputs, names, {"washout": esn.washout})


# MARK: - Error measures

def _matrix(value: ArrayOrTrajectory) -> np.ndarray:
    if isinstance(value, Trajectory):
        return value.values
    value = np.asarray(value, dtype=float)
    return value[:, None] if value.ndim == 1 else value


def nmse(prediction: ArrayOrTrajectory, truth: ArrayOrTrajectory, skip: int = 0) -> float:
    """‖Ŷ − Y‖² / ‖Ŷ‖² over all channels jointly (Ŷ is the truth)"""
    if isinstance(prediction, Trajectory) and isinstance(truth, Trajectory):
        if prediction.channel_names != truth.channel_names:
            raise InvalidArgumentError(
                f"channel mismatch: {prediction.channel_names} vs {truth.channel_names}"
            )
    predicted, actual = _matrix(prediction)[skip:], _matrix(truth)[skip:]
    if predicted.shape != actual.shape:
        raise InvalidArgumentError(f"shape mismatch: {predicted.shape} vs {actual.shape}")
    norm = float(np.sum(actual ** 2))
    if norm == 0.0:
        raise DegenerateSignalError("NMSE is undefined for an all-zero truth signal")
    return float(np.sum((actual - predicted) ** 2)) / norm


def validation_nmse(esn: EchoStateNetwork, dataset: DenoisingDataset) -> float:
    return nmse(predict(esn, dataset.inputs), dataset.targets, skip=esn.washout)
