"""
EKF Service - discrete-time Extended Kalman Filter baseline

Predict:  x⁻ = g(x, u),  P⁻ = F P Fᵀ + Q
Update:   K = P⁻Hᵀ(H P⁻ Hᵀ + R)⁻¹,  x⁺ = x⁻ + K(z − h(x⁻, u)),  P⁺ = P⁻ − K H P⁻
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy import linalg

from rc_denoise.exceptions import InvalidArgumentError, NumericalError, SingularityError
from rc_denoise.models import LorenzParams
from rc_denoise.runner import TaskRunner
from rc_denoise.services.dynamics import (
    LORENZ_CHANNELS,
    lorenz_jacobian,
    lorenz_rhs,
    rk4_step,
    rk4_step_jacobian,
)
from rc_denoise.trajectory import Trajectory

Map = Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
JacobianMode = Literal["analytic", "finite-difference"]

DEFAULT_EPS = 1e-6
PROCESS_NOISE_GRID = tuple(10.0 ** k for k in range(-6, 1))
PSD_TOLERANCE = 1e-10


def _symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
        raise InvalidArgumentError(f"{name} must be symmetric")
    return matrix


@dataclass(frozen=True)
class StateSpaceModel:
    """
    Nonlinear state-space model x_k = g(x_{k−1}, u) + w, z_k = h(x_k, u) + v

    With jacobian_mode "analytic" the Jacobian callables are required;
    otherwise F and H are central finite differences with step
    eps·(|x_j| + 1).
    """

    transition: Map
    observation: Map
    process_noise: np.ndarray
    measurement_noise: np.ndarray
    transition_jacobian: Optional[Map] = None
    observation_jacobian: Optional[Map] = None
    jacobian_mode: JacobianMode = "finite-difference"
    eps: float = DEFAULT_EPS
    state_names: Tuple[str, ...] = ()

    def __post_init__(self):
        q = _symmetric(self.process_noise, "Q")
        r = _symmetric(self.measurement_noise, "R")
        if np.linalg.eigvalsh(q).min() < -PSD_TOLERANCE:
            raise InvalidArgumentError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise InvalidArgumentError("R must be positive definite")
        if self.jacobian_mode == "analytic" and (
            self.transition_jacobian is None or self.observation_jacobian is None
        ):
            raise InvalidArgumentError("analytic mode needs transition and observation Jacobians")
        if not self.eps > 0:
            raise InvalidArgumentError(f"eps must be positive, got {self.eps}")
        object.__setattr__(self, "process_noise", q)
        object.__setattr__(self, "measurement_noise", r)
        object.__setattr__(self, "state_names", tuple(self.state_names))

    @property
    def n_states(self) -> int:
        return self.process_noise.shape[0]

    def f_matrix(self, x: np.ndarray, u=None) -> np.ndarray:
        if self.jacobian_mode == "analytic":
            return np.atleast_2d(self.transition_jacobian(x, u))
        return numerical_jacobian(self.transition, x, u, self.eps, scaled=True)

    def h_matrix(self, x: np.ndarray, u=None) -> np.ndarray:
        if self.jacobian_mode == "analytic":
            return np.atleast_2d(self.observation_jacobian(x, u))
        return numerical_jacobian(self.observation, x, u, self.eps, scaled=True)


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    innovation: Optional[np.ndarray] = None
    innovation_covariance: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FilterResult:
    estimates: Trajectory
    p_diagonal: np.ndarray
    innovations: np.ndarray
    innovation_variances: np.ndarray
    final: FilterState = field(repr=False)

    @property
    def normalized_innovations(self) -> np.ndarray:
        return self.innovations / np.sqrt(self.innovation_variances)


# MARK: - Jacobians

def numerical_jacobian(
    fn: Map,
    x,
    u=None,
    eps: float = DEFAULT_EPS,
    scaled: bool = False,
) -> np.ndarray:
    """
    Central-difference Jacobian of fn at x

    Column j is (fn(x + h·e_j) − fn(x − h·e_j)) / 2h with h = eps, or
    h = eps·(|x_j| + 1) when `scaled`.
    """
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    columns = []
    for j in range(x.size):
        h = eps * (abs(x[j]) + 1.0) if scaled else eps
        step = np.zeros_like(x)
        step[j] = h
        forward = np.atleast_1d(np.asarray(fn(x + step, u), dtype=float))
        backward = np.atleast_1d(np.asarray(fn(x - step, u), dtype=float))
        if not (np.all(np.isfinite(forward)) and np.all(np.isfinite(backward))):
            raise NumericalError(f"non-finite function value while differentiating along axis {j}")
        columns.append((forward - backward) / (2.0 * h))
    return np.column_stack(columns)


# MARK: - Filter steps

def ekf_predict(model: StateSpaceModel, state: FilterState, u=None) -> FilterState:
    x = np.asarray(state.x, dtype=float)
    F = model.f_matrix(x, u)
    x_prior = np.atleast_1d(np.asarray(model.transition(x, u), dtype=float))
    P_prior = F @ state.P @ F.T + model.process_noise
    return FilterState(x_prior, 0.5 * (P_prior + P_prior.T))


def ekf_update(model: StateSpaceModel, prior: FilterState, z, u=None) -> FilterState:
    x = prior.x
    P = prior.P
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H = model.h_matrix(x, u)
    innovation = z - np.atleast_1d(np.asarray(model.observation(x, u), dtype=float))
    S = H @ P @ H.T + model.measurement_noise
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1.0 / np.finfo(float).eps:
        raise SingularityError("innovation covariance is not invertible")
    try:
        # K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ
        K = linalg.solve(S, H @ P, assume_a="sym").T
    except linalg.LinAlgError as exc:
        raise SingularityError(f"innovation covariance is not invertible: {exc}") from exc
    x_post = x + K @ innovation
    P_post = P - K @ H @ P
    return FilterState(x_post, 0.5 * (P_post + P_post.T), innovation, S)


def ekf_step(model: StateSpaceModel, state: FilterState, u, z) -> FilterState:
    """One predict + update cycle"""
    return ekf_update(model, ekf_predict(model, state, u), z, u)


def run_ekf(
    model: StateSpaceModel,
    x0,
    P0,
    measurements: Trajectory,
    inputs: Optional[np.ndarray] = None,
) -> FilterResult:
    """
    Filter a measurement sequence

    The first measurement only updates the prior (x0, P0), which describes
    the state at the first sample time; every later sample runs a full
    predict/update step.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if x0.shape != (model.n_states,) or P0.shape != (model.n_states, model.n_states):
        raise InvalidArgumentError(f"x0/P0 do not match the {model.n_states}-state model")
    if model.measurement_noise.shape[0] != measurements.n_channels:
        raise InvalidArgumentError(
            f"R is {model.measurement_noise.shape[0]}-dimensional, measurements have {measurements.n_channels} channels"
        )
    if inputs is not None and len(inputs) != measurements.n_steps:
        raise InvalidArgumentError("inputs must have one row per measurement")

    n = measurements.n_steps
    estimates = np.empty((n, model.n_states))
    p_diagonal = np.empty((n, model.n_states))
    innovations = np.empty((n, measurements.n_channels))
    variances = np.empty((n, measurements.n_channels))

    state = FilterState(x0, 0.5 * (P0 + P0.T))
    for k in range(n):
        u = None if inputs is None else inputs[k]
        z = measurements.values[k]
        if k == 0:
            state = ekf_update(model, state, z, u)
        else:
            state = ekf_step(model, state, u, z)
        if not np.all(np.isfinite(state.x)):
            raise NumericalError(f"filter estimate diverged at step {k}")
        estimates[k] = state.x
        p_diagonal[k] = np.diag(state.P)
        innovations[k] = state.innovation
        variances[k] = np.diag(state.innovation_covariance)

    names = model.state_names or tuple(f"x{i}" for i in range(model.n_states))
    trajectory = Trajectory(measurements.t0, measurements.dt, estimates, names, {"filter": "ekf"})
    return FilterResult(trajectory, p_diagonal, innovations, variances, state)


# MARK: - Lorenz filter

def lorenz_filter_model(
    params: LorenzParams,
    dt: float,
    observed: Sequence[str] = ("x", "y"),
    q: float = 1e-3,
    r: Union[float, Sequence[float]] = 1.0,
    jacobian_mode: JacobianMode = "finite-difference",
) -> StateSpaceModel:
    """
    EKF model of the Lorenz system sampled every dt

    g is one RK4 step of the Lorenz equations; h selects the observed channels.
    `r` is the measurement noise variance, scalar or per observed channel.
    """
    unknown = [name for name in observed if name not in LORENZ_CHANNELS]
    if unknown or not observed:
        raise InvalidArgumentError(f"observed channels must be a non-empty subset of {LORENZ_CHANNELS}")
    selection = np.zeros((len(observed), 3))
    for row, name in enumerate(observed):
        selection[row, LORENZ_CHANNELS.index(name)] = 1.0
    r = np.broadcast_to(np.asarray(r, dtype=float), (len(observed),))

    def rhs(state):
        return lorenz_rhs(state, params)

    def jacobian(state):
        return lorenz_jacobian(state, params)

    return StateSpaceModel(
        transition=lambda x, u: rk4_step(rhs, x, dt),
        observation=lambda x, u: selection @ x,
        process_noise=q * np.eye(3),
        measurement_noise=np.diag(r),
        transition_jacobian=lambda x, u: rk4_step_jacobian(rhs, jacobian, x, dt),
        observation_jacobian=lambda x, u: selection,
        jacobian_mode=jacobian_mode,
        state_names=LORENZ_CHANNELS,
    )


def lorenz_initial_guess(
    first_measurement,
    observed: Sequence[str],
    params: LorenzParams,
    variance: float = 100.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Observed channels from the first sample; unobserved ones at the attractor's z = ρ − 1 level"""
    x0 = np.array([0.0, 0.0, params.rho - 1.0])
    for value, name in zip(np.atleast_1d(first_measurement), observed):
        x0[LORENZ_CHANNELS.index(name)] = value
    return x0, variance * np.eye(3)


def tune_process_noise(
    params: LorenzParams,
    measurements: Trajectory,
    truth: Trajectory,
    r: Union[float, Sequence[float]],
    grid: Sequence[float] = PROCESS_NOISE_GRID,
    jacobian_mode: JacobianMode = "finite-difference",
    jobs: int = 1,
) -> Tuple[float, Dict[float, float]]:
    """
    Pick q for Q = q·I by estimate NMSE against `truth` on held-out data

    Grid points run in parallel on up to `jobs` threads.

    Returns:
        (best q, mapping of q to NMSE); failed runs score +∞
    """
    if not grid:
        raise InvalidArgumentError("process noise grid is empty")
    observed = measurements.channel_names
    x0, P0 = lorenz_initial_guess(measurements.values[0], observed, params)
    truth_values = truth.select(LORENZ_CHANNELS).values

    def score(q: float) -> float:
        model = lorenz_filter_model(params, measurements.dt, observed, q, r, jacobian_mode)
        try:
            estimates = run_ekf(model, x0, P0, measurements).estimates.values
        except NumericalError as e:
            logger.warning(f"EKF with q={q:g} failed: {e}")
            return math.inf
        return float(np.sum((estimates - truth_values) ** 2) / np.sum(truth_values ** 2))

    results = TaskRunner(jobs, log_level="DEBUG").run({f"q={q:g}": (lambda q=q: score(q)) for q in grid})
    scores: Dict[float, float] = {q: results[f"q={q:g}"] for q in grid}
    best = min(scores, key=lambda q: scores[q])
    if not math.isfinite(scores[best]):
        raise NumericalError("EKF diverged for every process noise level")
    logger.info(f"Selected EKF process noise q={best:g} (NMSE {scores[best]:.4e})")
    return best, scores


def write_estimates(result: FilterResult, path) -> Path:
    """CSV `t,<name>_est...,P_<name>...`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = result.estimates.channel_names
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", *(f"{n}_est" for n in names), *(f"P_{n}" for n in names)])
        for t, row, diagonal in zip(result.estimates.times, result.estimates.values, result.p_diagonal):
            writer.writerow([format(v, ".17g") for v in (t, *row, *diagonal)])
    return path
