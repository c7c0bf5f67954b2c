"""
Dynamics Service - ground-truth trajectories of the Lorenz and AdEx systems

Lorenz is integrated with classical fixed-step RK4; AdEx with forward Euler
and a threshold-reset rule.
"""

import math
from typing import Callable, List, Optional

import numpy as np
from loguru import logger

from rc_denoise.exceptions import IntegrationBlowupError, InvalidArgumentError
from rc_denoise.models import AdExParams, CurrentProfile, LorenzParams
from rc_denoise.trajectory import Trajectory

BLOWUP_LIMIT = 1e6

# R [MΩ] × current [pA] gives 1e-3 mV
MEGAOHM_PICOAMP_TO_MV = 1e-3

LORENZ_CHANNELS = ("x", "y", "z")
ADEX_CHANNELS = ("V", "w")

RHS = Callable[[np.ndarray], np.ndarray]


def _step_count(duration: float, dt: float) -> int:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if duration < dt:
        raise InvalidArgumentError(f"duration {duration} shorter than dt {dt}")
    return int(math.floor(duration / dt + 1e-9)) + 1


# MARK: - Generic RK4

def rk4_step(rhs: RHS, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge–Kutta step"""
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * dt * k1)
    k3 = rhs(state + 0.5 * dt * k2)
    k4 = rhs(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_jacobian(
    rhs: RHS,
    jacobian: Callable[[np.ndarray], np.ndarray],
    state: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Exact derivative of `rk4_step(rhs, state, dt)` with respect to state"""
    eye = np.eye(len(state))
    k1 = rhs(state)
    d1 = jacobian(state)
    s2 = state + 0.5 * dt * k1
    k2 = rhs(s2)
    d2 = jacobian(s2) @ (eye + 0.5 * dt * d1)
    s3 = state + 0.5 * dt * k2
    k3 = rhs(s3)
    d3 = jacobian(s3) @ (eye + 0.5 * dt * d2)
    s4 = state + dt * k3
    d4 = jacobian(s4) @ (eye + dt * d3)
    return eye + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)


def integrate_rk4(rhs: RHS, state0: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """States at n_steps grid points (the first row is state0)"""
    states = np.empty((n_steps, len(state0)))
    state = np.asarray(state0, dtype=float)
    states[0] = state
    for i in range(1, n_steps):
        state = rk4_step(rhs, state, dt)
        if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > BLOWUP_LIMIT:
            raise IntegrationBlowupError(f"trajectory diverged at step {i} (t={i * dt:g})")
        states[i] = state
    return states


# MARK: - Lorenz

def lorenz_rhs(state, params: LorenzParams) -> np.ndarray:
    x, y, z = np.asarray(state, dtype=float)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise InvalidArgumentError("Lorenz state must be finite")
    return np.array([
        params.sigma * (y - x),
        x * (params.rho - z) - y,
        x * y - params.beta * z,
    ])


def lorenz_jacobian(state, params: LorenzParams) -> np.ndarray:
    """Continuous-time Jacobian of the Lorenz vector field"""
    x, y, z = np.asarray(state, dtype=float)
    return np.array([
        [-params.sigma, params.sigma, 0.0],
        [params.rho - z, -1.0, -x],
        [y, x, -params.beta],
    ])


def integrate_lorenz(params: LorenzParams, dt: float, duration: float) -> Trajectory:
    n_steps = _step_count(duration, dt)
    states = integrate_rk4(
        lambda s: lorenz_rhs(s, params),
        np.array(params.initial_state, dtype=float),
        dt,
        n_steps,
    )
    logger.debug(f"Lorenz σ={params.sigma:g}: {n_steps} steps at dt={dt:g}")
    return Trajectory(0.0, dt, states, LORENZ_CHANNELS, {"system": "lorenz"})


# MARK: - AdEx

def adex_voltage_drive(v: float, w: float, current: float, params: AdExParams) -> float:
    """Right-hand side of the membrane equation, i.e. τ_m·C·dV/dt in mV"""
    exponential = params.delta_t * math.exp((v - params.v_t) / params.delta_t)
    return (
        -(v - params.v_r)
        + exponential
        - params.r * w * MEGAOHM_PICOAMP_TO_MV
        + params.r * current * MEGAOHM_PICOAMP_TO_MV
    )


def adex_rhs(v: float, w: float, current: float, params: AdExParams):
    """(dV/dt in mV/ms, dw/dt in pA/ms) without the spike-reset term"""
    dv = adex_voltage_drive(v, w, current, params) / (params.tau_m * params.c)
    dw = (params.a * (v - params.v_r) - w) / params.tau_w
    return dv, dw


def integrate_adex(
    params: AdExParams,
    current: CurrentProfile,
    dt: float,
    duration: float,
) -> Trajectory:
    """
    Forward-Euler AdEx integration with threshold-reset spikes

    Whenever a step takes V above V_T the firing time is recorded, V is reset
    to V_r and w jumps by b. Firing times and the summed adaptation jumps are
    attached to the trajectory metadata.
    """
    n_steps = _step_count(duration, dt)
    values = np.empty((n_steps, 2))
    v, w = params.v0, params.w0
    values[0] = (v, w)
    spike_times: List[float] = []

    for i in range(1, n_steps):
        t_prev = (i - 1) * dt
        try:
            dv, dw = adex_rhs(v, w, current.at(t_prev), params)
        except OverflowError:
            raise IntegrationBlowupError(f"AdEx exponential overflow at step {i}") from None
        v = v + dt * dv
        w = w + dt * dw
        if v > params.v_t:
            spike_times.append(i * dt)
            v = params.v_r
            w = w + params.b
        if not (math.isfinite(v) and math.isfinite(w)) or max(abs(v), abs(w)) > BLOWUP_LIMIT:
            raise IntegrationBlowupError(f"AdEx state diverged at step {i} (t={i * dt:g} ms)")
        values[i] = (v, w)

    logger.debug(f"AdEx: {n_steps} steps, {len(spike_times)} spikes")
    return Trajectory(
        0.0,
        dt,
        values,
        ADEX_CHANNELS,
        {
            "system": "adex",
            "spike_times": spike_times,
            "adaptation_jumps": params.b * len(spike_times),
        },
    )


def local_maxima(signal, discard: Optional[int] = None) -> np.ndarray:
    """Strict interior local maxima of a 1-D signal (after dropping a prefix)"""
    signal = np.asarray(signal, dtype=float)
    if discard:
        signal = signal[discard:]
    if signal.size < 3:
        return np.empty(0)
    interior = signal[1:-1]
    peaks = (interior > signal[:-2]) & (interior > signal[2:])
    return interior[peaks]
