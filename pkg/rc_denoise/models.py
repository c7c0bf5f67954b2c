"""
Parameter, Configuration and Report Models for rc-denoise
"""

import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Spectral exponents of the named noise colors (PSD ∝ f^exponent)
NOISE_EXPONENTS: Dict[str, float] = {"white": 0.0, "violet": 1.0, "pink": -1.0}

DEFAULT_LAMBDA_GRID: List[float] = [10.0 ** k for k in range(-15, 21)]


# MARK: - Dynamical systems

class LorenzParams(BaseModel):
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    x0: float = 1.0
    y0: float = 1.0
    z0: float = 1.0

    @field_validator("sigma", "rho", "beta", "x0", "y0", "z0")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("Lorenz parameters must be finite")
        return value

    @field_validator("beta")
    @classmethod
    def _positive_beta(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("beta must be positive")
        return value

    @property
    def initial_state(self) -> Tuple[float, float, float]:
        return (self.x0, self.y0, self.z0)


class AdExParams(BaseModel):
    """
    AdEx neuron constants

    Units: times in ms, voltages in mV, R in MΩ, a in nS, b and w in pA.
    `c` is the dimensionless factor multiplying tau_m in the membrane
    equation. `delta_t` enters the exponential term exactly as given.

    The default sharpness is Δ_T = +2 mV rather than −2 mV. A negative Δ_T
    turns the exponential term into a downward drive, so V runs off to −∞
    without spiking (integrate_adex raises IntegrationBlowupError).
    `literal()` builds the constants with Δ_T = −2 mV.
    """

    tau_m: float = 5.0
    tau_w: float = 100.0
    c: float = 1.0
    r: float = 500.0
    v_r: float = -55.0
    v_t: float = -51.0
    delta_t: float = 2.0
    a: float = -0.5
    b: float = 7.0
    v0: float = -55.0
    w0: float = 0.0

    @field_validator("tau_m", "tau_w", "c")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("time constants and C must be positive")
        return value

    @field_validator("r", "delta_t")
    @classmethod
    def _nonzero(cls, value: float) -> float:
        if value == 0 or not math.isfinite(value):
            raise ValueError("R and delta_t must be finite and non-zero")
        return value

    @classmethod
    def literal(cls, **overrides) -> "AdExParams":
        """Constants with the negative sharpness Δ_T = −2 mV"""
        return cls(**{"delta_t": -2.0, **overrides})


class CurrentProfile(BaseModel):
    onset: float = 10.0
    duration: float = 390.0
    amplitude: float = 65.0

    @field_validator("duration")
    @classmethod
    def _nonnegative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("duration must be non-negative")
        return value

    def at(self, t: float) -> float:
        """Injected current (pA) at time t (ms)"""
        if self.onset <= t < self.onset + self.duration:
            return self.amplitude
        return 0.0


# MARK: - Noise

class NoiseSpec(BaseModel):
    """
    Additive noise description

    `target_snr` is the RMS ratio signal/noise. A config may give `color`
    instead of `exponent`, and `percent` (noise RMS as percent of signal RMS)
    or `snr_db` instead of `target_snr`.
    """

    exponent: float = 0.0
    target_snr: float = Field(default=4.0, gt=0)
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _aliases(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        color = data.pop("color", None)
        if color is not None:
            if color not in NOISE_EXPONENTS:
                raise ValueError(f"unknown noise color '{color}'")
            data.setdefault("exponent", NOISE_EXPONENTS[color])
        percent = data.pop("percent", None)
        if percent is not None:
            if percent <= 0:
                raise ValueError("percent must be positive")
            data.setdefault("target_snr", 100.0 / percent)
        snr_db = data.pop("snr_db", None)
        if snr_db is not None:
            data.setdefault("target_snr", 10.0 ** (snr_db / 20.0))
        return data

    @field_validator("exponent")
    @classmethod
    def _finite_exponent(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("exponent must be finite")
        return value

    @classmethod
    def from_percent(cls, percent: float, exponent: float = 0.0, seed: int = 0) -> "NoiseSpec":
        return cls(exponent=exponent, percent=percent, seed=seed)

    @classmethod
    def from_db(cls, snr_db: float, exponent: float = 0.0, seed: int = 0) -> "NoiseSpec":
        return cls(exponent=exponent, snr_db=snr_db, seed=seed)

    @property
    def snr_db(self) -> float:
        return 20.0 * math.log10(self.target_snr)

    @property
    def color(self) -> str:
        for name, exponent in NOISE_EXPONENTS.items():
            if exponent == self.exponent:
                return name
        return f"f{self.exponent:+g}"

    @property
    def label(self) -> str:
        return f"{self.color}_snr{self.target_snr:g}"


# MARK: - Reservoir hyperparameters

class HyperParams(BaseModel):
    """The searchable tuple (N, α, γ, ζ, p)"""

    n_nodes: int = Field(default=500, ge=1)
    leakage: float = Field(default=1.0, ge=0.0, le=1.0)
    spectral_radius: float = Field(default=0.9, gt=0.0)
    input_scaling: float = Field(default=1.0, ge=0.0)
    connectivity: float = Field(default=0.3, ge=0.0, le=1.0)


class SearchSpace(BaseModel):
    """Per-parameter bounds of the hyperparameter search (inclusive)"""

    n_nodes: Tuple[int, int] = (500, 500)
    leakage: Tuple[float, float] = (0.01, 1.0)
    spectral_radius: Tuple[float, float] = (0.01, 1.0)
    input_scaling: Tuple[float, float] = (0.1, 2.0)
    connectivity: Tuple[float, float] = (0.1, 0.9)

    @field_validator("n_nodes", "leakage", "spectral_radius", "input_scaling", "connectivity")
    @classmethod
    def _ordered(cls, bounds):
        lower, upper = bounds
        if lower > upper:
            raise ValueError(f"lower bound {lower} exceeds upper bound {upper}")
        return bounds

    @field_validator("n_nodes")
    @classmethod
    def _enough_nodes(cls, bounds):
        if bounds[0] < 2:
            raise ValueError("reservoirs need at least 2 nodes")
        return bounds

    def contains(self, hyper: HyperParams) -> bool:
        return all(
            getattr(self, name)[0] <= getattr(hyper, name) <= getattr(self, name)[1]
            for name in HyperParams.model_fields
        )


# MARK: - Readout and structure optimization

class RidgeConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    ridge_lambda: float = Field(default=1e-8, ge=0.0, alias="lambda")
    lambda_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    folds: int = Field(default=5, ge=2)
    mode: Literal["grid", "fixed"] = "grid"

    @field_validator("lambda_grid")
    @classmethod
    def _increasing(cls, grid: List[float]) -> List[float]:
        if not grid:
            raise ValueError("lambda grid must not be empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("lambda grid must be strictly increasing")
        if grid[0] < 0:
            raise ValueError("lambda values must be non-negative")
        return grid


class PruneConfig(BaseModel):
    prune_fraction: float = Field(default=0.05, gt=0.0, lt=1.0)
    max_trials: int = Field(default=20, ge=1)
    accept_tolerance: float = Field(default=0.01, ge=0.0)
    target_nmse: Optional[float] = None
    grow_batch: int = Field(default=0, ge=0)
    retune: bool = False
    retune_budget: int = Field(default=20, ge=1)


class EvalRecord(BaseModel):
    iteration: int
    phi: HyperParams
    loss: float
    ridge_lambda: Optional[float] = None
    seed: int
    seconds: float
    failed: bool = False


class AuditEntry(BaseModel):
    round: int
    action: Literal["prune_node", "prune_edge", "grow", "retune"]
    ids: List[str]
    nmse_before: float
    nmse_after: float
    accepted: bool


# MARK: - Reports

class PSDCurve(BaseModel):
    label: str
    frequencies: List[float]
    psd_db: List[float]


class DenoisingReport(BaseModel):
    nmse: float
    snr_test: float
    snr_reconstructed: float
    denoising_gain: float
    channel_names: List[str]
    residual_rms: Dict[str, float]
    channel_snr_test: List[float]
    channel_snr_reconstructed: List[float]
    psd: List[PSDCurve] = []

    @model_validator(mode="after")
    def _gain_is_ratio(self) -> "DenoisingReport":
        expected = self.snr_reconstructed / self.snr_test
        if not (expected == self.denoising_gain or (math.isnan(expected) and math.isnan(self.denoising_gain))):
            raise ValueError("denoising_gain must equal snr_reconstructed / snr_test")
        return self
