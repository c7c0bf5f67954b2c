"""
Experiment Configuration - ExperimentConfig, RunManifest and config file loading
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from rc_denoise import __version__
from rc_denoise.exceptions import ConfigError, OrchestrationError
from rc_denoise.models import (
    AdExParams,
    CurrentProfile,
    HyperParams,
    LorenzParams,
    NoiseSpec,
    PruneConfig,
    RidgeConfig,
    SearchSpace,
)
from rc_denoise.services.dynamics import ADEX_CHANNELS, LORENZ_CHANNELS

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

Stage = Literal["trained", "tuned", "truncated"]
STAGES = ("trained", "tuned", "truncated")

SYSTEM_CHANNELS = {"lorenz": LORENZ_CHANNELS, "adex": ADEX_CHANNELS}

# Lorenz times are in seconds, AdEx times in ms
SYSTEM_DEFAULTS: Dict[str, dict] = {
    "lorenz": {
        "dt": 0.005,
        "duration": 50.0,
        "split_time": 25.0,
        "observed": ["x", "y"],
        "targets": ["x", "y", "z"],
        "train_noise": [{"exponent": 0.0, "target_snr": 4.0}],
        "test_noise": [{"exponent": 0.0, "target_snr": 4.0}],
        "sample_rate": 200.0,
    },
    "adex": {
        "dt": 0.01,
        "duration": 400.0,
        "split_time": 200.0,
        "observed": ["V", "w"],
        "targets": ["V", "w"],
        "train_noise": [{"exponent": 0.0, "snr_db": 20.0}],
        "test_noise": [{"exponent": 0.0, "snr_db": 20.0}],
        "sample_rate": 100_000.0,
    },
}


class ExtraTrainingSet(BaseModel):
    """Additional Lorenz training trajectory at another σ and noise level"""

    sigma: float
    target_snr: float = Field(default=4.0, gt=0)


class EKFConfig(BaseModel):
    q_grid: List[float] = Field(default_factory=lambda: [10.0 ** k for k in range(-6, 1)])
    jacobian_mode: Literal["analytic", "finite-difference"] = "finite-difference"


class ExperimentConfig(BaseModel):
    """
    Full description of one experiment

    Fields left unset are filled from the defaults of the chosen system.
    `split_time` separates training data from test data; the last
    `validation_fraction` of the training segment is held out for
    hyperparameter search, λ selection during pruning and EKF tuning.
    """

    model_config = ConfigDict(extra="forbid")

    system: Literal["lorenz", "adex"] = "lorenz"
    lorenz: LorenzParams = Field(default_factory=LorenzParams)
    adex: AdExParams = Field(default_factory=AdExParams)
    current: CurrentProfile = Field(default_factory=CurrentProfile)

    dt: Optional[float] = Field(default=None, gt=0)
    duration: Optional[float] = Field(default=None, gt=0)
    split_time: Optional[float] = None
    validation_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    sample_rate: Optional[float] = Field(default=None, gt=0)
    observed: Optional[List[str]] = None
    targets: Optional[List[str]] = None

    train_noise: Optional[List[NoiseSpec]] = None
    test_noise: Optional[List[NoiseSpec]] = None
    noise_colors: List[str] = Field(default_factory=lambda: ["violet", "white", "pink"])
    sigma_grid: List[float] = Field(default_factory=lambda: [0.5 * k for k in range(41)])
    extra_training: List[ExtraTrainingSet] = Field(default_factory=list)
    bifurcation_discard: float = Field(default=0.2, ge=0.0, lt=1.0)

    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: Path = Path("runs")
    stage: Stage = "truncated"
    jobs: int = Field(default=1, ge=1)

    reservoir: HyperParams = Field(default_factory=HyperParams)
    bias: float = 0.5
    washout: int = Field(default=100, ge=0)
    ridge: RidgeConfig = Field(default_factory=RidgeConfig)
    search_space: SearchSpace = Field(default_factory=SearchSpace)
    hyperopt_budget: int = Field(default=50, ge=1)
    hyperopt_method: Literal["surrogate", "random"] = "surrogate"
    study_n_nodes: List[int] = Field(default_factory=lambda: [50, 100])
    prune: PruneConfig = Field(default_factory=PruneConfig)
    ekf: EKFConfig = Field(default_factory=EKFConfig)

    per_channel_gain: bool = False
    psd_segment: int = Field(default=1024, ge=2)

    @model_validator(mode="after")
    def _system_defaults(self) -> "ExperimentConfig":
        defaults = SYSTEM_DEFAULTS[self.system]
        for name in ("dt", "duration", "split_time", "sample_rate", "observed", "targets"):
            if getattr(self, name) is None:
                value = defaults[name]
                setattr(self, name, list(value) if isinstance(value, list) else value)
        for name in ("train_noise", "test_noise"):
            if getattr(self, name) is None:
                setattr(self, name, [NoiseSpec(**spec) for spec in defaults[name]])

        if not 0 < self.split_time < self.duration:
            raise ValueError(f"split_time {self.split_time} must lie inside (0, {self.duration})")
        channels = SYSTEM_CHANNELS[self.system]
        for name in ("observed", "targets"):
            selected = getattr(self, name)
            if not selected or any(c not in channels for c in selected):
                raise ValueError(f"{name} must be a non-empty subset of {channels}, got {selected}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if not self.train_noise or not self.test_noise:
            raise ValueError("noise grids must not be empty")
        # labels name task runs and dataset directories
        for name, values in (
            ("seeds", self.seeds),
            ("train_noise", [spec.label for spec in self.train_noise]),
            ("test_noise", [spec.label for spec in self.test_noise]),
            ("noise_colors", self.noise_colors),
        ):
            duplicates = sorted({str(v) for v in values if values.count(v) > 1})
            if duplicates:
                raise ValueError(f"{name} contains duplicates: {', '.join(duplicates)}")
        if self.psd_segment & (self.psd_segment - 1):
            raise ValueError("psd_segment must be a power of two")
        if len(self.study_n_nodes) != 2 or self.study_n_nodes[0] > self.study_n_nodes[1]:
            raise ValueError("study_n_nodes must be [lower, upper]")
        return self

    @property
    def channels(self):
        return SYSTEM_CHANNELS[self.system]

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


class RunManifest(BaseModel):
    """Artifacts of one command; written last, after every file exists"""

    command: str
    config_hash: str
    code_version: str = __version__
    seeds: List[int]
    stage: Optional[Stage] = None
    artifacts: Dict[str, List[str]] = Field(default_factory=dict)

    def add(self, group: str, path: Union[str, Path]) -> None:
        self.artifacts.setdefault(group, []).append(str(path))

    def write(self, path: Union[str, Path]) -> Path:
        missing = [p for paths in self.artifacts.values() for p in paths if not Path(p).exists()]
        if missing:
            raise OrchestrationError(f"manifest references missing artifact: {missing[0]}")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True))
        return path


def load_config(path: Union[str, Path, None] = None, **overrides) -> ExperimentConfig:
    """
    Load an ExperimentConfig from JSON or TOML (by suffix) and apply overrides

    Args:
        path: config file; None gives the defaults
        overrides: field values replacing those from the file (None is ignored)

    Raises:
        ConfigError: unreadable file, bad syntax or invalid fields
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            if path.suffix.lower() == ".toml":
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must contain a table/object at the top level")

    data.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {e}") from e
