"""
Dataset Generation - clean/noisy trajectories, on-disk layout and splits
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from rc_denoise.exceptions import OrchestrationError
from rc_denoise.experiments.config import ExperimentConfig, RunManifest
from rc_denoise.models import LorenzParams, NoiseSpec
from rc_denoise.services.dynamics import integrate_adex, integrate_lorenz
from rc_denoise.services.noise import add_noise, derive_seed
from rc_denoise.services.training import DenoisingDataset, DenoisingSplit
from rc_denoise.trajectory import Trajectory, read_csv, write_csv, write_spike_times


class RunLayout:
    """File locations of every artifact below an output directory"""

    def __init__(self, output_dir):
        self.root = Path(output_dir)

    @property
    def clean(self) -> Path:
        return self.root / "data" / "clean.csv"

    @property
    def spikes(self) -> Path:
        return self.root / "data" / "spikes.csv"

    def noisy(self, spec: NoiseSpec, seed: int) -> Path:
        return self.root / "data" / spec.label / f"seed{seed}" / "noisy.csv"

    def noise(self, spec: NoiseSpec, seed: int) -> Path:
        return self.root / "data" / spec.label / f"seed{seed}" / "noise.csv"

    def model(self, stage: str, seed: int) -> Path:
        return self.root / "models" / f"seed{seed}" / f"{stage}.json"

    def report(self, stage: str, seed: int) -> Path:
        return self.root / "reports" / stage / f"seed{seed}.json"

    def history(self, seed: int) -> Path:
        return self.root / "tuning" / f"seed{seed}_history.csv"

    def cv_report(self, stage: str, seed: int) -> Path:
        return self.root / "tuning" / f"seed{seed}_{stage}_lambda_cv.csv"

    def audit(self, seed: int) -> Path:
        return self.root / "pruning" / f"seed{seed}_audit.csv"

    def ekf(self, seed: int) -> Path:
        return self.root / "ekf" / f"seed{seed}_estimates.csv"

    def study(self, name: str) -> Path:
        return self.root / "studies" / name

    def manifest(self, command: str) -> Path:
        return self.root / "manifests" / f"{command}.json"


# MARK: - Simulation and corruption

def simulate(config: ExperimentConfig, lorenz: Optional[LorenzParams] = None) -> Trajectory:
    """Clean trajectory of the configured system over the full duration"""
    if config.system == "lorenz":
        return integrate_lorenz(lorenz or config.lorenz, config.dt, config.duration)
    return integrate_adex(config.adex, config.current, config.dt, config.duration)


def seeded_spec(spec: NoiseSpec, seed: int, *labels: str) -> NoiseSpec:
    """The noise spec with a stream seed derived from the run seed and its label"""
    return spec.model_copy(update={"seed": derive_seed(seed, "noise", spec.label, *labels)})


def corrupt(
    clean: Trajectory,
    observed: Sequence[str],
    spec: NoiseSpec,
    seed: int,
    *labels: str,
) -> Tuple[Trajectory, np.ndarray]:
    """Noisy observed channels and the injected noise"""
    return add_noise(clean.select(observed), seeded_spec(spec, seed, *labels))


# MARK: - Splits

@dataclass(frozen=True)
class ExperimentData:
    split: DenoisingSplit
    test: DenoisingDataset


def _segment(trajectory: Trajectory, config: ExperimentConfig) -> Tuple[Trajectory, Trajectory, Trajectory]:
    """(training, validation, test) rows of one trajectory"""
    training, test = trajectory.split_at(config.split_time)
    n_validation = max(1, int(round(config.validation_fraction * training.n_steps)))
    fit_rows = training.n_steps - n_validation
    return training.slice(0, fit_rows), training.slice(fit_rows), test


def split_data(
    config: ExperimentConfig,
    clean: Trajectory,
    train_noisy: Trajectory,
    test_noisy: Optional[Trajectory] = None,
    extra_training: Sequence[DenoisingDataset] = (),
) -> ExperimentData:
    """
    Training/validation datasets from `train_noisy` and the test dataset
    from `test_noisy` (defaults to `train_noisy`)

    Targets are the clean target channels of the same rows.
    """
    test_noisy = test_noisy if test_noisy is not None else train_noisy
    targets = clean.select(config.targets)
    observed_clean = clean.select(config.observed)
    fit_in, validation_in, _ = _segment(train_noisy, config)
    _, _, test_in = _segment(test_noisy, config)
    fit_out, validation_out, test_out = _segment(targets, config)
    fit_clean, validation_clean, test_clean = _segment(observed_clean, config)
    return ExperimentData(
        split=DenoisingSplit(
            train=(DenoisingDataset(fit_in, fit_out, fit_clean), *extra_training),
            validation=DenoisingDataset(validation_in, validation_out, validation_clean),
        ),
        test=DenoisingDataset(test_in, test_out, test_clean),
    )


def training_dataset(config: ExperimentConfig, clean: Trajectory, noisy: Trajectory) -> DenoisingDataset:
    """Whole training segment of one trajectory as a single dataset"""
    training_in, _ = noisy.split_at(config.split_time)
    training_out, _ = clean.select(config.targets).split_at(config.split_time)
    return DenoisingDataset(training_in, training_out)


# MARK: - Files

def noise_specs(config: ExperimentConfig) -> List[NoiseSpec]:
    """Training and test noise grids merged, first occurrence wins"""
    specs, seen = [], set()
    for spec in [*config.train_noise, *config.test_noise]:
        if spec.label not in seen:
            seen.add(spec.label)
            specs.append(spec)
    return specs


def generate_dataset(config: ExperimentConfig) -> RunManifest:
    """
    Write the clean trajectory and one noisy observation (plus its noise
    realization) per (noise spec × seed)
    """
    layout = RunLayout(config.output_dir)
    manifest = RunManifest(command="generate", config_hash=config.config_hash(), seeds=config.seeds)

    clean = simulate(config)
    manifest.add("clean", write_csv(clean, layout.clean))
    if config.system == "adex":
        manifest.add("spikes", write_spike_times(clean.metadata["spike_times"], layout.spikes))

    for spec in noise_specs(config):
        for seed in config.seeds:
            noisy, realization = corrupt(clean, config.observed, spec, seed)
            manifest.add("noisy", write_csv(noisy, layout.noisy(spec, seed)))
            manifest.add("noise", write_csv(noisy.with_values(realization), layout.noise(spec, seed)))
    logger.info(f"Generated {config.system} data: {clean.n_steps} rows, {len(manifest.artifacts['noisy'])} noisy sets")
    manifest.write(layout.manifest("generate"))
    return manifest


def load_generated(config: ExperimentConfig, spec: NoiseSpec, seed: int) -> Tuple[Trajectory, Trajectory]:
    """(clean, noisy) written by generate_dataset"""
    layout = RunLayout(config.output_dir)
    for path in (layout.clean, layout.noisy(spec, seed)):
        if not path.exists():
            raise OrchestrationError(f"dataset file {path} is missing; run `generate` first")
    return read_csv(layout.clean), read_csv(layout.noisy(spec, seed))
