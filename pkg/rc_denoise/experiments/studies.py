"""
Studies - gain matrix, Prandtl-number sweep and noise-color comparison

Each study runs independent (seed × cell) jobs through the TaskRunner and
writes CSV tables plus plot scripts below `<output_dir>/studies/<name>`.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger

from rc_denoise.exceptions import ConfigError
from rc_denoise.experiments.config import ExperimentConfig, RunManifest
from rc_denoise.experiments.datasets import (
    RunLayout,
    corrupt,
    simulate,
    split_data,
    training_dataset,
)
from rc_denoise.experiments.pipeline import evaluate, fit_trained, fit_truncated, fit_tuned, write_psd_curves
from rc_denoise.experiments.plots import (
    write_gain_matrix_script,
    write_gain_distribution_script,
    write_psd_script,
    write_sweep_script,
)
from rc_denoise.models import NOISE_EXPONENTS, DenoisingReport, NoiseSpec
from rc_denoise.runner import TaskRunner
from rc_denoise.services.dynamics import local_maxima
from rc_denoise.services.reservoir import EchoStateNetwork


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return path


def fit_stage(config: ExperimentConfig, data, seed: int, space=None) -> EchoStateNetwork:
    """Model of `config.stage` trained in memory"""
    if config.stage == "trained":
        esn, _ = fit_trained(config, data, seed)
        return esn
    esn, _, _ = fit_tuned(config, data, seed, space=space)
    if config.stage == "tuned":
        return esn
    esn, _ = fit_truncated(config, data, esn, seed, space=space)
    return esn


# MARK: - Gain matrix

@dataclass
class GainMatrix:
    train_labels: List[str]
    test_labels: List[str]
    gains: np.ndarray
    per_seed: np.ndarray

    @property
    def asymmetry(self) -> float:
        """max |G − Gᵀ| (square grids only)"""
        if self.gains.shape[0] != self.gains.shape[1]:
            return float("nan")
        return float(np.max(np.abs(self.gains - self.gains.T)))


def gain_matrix(config: ExperimentConfig) -> Tuple[GainMatrix, RunManifest]:
    """
    One model per (training noise, seed), evaluated on every test noise

    Entry (i, j) is the seed-mean gain of the model trained at
    train_noise[i] on test data corrupted with test_noise[j].
    """
    clean = simulate(config)
    train_specs, test_specs = config.train_noise, config.test_noise

    def cell(i: int, seed: int) -> List[float]:
        train_noisy, _ = corrupt(clean, config.observed, train_specs[i], seed)
        data = split_data(config, clean, train_noisy)
        esn = fit_stage(config, data, seed)
        gains = []
        for spec in test_specs:
            test_noisy, _ = corrupt(clean, config.observed, spec, seed, "test")
            gains.append(evaluate(config, esn, split_data(config, clean, train_noisy, test_noisy)).denoising_gain)
        return gains

    runner = TaskRunner(config.jobs)
    results = runner.run({
        f"train {spec.label} seed {seed}": (lambda i=i, seed=seed: cell(i, seed))
        for i, spec in enumerate(train_specs)
        for seed in config.seeds
    })
    per_seed = np.array(list(results.values())).reshape(len(train_specs), len(config.seeds), len(test_specs))
    matrix = GainMatrix(
        train_labels=[s.label for s in train_specs],
        test_labels=[s.label for s in test_specs],
        gains=per_seed.mean(axis=1),
        per_seed=per_seed,
    )

    directory = RunLayout(config.output_dir).study("gain_matrix")
    manifest = RunManifest(command="gain-matrix", config_hash=config.config_hash(), seeds=config.seeds)
    csv_path = _write_rows(
        directory / "gain_matrix.csv",
        ["train\\test", *matrix.test_labels],
        [[label, *map(float, row)] for label, row in zip(matrix.train_labels, matrix.gains)],
    )
    manifest.add("tables", csv_path)
    manifest.add("plots", write_gain_matrix_script(csv_path, directory / "gain_matrix.gp"))
    manifest.write(RunLayout(config.output_dir).manifest("gain-matrix"))
    logger.info(f"Gain matrix {matrix.gains.shape}: diagonal {np.diag(matrix.gains).round(3).tolist()}")
    return matrix, manifest


# MARK: - Prandtl sweep

@dataclass
class SweepResult:
    sigmas: List[float]
    test_labels: List[str]
    gains: np.ndarray
    per_seed: np.ndarray
    maxima: Dict[float, np.ndarray]


def parameter_sweep(config: ExperimentConfig) -> Tuple[SweepResult, RunManifest]:
    """
    Gain of a reservoir trained at config.lorenz.sigma across a σ grid

    `config.extra_training` adds concatenated training sets simulated at
    other σ values. Also records the local maxima of x(t) per σ.
    """
    if config.system != "lorenz":
        raise ConfigError("the Prandtl sweep needs the Lorenz system")
    clean = simulate(config)
    train_spec = config.train_noise[0]
    sigmas = [float(s) for s in config.sigma_grid]
    grids = {sigma: simulate(config, config.lorenz.model_copy(update={"sigma": sigma})) for sigma in sigmas}

    def run_seed(seed: int) -> np.ndarray:
        train_noisy, _ = corrupt(clean, config.observed, train_spec, seed)
        extra = []
        for k, extra_set in enumerate(config.extra_training):
            other = simulate(config, config.lorenz.model_copy(update={"sigma": extra_set.sigma}))
            spec = NoiseSpec(exponent=train_spec.exponent, target_snr=extra_set.target_snr)
            other_noisy, _ = corrupt(other, config.observed, spec, seed, f"extra{k}")
            extra.append(training_dataset(config, other, other_noisy))
        data = split_data(config, clean, train_noisy, extra_training=extra)
        esn = fit_stage(config, data, seed)

        gains = np.empty((len(sigmas), len(config.test_noise)))
        for a, sigma in enumerate(sigmas):
            for b, spec in enumerate(config.test_noise):
                test_noisy, _ = corrupt(grids[sigma], config.observed, spec, seed, "test")
                test_data = split_data(config, grids[sigma], test_noisy)
                gains[a, b] = evaluate(config, esn, test_data).denoising_gain
        return gains

    results = TaskRunner(config.jobs).run({f"sweep seed {seed}": (lambda seed=seed: run_seed(seed)) for seed in config.seeds})
    per_seed = np.array(list(results.values()))
    maxima = {
        sigma: local_maxima(grids[sigma].channel("x"), int(config.bifurcation_discard * grids[sigma].n_steps))
        for sigma in sigmas
    }
    result = SweepResult(sigmas, [s.label for s in config.test_noise], per_seed.mean(axis=0), per_seed, maxima)

    directory = RunLayout(config.output_dir).study("sweep")
    manifest = RunManifest(command="sweep", config_hash=config.config_hash(), seeds=config.seeds)
    rows = [
        [sigma, label, float(result.gains[a, b]), float(per_seed[:, a, b].std())]
        for a, sigma in enumerate(sigmas)
        for b, label in enumerate(result.test_labels)
    ]
    gain_path = _write_rows(directory / "gain_vs_sigma.csv", ["sigma", "noise", "gain_mean", "gain_std"], rows)
    maxima_path = _write_rows(
        directory / "bifurcation.csv",
        ["sigma", "x_max"],
        [[sigma, float(value)] for sigma in sigmas for value in maxima[sigma]],
    )
    manifest.add("tables", gain_path)
    manifest.add("tables", maxima_path)
    manifest.add("plots", write_sweep_script(gain_path, maxima_path, directory / "sweep.gp"))
    manifest.write(RunLayout(config.output_dir).manifest("sweep"))
    return result, manifest


# MARK: - Noise colors

@dataclass
class ColorStudy:
    reports: Dict[str, List[DenoisingReport]]

    def gains(self, color: str) -> np.ndarray:
        return np.array([r.denoising_gain for r in self.reports[color]])

    def summary(self) -> Dict[str, Tuple[float, float]]:
        return {color: (float(self.gains(color).mean()), float(self.gains(color).std())) for color in self.reports}


def noise_color_study(config: ExperimentConfig) -> Tuple[ColorStudy, RunManifest]:
    """
    Full pipeline per noise color and seed with N free in study_n_nodes

    Training and test data share the color; the noise level is that of
    test_noise[0]. Reports carry PSD curves of the noisy, denoised, residual
    and injected-noise signals.
    """
    clean = simulate(config)
    level = config.test_noise[0].target_snr
    space = config.search_space.model_copy(update={"n_nodes": tuple(config.study_n_nodes)})
    colors = list(config.noise_colors)
    for color in colors:
        if color not in NOISE_EXPONENTS:
            raise ConfigError(f"unknown noise color '{color}'")

    def run(color: str, seed: int) -> DenoisingReport:
        spec = NoiseSpec(color=color, target_snr=level)
        noisy, _ = corrupt(clean, config.observed, spec, seed)
        test_noisy, _ = corrupt(clean, config.observed, spec, seed, "test")
        data = split_data(config, clean, noisy, test_noisy)
        esn = fit_stage(config, data, seed, space=space)
        return evaluate(config, esn, data, psd=True)

    results = TaskRunner(config.jobs).run({
        f"{color} seed {seed}": (lambda color=color, seed=seed: run(color, seed))
        for color in colors
        for seed in config.seeds
    })
    reports = {color: [results[f"{color} seed {seed}"] for seed in config.seeds] for color in colors}
    study = ColorStudy(reports)

    directory = RunLayout(config.output_dir).study("noise_colors")
    manifest = RunManifest(command="noise-study", config_hash=config.config_hash(), seeds=config.seeds)
    for color in colors:
        for seed, report in zip(config.seeds, reports[color]):
            report_path = directory / color / f"seed{seed}.json"
            report_path.parent.mkdir(parents=True, exist_ok=True)
            report_path.write_text(report.model_dump_json(indent=2))
            manifest.add("reports", report_path)
        psd_paths = write_psd_curves(reports[color][0], directory / color)
        for path in psd_paths:
            manifest.add("psd", path)
        manifest.add("plots", write_psd_script(psd_paths, directory / color / "psd.gp"))

    distribution = _write_rows(
        directory / "gain_distribution.csv",
        ["color", "seed", "gain"],
        [[color, seed, float(gain)] for color in colors for seed, gain in zip(config.seeds, study.gains(color))],
    )
    summary = _write_rows(
        directory / "gain_summary.csv",
        ["color", "gain_mean", "gain_std"],
        [[color, mean, std] for color, (mean, std) in study.summary().items()],
    )
    manifest.add("tables", distribution)
    manifest.add("tables", summary)
    manifest.add("plots", write_gain_distribution_script(distribution, directory / "gain_distribution.gp"))
    manifest.write(RunLayout(config.output_dir).manifest("noise-study"))
    for color, (mean, std) in study.summary().items():
        logger.info(f"{color}: gain {mean:.2f} ± {std:.2f}")
    return study, manifest
