"""
Pipeline - trained / tuned / truncated reservoir stages, EKF baseline and denoising

The in-memory stage functions (`fit_trained`, `fit_tuned`, `fit_truncated`)
are shared by the file-based commands and the studies.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger

from rc_denoise.exceptions import ConfigError, OrchestrationError
from rc_denoise.experiments.config import STAGES, ExperimentConfig, RunManifest
from rc_denoise.experiments.datasets import ExperimentData, RunLayout, load_generated, split_data
from rc_denoise.models import AuditEntry, DenoisingReport, HyperParams, SearchSpace
from rc_denoise.services.ekf import (
    lorenz_filter_model,
    lorenz_initial_guess,
    run_ekf,
    tune_process_noise,
    write_estimates,
)
from rc_denoise.services.hyperopt import OptimizeResult, ReservoirObjective, optimize, write_history
from rc_denoise.services.metrics import denoising_gain, write_psd
from rc_denoise.services.persistence import load_model, save_model
from rc_denoise.services.pruning import truncate, write_audit
from rc_denoise.services.reservoir import EchoStateNetwork
from rc_denoise.services.training import fit_readout, predict, prepare_reservoir, write_cv_report
from rc_denoise.trajectory import Trajectory, read_csv, write_csv


@dataclass
class StageResult:
    stage: str
    seed: int
    esn: EchoStateNetwork
    report: DenoisingReport
    history: Optional[OptimizeResult] = None
    audit: List[AuditEntry] = field(default_factory=list)


# MARK: - Stages

def fit_trained(
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    hyper: Optional[HyperParams] = None,
):
    """Fixed φ (config.reservoir unless given) plus a ridge readout"""
    esn = prepare_reservoir(
        hyper or config.reservoir,
        data.split.train,
        seed,
        bias=config.bias,
        washout=config.washout,
    )
    return fit_readout(esn, data.split.train, config.ridge)


def fit_tuned(
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    space: Optional[SearchSpace] = None,
    jobs: int = 1,
):
    """Hyperparameter search on validation NMSE, then a readout fit with the best φ"""
    objective = ReservoirObjective(
        data.split.train,
        data.split.validation,
        config.ridge,
        seeds=(seed,),
        bias=config.bias,
        washout=config.washout,
    )
    result = optimize(
        space or config.search_space,
        objective,
        budget=config.hyperopt_budget,
        seed=seed,
        method=config.hyperopt_method,
        jobs=jobs,
    )
    logger.info(f"Seed {seed}: best validation NMSE {result.best_loss:.4e} at {result.best.model_dump()}")
    esn, selection = fit_trained(config, data, seed, result.best)
    return esn, selection, result


def fit_truncated(
    config: ExperimentConfig,
    data: ExperimentData,
    tuned: EchoStateNetwork,
    seed: int,
    space: Optional[SearchSpace] = None,
):
    return truncate(
        tuned,
        data.split,
        config.prune,
        config.ridge,
        space=space or config.search_space,
        seed=seed,
    )


def evaluate(
    config: ExperimentConfig,
    esn: EchoStateNetwork,
    data: ExperimentData,
    psd: bool = False,
) -> DenoisingReport:
    """Denoising report of `esn` on the test segment (washout rows excluded)"""
    test = data.test
    return denoising_gain(
        test.targets,
        test.inputs,
        predict(esn, test.inputs),
        per_channel=config.per_channel_gain,
        skip=esn.washout,
        psd=psd,
        sample_rate=config.sample_rate,
        segment_length=config.psd_segment,
    )


# MARK: - File-based pipeline

def _write_report(report: DenoisingReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2))
    return path


def load_experiment(config: ExperimentConfig, seed: int) -> ExperimentData:
    clean, train_noisy = load_generated(config, config.train_noise[0], seed)
    _, test_noisy = load_generated(config, config.test_noise[0], seed)
    return split_data(config, clean, train_noisy, test_noisy)


def run_pipeline(config: ExperimentConfig, stage: str, seed: int, jobs: int = 1) -> StageResult:
    """
    Run one stage for one seed from generated data and write its artifacts

    `truncated` starts from the tuned model file of the same seed.

    Raises:
        OrchestrationError: dataset or tuned model file missing
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage '{stage}' (expected one of {', '.join(STAGES)})")
    layout = RunLayout(config.output_dir)
    data = load_experiment(config, seed)

    history, audit, selection = None, [], None
    if stage == "trained":
        esn, selection = fit_trained(config, data, seed)
    elif stage == "tuned":
        esn, selection, history = fit_tuned(config, data, seed, jobs=jobs)
        write_history(history.history, layout.history(seed))
    else:
        tuned_path = layout.model("tuned", seed)
        if not tuned_path.exists():
            raise OrchestrationError(f"tuned model {tuned_path} is missing; run `tune` first")
        esn, audit = fit_truncated(config, data, load_model(tuned_path), seed)
        write_audit(audit, layout.audit(seed))

    if selection is not None:
        write_cv_report(selection, layout.cv_report(stage, seed))
    report = evaluate(config, esn, data, psd=config.system == "adex")
    save_model(esn, layout.model(stage, seed), {"stage": stage, "config_hash": config.config_hash()})
    _write_report(report, layout.report(stage, seed))
    logger.info(
        f"✓ {stage} seed {seed}: NMSE {report.nmse:.4e}, gain {report.denoising_gain:.3f}, N={esn.n_nodes}"
    )
    return StageResult(stage, seed, esn, report, history, audit)


def stage_manifest(config: ExperimentConfig, stage: str, results: List[StageResult]) -> RunManifest:
    layout = RunLayout(config.output_dir)
    manifest = RunManifest(
        command=stage,
        config_hash=config.config_hash(),
        seeds=[r.seed for r in results],
        stage=stage,
    )
    for result in results:
        manifest.add("models", layout.model(stage, result.seed))
        manifest.add("reports", layout.report(stage, result.seed))
        if stage == "tuned":
            manifest.add("history", layout.history(result.seed))
        if stage == "truncated":
            manifest.add("audit", layout.audit(result.seed))
    manifest.write(layout.manifest(stage))
    return manifest


# MARK: - EKF baseline

def run_ekf_baseline(config: ExperimentConfig, seed: int, jobs: int = 1) -> DenoisingReport:
    """
    Lorenz EKF on the test segment

    R is the variance of the injected noise on the training segment; q is
    chosen on the validation segment.
    """
    if config.system != "lorenz":
        raise ConfigError("the EKF baseline is implemented for the Lorenz system only")
    layout = RunLayout(config.output_dir)
    clean, train_noisy = load_generated(config, config.train_noise[0], seed)
    _, test_noisy = load_generated(config, config.test_noise[0], seed)
    data = split_data(config, clean, train_noisy, test_noisy)
    observed = tuple(config.observed)

    fit = data.split.train[0]
    noise_variance = np.var(fit.inputs.values - fit.clean_inputs.values, axis=0)
    validation = data.split.validation
    q, _ = tune_process_noise(
        config.lorenz,
        validation.inputs,
        _clean_rows(clean, validation.inputs),
        noise_variance,
        grid=config.ekf.q_grid,
        jacobian_mode=config.ekf.jacobian_mode,
        jobs=jobs,
    )

    test = data.test
    model = lorenz_filter_model(config.lorenz, config.dt, observed, q, noise_variance, config.ekf.jacobian_mode)
    x0, P0 = lorenz_initial_guess(test.inputs.values[0], observed, config.lorenz)
    result = run_ekf(model, x0, P0, test.inputs)
    write_estimates(result, layout.ekf(seed))

    estimates = result.estimates.select(config.targets)
    report = denoising_gain(
        test.targets,
        test.inputs,
        estimates,
        per_channel=config.per_channel_gain,
        skip=config.washout,
    )
    _write_report(report, layout.report("ekf", seed))
    logger.info(f"✓ ekf seed {seed}: q={q:g}, NMSE {report.nmse:.4e}, gain {report.denoising_gain:.3f}")
    return report


def _clean_rows(clean: Trajectory, like: Trajectory) -> Trajectory:
    """Rows of `clean` on the time grid of `like`"""
    start = int(round((like.t0 - clean.t0) / clean.dt))
    return clean.slice(start, start + like.n_steps)


# MARK: - Denoising with a saved model

def denoise_file(model_path, input_path, output_path, clean_path=None, skip: Optional[int] = None):
    """
    Apply a saved reservoir to a noisy CSV

    Input columns are matched by name to the model's input channels. With
    `clean_path`, a report comparing against the clean CSV is returned.
    """
    esn = load_model(model_path)
    noisy = read_csv(input_path)
    inputs = noisy.select(esn.input_channels) if esn.input_channels else noisy
    reconstruction = predict(esn, inputs)
    write_csv(reconstruction, output_path)
    if clean_path is None:
        return None
    clean = read_csv(clean_path)
    report = denoising_gain(
        clean,
        inputs,
        reconstruction,
        skip=esn.washout if skip is None else skip,
    )
    return report


def summarize_reports(output_dir) -> List[dict]:
    """One row per report file below `<output_dir>/reports`"""
    rows = []
    for path in sorted(Path(output_dir, "reports").glob("*/seed*.json")):
        report = DenoisingReport.model_validate(json.loads(path.read_text()))
        rows.append({
            "stage": path.parent.name,
            "seed": int(path.stem.removeprefix("seed")),
            "nmse": report.nmse,
            "snr_test": report.snr_test,
            "snr_reconstructed": report.snr_reconstructed,
            "gain": report.denoising_gain,
        })
    return rows


def write_psd_curves(report: DenoisingReport, directory: Path) -> List[Path]:
    return [write_psd(curve, directory / f"{curve.label}_psd.csv") for curve in report.psd]
