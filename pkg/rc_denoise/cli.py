"""
rc-denoise command line interface

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 other
errors. Failures print a one-line JSON error envelope to stderr.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from loguru import logger

from rc_denoise import __version__
from rc_denoise.exceptions import RCDenoiseError
from rc_denoise.experiments.config import STAGES, ExperimentConfig, RunManifest, load_config
from rc_denoise.experiments.datasets import RunLayout, generate_dataset
from rc_denoise.experiments.pipeline import (
    denoise_file,
    run_ekf_baseline,
    run_pipeline,
    stage_manifest,
    summarize_reports,
)
from rc_denoise.experiments.plots import write_nmse_script
from rc_denoise.experiments.studies import gain_matrix, noise_color_study, parameter_sweep
from rc_denoise.log import configure_logging
from rc_denoise.runner import TaskRunner

COMMAND_STAGES = {"train": "trained", "tune": "tuned", "prune": "truncated"}


# MARK: - Commands

def cmd_generate(config: ExperimentConfig, args) -> None:
    generate_dataset(config)


def cmd_stage(config: ExperimentConfig, args) -> None:
    stage = COMMAND_STAGES[args.command]
    # nested parallelism: seeds run in parallel, each optimizer runs sequentially
    inner_jobs = 1 if len(config.seeds) > 1 else config.jobs
    results = TaskRunner(config.jobs).run({
        f"{stage} seed {seed}": (lambda seed=seed: run_pipeline(config, stage, seed, jobs=inner_jobs))
        for seed in config.seeds
    })
    stage_manifest(config, stage, list(results.values()))


def cmd_ekf(config: ExperimentConfig, args) -> None:
    layout = RunLayout(config.output_dir)
    inner_jobs = 1 if len(config.seeds) > 1 else config.jobs
    TaskRunner(config.jobs).run({
        f"ekf seed {seed}": (lambda seed=seed: run_ekf_baseline(config, seed, jobs=inner_jobs))
        for seed in config.seeds
    })
    manifest = RunManifest(command="ekf", config_hash=config.config_hash(), seeds=config.seeds)
    for seed in config.seeds:
        manifest.add("estimates", layout.ekf(seed))
        manifest.add("reports", layout.report("ekf", seed))
    manifest.write(layout.manifest("ekf"))


def cmd_denoise(config: ExperimentConfig, args) -> None:
    report = denoise_file(args.model, args.input, args.output, clean_path=args.clean)
    if report is not None:
        report_path = Path(args.report or Path(args.output).with_suffix(".report.json"))
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(report.model_dump_json(indent=2))
        print(json.dumps({"nmse": report.nmse, "gain": report.denoising_gain}))


def cmd_gain_matrix(config: ExperimentConfig, args) -> None:
    matrix, _ = gain_matrix(config)
    print(json.dumps({"train": matrix.train_labels, "test": matrix.test_labels, "gain": matrix.gains.tolist()}))


def cmd_sweep(config: ExperimentConfig, args) -> None:
    parameter_sweep(config)


def cmd_noise_study(config: ExperimentConfig, args) -> None:
    study, _ = noise_color_study(config)
    print(json.dumps({color: {"mean": m, "std": s} for color, (m, s) in study.summary().items()}))


def cmd_report(config: ExperimentConfig, args) -> None:
    layout = RunLayout(config.output_dir)
    rows = summarize_reports(config.output_dir)
    summary = layout.root / "summary.csv"
    summary.parent.mkdir(parents=True, exist_ok=True)
    header = ["stage", "seed", "nmse", "snr_test", "snr_reconstructed", "gain"]
    lines = [",".join(header)]
    lines += [",".join(str(row[key]) for key in header) for row in rows]
    summary.write_text("\n".join(lines) + "\n")
    write_nmse_script(summary, layout.root / "nmse.gp")

    by_stage: Dict[str, List[dict]] = {}
    for row in rows:
        by_stage.setdefault(row["stage"], []).append(row)
    for stage, stage_rows in by_stage.items():
        mean_nmse = sum(r["nmse"] for r in stage_rows) / len(stage_rows)
        mean_gain = sum(r["gain"] for r in stage_rows) / len(stage_rows)
        print(f"{stage:<10} seeds={len(stage_rows):<3} mean NMSE={mean_nmse:.4e} mean gain={mean_gain:.3f}")


COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], None]] = {
    "generate": cmd_generate,
    "train": cmd_stage,
    "tune": cmd_stage,
    "prune": cmd_stage,
    "denoise": cmd_denoise,
    "ekf": cmd_ekf,
    "gain-matrix": cmd_gain_matrix,
    "sweep": cmd_sweep,
    "noise-study": cmd_noise_study,
    "report": cmd_report,
}

HELP = {
    "generate": "simulate the system and write clean/noisy datasets",
    "train": "fit the fixed-hyperparameter reservoir",
    "tune": "optimize hyperparameters, then fit",
    "prune": "truncate the tuned reservoir",
    "denoise": "apply a saved model to a noisy CSV",
    "ekf": "run the Extended Kalman Filter baseline",
    "gain-matrix": "training-noise × test-noise gain matrix",
    "sweep": "gain across a Prandtl-number grid",
    "noise-study": "compare white, violet and pink noise",
    "report": "summarize all stage reports",
}


# MARK: - Argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (.json or .toml)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
    common.add_argument("--stage", choices=STAGES, help="model stage used by the studies")
    common.add_argument("--jobs", type=int, help="parallel workers (capped by RC_DENOISE_THREADS)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default: $LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(prog="rc-denoise", description="Truncated reservoir computing denoiser")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=HELP[name])
        if name == "denoise":
            sub.add_argument("--model", type=Path, required=True)
            sub.add_argument("--input", type=Path, required=True)
            sub.add_argument("--output", type=Path, required=True)
            sub.add_argument("--clean", type=Path, help="clean CSV for a denoising report")
            sub.add_argument("--report", type=Path, help="report path (default: <output>.report.json)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(
            args.config,
            output_dir=args.out,
            seeds=[args.seed] if args.seed is not None else None,
            stage=args.stage,
            jobs=args.jobs,
        )
        logger.info(f"rc-denoise {__version__}: {args.command} ({config.system}, seeds {config.seeds})")
        COMMANDS[args.command](config, args)
        return 0
    except RCDenoiseError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps(e.to_envelope()), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps({"success": False, "error": {"code": "IO_ERROR", "message": str(e)}}), file=sys.stderr)
        return 1
    except Exception as e:
        logger.opt(exception=e).error(f"Unhandled exception: {e}")
        envelope = {"success": False, "error": {"code": "INTERNAL_ERROR", "message": str(e)}}
        print(json.dumps(envelope), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
