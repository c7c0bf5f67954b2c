import csv
import json

import numpy as np
import pytest

from rc_denoise.exceptions import ConfigError, OrchestrationError
from rc_denoise.experiments.config import ExperimentConfig, ExtraTrainingSet
from rc_denoise.experiments.datasets import (
    RunLayout,
    corrupt,
    generate_dataset,
    load_generated,
    simulate,
    split_data,
)
from rc_denoise.experiments.pipeline import (
    denoise_file,
    evaluate,
    fit_trained,
    run_ekf_baseline,
    run_pipeline,
    stage_manifest,
    summarize_reports,
)
from rc_denoise.experiments.studies import gain_matrix, noise_color_study, parameter_sweep
from rc_denoise.models import HyperParams, NoiseSpec
from rc_denoise.trajectory import read_csv


class TestDatasets:
    def test_default_lorenz_generation(self, tmp_path):
        manifest = generate_dataset(ExperimentConfig(output_dir=tmp_path / "a"))
        layout = RunLayout(tmp_path / "a")
        clean = read_csv(layout.clean)
        assert clean.n_steps == 10001
        assert clean.channel_names == ("x", "y", "z")
        noisy_path = layout.noisy(NoiseSpec(target_snr=4.0), 0)
        assert read_csv(noisy_path).channel_names == ("x", "y")
        assert str(noisy_path) in manifest.artifacts["noisy"]
        assert layout.manifest("generate").exists()

    def test_generation_is_byte_identical(self, small_config, tmp_path):
        first = generate_dataset(small_config.model_copy(update={"output_dir": tmp_path / "a"}))
        second = generate_dataset(small_config.model_copy(update={"output_dir": tmp_path / "b"}))
        for a, b in zip(first.artifacts["noisy"], second.artifacts["noisy"]):
            assert open(a, "rb").read() == open(b, "rb").read()

    def test_noise_file_is_noisy_minus_clean(self, small_config):
        generate_dataset(small_config)
        layout = RunLayout(small_config.output_dir)
        spec = small_config.train_noise[0]
        clean, noisy = load_generated(small_config, spec, 0)
        noise = read_csv(layout.noise(spec, 0))
        np.testing.assert_allclose(noise.values, noisy.values - clean.select(["x", "y"]).values, atol=1e-12)

    def test_adex_writes_spike_sidecar(self, tmp_path):
        config = ExperimentConfig(system="adex", duration=60.0, split_time=30.0, output_dir=tmp_path)
        generate_dataset(config)
        assert RunLayout(tmp_path).spikes.exists()

    def test_missing_dataset_names_file(self, small_config):
        with pytest.raises(OrchestrationError) as excinfo:
            run_pipeline(small_config, "trained", 0)
        assert "clean.csv" in str(excinfo.value)

    def test_split_segments(self, small_config, small_data):
        fit = small_data.split.train[0]
        validation = small_data.split.validation
        total = fit.inputs.n_steps + validation.inputs.n_steps
        assert total == int(round(small_config.split_time / small_config.dt))
        assert validation.inputs.n_steps == int(round(0.2 * total))
        assert small_data.test.inputs.t0 == pytest.approx(small_config.split_time)
        assert small_data.test.targets.channel_names == ("x", "y", "z")

    def test_train_and_test_noise_independent(self, small_config):
        clean = simulate(small_config)
        spec = NoiseSpec(target_snr=4.0)
        _, train_noise = corrupt(clean, ["x", "y"], spec, 0)
        _, test_noise = corrupt(clean, ["x", "y"], spec, 0, "test")
        assert not np.allclose(train_noise, test_noise)


class TestStages:
    def test_trained_pipeline(self, small_config):
        generate_dataset(small_config)
        result = run_pipeline(small_config, "trained", 0)
        layout = RunLayout(small_config.output_dir)
        assert layout.model("trained", 0).exists()
        assert layout.cv_report("trained", 0).exists()
        report = json.loads(layout.report("trained", 0).read_text())
        assert report["denoising_gain"] == pytest.approx(result.report.denoising_gain)
        assert result.report.denoising_gain > 1.0
        stage_manifest(small_config, "trained", [result])
        assert layout.manifest("trained").exists()

    def test_tuned_then_truncated(self, small_config):
        generate_dataset(small_config)
        tuned = run_pipeline(small_config, "tuned", 0)
        layout = RunLayout(small_config.output_dir)
        with open(layout.history(0)) as handle:
            assert len(list(csv.reader(handle))) == 1 + small_config.hyperopt_budget
        assert 40 <= tuned.esn.n_nodes <= 60

        truncated = run_pipeline(small_config, "truncated", 0)
        assert layout.audit(0).exists()
        assert truncated.esn.n_nodes <= tuned.esn.n_nodes
        assert truncated.esn.edge_count <= tuned.esn.edge_count
        assert all(e.nmse_after <= 1.01 * e.nmse_before for e in truncated.audit if e.accepted)

    def test_truncated_needs_tuned_model(self, small_config):
        generate_dataset(small_config)
        with pytest.raises(OrchestrationError):
            run_pipeline(small_config, "truncated", 0)

    def test_unknown_stage(self, small_config):
        with pytest.raises(ConfigError):
            run_pipeline(small_config, "pruned", 0)

    def test_zero_leakage_reservoir_outputs_nothing(self, small_config, small_data):
        config = small_config.model_copy(update={"reservoir": HyperParams(n_nodes=60, leakage=0.0)})
        esn, _ = fit_trained(config, small_data, 0)
        assert evaluate(config, esn, small_data).nmse == pytest.approx(1.0)


class TestDenoiseFile:
    def test_saved_model_on_csv(self, small_config, tmp_path):
        generate_dataset(small_config)
        run_pipeline(small_config, "trained", 0)
        layout = RunLayout(small_config.output_dir)
        output = tmp_path / "denoised.csv"
        report = denoise_file(
            layout.model("trained", 0),
            layout.noisy(small_config.train_noise[0], 0),
            output,
            clean_path=layout.clean,
        )
        assert read_csv(output).channel_names == ("x", "y", "z")
        assert report.channel_names == ["x", "y"]
        assert denoise_file(layout.model("trained", 0), layout.noisy(small_config.train_noise[0], 0), output) is None

    def test_summary_rows(self, small_config):
        generate_dataset(small_config)
        run_pipeline(small_config, "trained", 0)
        rows = summarize_reports(small_config.output_dir)
        assert [(r["stage"], r["seed"]) for r in rows] == [("trained", 0)]


class TestEKFBaseline:
    def test_lorenz(self, small_config):
        config = small_config.model_copy(update={"ekf": small_config.ekf.model_copy(update={"q_grid": [1e-4, 1e-2]})})
        generate_dataset(config)
        report = run_ekf_baseline(config, 0)
        layout = RunLayout(config.output_dir)
        assert layout.ekf(0).exists()
        assert layout.report("ekf", 0).exists()
        assert report.denoising_gain > 1.0

    def test_adex_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_ekf_baseline(ExperimentConfig(system="adex", output_dir=tmp_path), 0)


class TestStudies:
    def trained_config(self, small_config):
        return small_config.model_copy(update={"stage": "trained"})

    def test_single_cell_gain_matrix_matches_direct_evaluation(self, small_config):
        config = self.trained_config(small_config)
        matrix, _ = gain_matrix(config)
        assert matrix.gains.shape == (1, 1)

        clean = simulate(config)
        spec = config.train_noise[0]
        train_noisy, _ = corrupt(clean, config.observed, spec, 0)
        test_noisy, _ = corrupt(clean, config.observed, spec, 0, "test")
        data = split_data(config, clean, train_noisy, test_noisy)
        esn, _ = fit_trained(config, split_data(config, clean, train_noisy), 0)
        assert matrix.gains[0, 0] == evaluate(config, esn, data).denoising_gain
        assert (config.output_dir / "studies" / "gain_matrix" / "gain_matrix.csv").exists()

    def test_square_matrix_asymmetry(self, small_config):
        config = self.trained_config(small_config).model_copy(update={
            "train_noise": [NoiseSpec(target_snr=2.0), NoiseSpec(target_snr=8.0)],
            "test_noise": [NoiseSpec(target_snr=2.0), NoiseSpec(target_snr=8.0)],
        })
        matrix, _ = gain_matrix(config)
        assert matrix.gains.shape == (2, 2)
        assert matrix.asymmetry >= 0.0

    def test_sweep_at_training_sigma_equals_matrix_diagonal(self, small_config):
        config = self.trained_config(small_config)
        sweep, _ = parameter_sweep(config)
        matrix, _ = gain_matrix(config)
        assert sweep.gains[0, 0] == matrix.gains[0, 0]
        assert sweep.maxima[10.0].size > 0
        directory = config.output_dir / "studies" / "sweep"
        assert (directory / "gain_vs_sigma.csv").exists()
        assert (directory / "bifurcation.csv").exists()
        assert (directory / "sweep.gp").exists()

    def test_sweep_needs_lorenz(self, tmp_path):
        with pytest.raises(ConfigError):
            parameter_sweep(ExperimentConfig(system="adex", output_dir=tmp_path))

    def test_noise_colors(self, small_config):
        config = self.trained_config(small_config)
        study, manifest = noise_color_study(config)
        assert set(study.summary()) == {"violet", "white", "pink"}
        labels = [c.label for c in study.reports["pink"][0].psd]
        assert labels[:4] == ["noisy_x", "denoised_x", "residual_x", "noise_x"]
        assert len(manifest.artifacts["reports"]) == 3


@pytest.mark.slow
class TestStageOrdering:
    """Trained, tuned and truncated Lorenz reservoirs at N=300 over five seeds"""

    def test_mean_log_nmse_ordering(self, tmp_path):
        config = ExperimentConfig(
            output_dir=tmp_path,
            seeds=[0, 1, 2, 3, 4],
            reservoir=HyperParams(n_nodes=300),
            search_space={"n_nodes": (300, 300)},
            hyperopt_budget=40,
            prune={"accept_tolerance": 0.0},
        )
        generate_dataset(config)
        log_nmse = {}
        for stage in ("trained", "tuned", "truncated"):
            results = [run_pipeline(config, stage, seed) for seed in config.seeds]
            log_nmse[stage] = np.mean([np.log10(r.report.nmse) for r in results])
        assert log_nmse["truncated"] <= log_nmse["tuned"] <= log_nmse["trained"]
        assert log_nmse["tuned"] <= log_nmse["trained"] - 0.3


@pytest.mark.slow
class TestEKFComparison:
    def test_truncated_reservoir_beats_ekf_at_snr_one(self, tmp_path):
        noise = [NoiseSpec(target_snr=1.0)]
        config = ExperimentConfig(
            output_dir=tmp_path, seeds=[0, 1, 2, 3, 4], train_noise=noise, test_noise=noise, hyperopt_budget=30
        )
        generate_dataset(config)
        wins = 0
        for seed in config.seeds:
            run_pipeline(config, "tuned", seed)
            reservoir = run_pipeline(config, "truncated", seed).report
            wins += reservoir.nmse <= run_ekf_baseline(config, seed).nmse
        assert wins >= 3


@pytest.mark.slow
class TestGainMatrix:
    def test_matched_noise_grid(self, tmp_path):
        levels = [NoiseSpec(target_snr=snr) for snr in (1.0, 4.0, 16.0)]
        config = ExperimentConfig(
            output_dir=tmp_path, stage="trained", train_noise=levels, test_noise=levels, seeds=[0, 1, 2]
        )
        matrix, _ = gain_matrix(config)
        assert np.all(np.diag(matrix.gains) > 1.0)
        assert matrix.asymmetry > 0.05


@pytest.mark.slow
class TestPrandtlSweep:
    def test_peak_near_training_sigma(self, tmp_path):
        config = ExperimentConfig(
            output_dir=tmp_path,
            stage="trained",
            sigma_grid=[4.0, 6.0, 8.0, 10.0, 12.0, 14.0],
            seeds=[0, 1, 2],
        )
        result, _ = parameter_sweep(config)
        peak = result.sigmas[int(np.argmax(result.gains[:, 0]))]
        assert peak in (8.0, 10.0, 12.0)

    def test_extra_training_set_lifts_gain_at_its_sigma(self, tmp_path):
        base = dict(stage="trained", sigma_grid=[8.0], seeds=[0, 1, 2])
        plain, _ = parameter_sweep(ExperimentConfig(output_dir=tmp_path / "plain", **base))
        extended, _ = parameter_sweep(
            ExperimentConfig(output_dir=tmp_path / "extra", extra_training=[ExtraTrainingSet(sigma=8.0)], **base)
        )
        assert extended.gains[0, 0] > plain.gains[0, 0]


@pytest.mark.slow
class TestAdExNoiseColors:
    """Full pipeline per color, N in [50, 100], five seeds"""

    @pytest.fixture(scope="class")
    def summary(self, tmp_path_factory):
        config = ExperimentConfig(
            system="adex", output_dir=tmp_path_factory.mktemp("colors"), seeds=[0, 1, 2, 3, 4], hyperopt_budget=20
        )
        study, _ = noise_color_study(config)
        return {color: mean for color, (mean, _) in study.summary().items()}

    def test_ordering(self, summary):
        assert summary["violet"] > summary["white"] > summary["pink"] > 1.0

    @pytest.mark.parametrize("color, low, high", [("violet", 8.0, 17.0), ("white", 3.5, 8.0), ("pink", 1.0, 1.7)])
    def test_gain_neighbourhood(self, summary, color, low, high):
        assert low <= summary[color] <= high
