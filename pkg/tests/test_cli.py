import json

import pytest
from loguru import logger

from rc_denoise.cli import build_parser, main
from rc_denoise.experiments.datasets import RunLayout


@pytest.fixture(autouse=True)
def drop_log_sinks():
    # main() binds a sink to the captured stderr of the running test
    yield
    logger.remove()


def envelope(captured) -> dict:
    lines = [line for line in captured.err.splitlines() if line.startswith('{"success"')]
    assert lines, captured.err
    return json.loads(lines[-1])


@pytest.fixture
def config_file(small_config, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(small_config.model_dump_json())
    return path


class TestParser:
    def test_denoise_requires_paths(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["denoise", "--model", "m.json"])

    def test_common_options(self):
        args = build_parser().parse_args(["train", "--seed", "3", "--jobs", "2", "--stage", "tuned"])
        assert (args.command, args.seed, args.jobs, args.stage) == ("train", 3, 2, "tuned")


class TestCommands:
    def test_generate_then_train(self, config_file, small_config, capsys):
        out = small_config.output_dir
        assert main(["generate", "--config", str(config_file), "--log-level", "ERROR"]) == 0
        assert main(["train", "--config", str(config_file), "--log-level", "ERROR"]) == 0
        layout = RunLayout(out)
        assert layout.model("trained", 0).exists()
        assert layout.manifest("trained").exists()

        assert main(["report", "--config", str(config_file), "--log-level", "ERROR"]) == 0
        assert (out / "summary.csv").read_text().startswith("stage,seed,nmse")
        assert (out / "nmse.gp").exists()
        assert "trained" in capsys.readouterr().out

    def test_denoise_command(self, config_file, small_config, tmp_path, capsys):
        main(["generate", "--config", str(config_file), "--log-level", "ERROR"])
        main(["train", "--config", str(config_file), "--log-level", "ERROR"])
        capsys.readouterr()
        layout = RunLayout(small_config.output_dir)
        output = tmp_path / "denoised.csv"
        code = main([
            "denoise",
            "--model", str(layout.model("trained", 0)),
            "--input", str(layout.noisy(small_config.train_noise[0], 0)),
            "--output", str(output),
            "--clean", str(layout.clean),
            "--log-level", "ERROR",
        ])
        assert code == 0
        assert output.exists()
        assert output.with_suffix(".report.json").exists()
        assert set(json.loads(capsys.readouterr().out)) == {"nmse", "gain"}

    def test_out_overrides_config(self, config_file, tmp_path):
        target = tmp_path / "elsewhere"
        assert main(["generate", "--config", str(config_file), "--out", str(target), "--log-level", "ERROR"]) == 0
        assert RunLayout(target).clean.exists()


class TestExitCodes:
    def test_missing_dataset_is_orchestration_error(self, config_file, capsys):
        assert main(["train", "--config", str(config_file), "--log-level", "ERROR"]) == 1
        error = envelope(capsys.readouterr())
        assert error["success"] is False
        assert error["error"]["code"] == "ORCHESTRATION_ERROR"

    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"system": "rossler"}))
        assert main(["generate", "--config", str(path), "--log-level", "ERROR"]) == 2
        assert envelope(capsys.readouterr())["error"]["code"] == "CONFIG_ERROR"

    def test_numeric_failure_exits_3(self, tmp_path, capsys):
        path = tmp_path / "literal.json"
        path.write_text(json.dumps({
            "system": "adex",
            "adex": {"delta_t": -2.0},
            "output_dir": str(tmp_path / "run"),
        }))
        assert main(["generate", "--config", str(path), "--log-level", "ERROR"]) == 3
        assert envelope(capsys.readouterr())["error"]["code"] == "INTEGRATION_BLOWUP"

    def test_unreadable_model_file(self, tmp_path, capsys):
        model = tmp_path / "model.json"
        model.write_text("{")
        code = main([
            "denoise",
            "--model", str(model),
            "--input", str(tmp_path / "in.csv"),
            "--output", str(tmp_path / "out.csv"),
            "--out", str(tmp_path / "run"),
            "--log-level", "ERROR",
        ])
        assert code == 1
        assert envelope(capsys.readouterr())["error"]["code"] == "MODEL_PARSE"
