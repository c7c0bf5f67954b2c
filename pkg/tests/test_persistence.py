import json

import numpy as np
import pytest

from rc_denoise.exceptions import ModelParseError, SchemaVersionError
from rc_denoise.models import HyperParams, RidgeConfig
from rc_denoise.services.persistence import SCHEMA_VERSION, load_model, save_model
from rc_denoise.services.reservoir import build_reservoir, remove_nodes
from rc_denoise.services.training import DenoisingDataset, fit_readout, predict, prepare_reservoir


@pytest.fixture
def trained_model(lorenz_short):
    dataset = DenoisingDataset(lorenz_short.select(["x", "y"]), lorenz_short)
    esn = prepare_reservoir(HyperParams(n_nodes=40), [dataset], seed=3, bias=0.5)
    return fit_readout(esn, [dataset], RidgeConfig(lambda_grid=[1e-6, 1e-3], folds=2))[0]


class TestRoundTrip:
    def test_predictions_bitwise_identical(self, trained_model, lorenz_short, tmp_path):
        path = save_model(trained_model, tmp_path / "model.json", {"stage": "trained"})
        loaded = load_model(path)
        inputs = lorenz_short.select(["x", "y"]).slice(0, 1000)
        np.testing.assert_array_equal(predict(loaded, inputs).values, predict(trained_model, inputs).values)
        assert loaded.hyper == trained_model.hyper
        assert loaded.output_channels == ("x", "y", "z")
        assert loaded.ridge_lambda == trained_model.ridge_lambda

    def test_trained_and_loaded_share_memory_layout(self, trained_model, tmp_path):
        loaded = load_model(save_model(trained_model, tmp_path / "model.json"))
        for name in ("w_res", "w_in", "w_out"):
            original, restored = getattr(trained_model, name), getattr(loaded, name)
            assert original.flags.c_contiguous and restored.flags.c_contiguous
            assert original.dtype == restored.dtype == np.float64
            np.testing.assert_array_equal(original, restored)

    def test_pruned_ids_survive(self, tmp_path):
        esn = remove_nodes(build_reservoir(HyperParams(n_nodes=12), 1, seed=0), [2, 4])
        loaded = load_model(save_model(esn, tmp_path / "pruned.json"))
        np.testing.assert_array_equal(loaded.node_ids, esn.node_ids)
        assert loaded.next_node_id == 12
        assert not loaded.is_trained

    def test_file_records_schema_version(self, trained_model, tmp_path):
        path = save_model(trained_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        assert document["schema_version"] == SCHEMA_VERSION
        assert "code_version" in document


class TestLoadErrors:
    def test_truncated_file(self, trained_model, tmp_path):
        path = save_model(trained_model, tmp_path / "model.json")
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelParseError) as excinfo:
            load_model(path)
        assert excinfo.value.offset is not None
        assert 0 < excinfo.value.offset <= len(text) // 2
        assert "byte offset" in str(excinfo.value)

    def test_unknown_schema_version(self, trained_model, tmp_path):
        path = save_model(trained_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        document["schema_version"] = 99
        path.write_text(json.dumps(document))
        with pytest.raises(SchemaVersionError):
            load_model(path)

    def test_missing_field(self, trained_model, tmp_path):
        path = save_model(trained_model, tmp_path / "model.json")
        document = json.loads(path.read_text())
        del document["w_res"]
        path.write_text(json.dumps(document))
        with pytest.raises(ModelParseError):
            load_model(path)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(ModelParseError):
            load_model(path)
