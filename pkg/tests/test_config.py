import json

import pytest

from relvox.config import default_config, load_config, validate_config
from relvox.errors import ConfigError


def write(tmp_path, doc):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


class TestRunConfig:
    def test_empty_document_gets_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, {}))
        assert cfg["train"]["epochs"] == 80
        assert cfg["model"]["depth"] == 2
        assert cfg["metrics"]["family"] == "pass"

    def test_partial_section_merges(self, tmp_path):
        cfg = load_config(write(tmp_path, {"train": {"epochs": 5}}))
        assert cfg["train"]["epochs"] == 5
        assert cfg["train"]["lr"] == 0.01

    def test_unknown_top_level_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="modle"):
            load_config(write(tmp_path, {"modle": {}}))

    def test_unknown_nested_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="train"):
            load_config(write(tmp_path, {"train": {"learning_rate": 0.1}}))

    def test_wrong_type_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="epochs"):
            load_config(write(tmp_path, {"train": {"epochs": "eighty"}}))

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)

    def test_default_config_validates(self):
        validate_config(default_config())

    def test_filters_are_strings(self, tmp_path):
        cfg = load_config(write(tmp_path, {"filters": ["clamp:0.2"]}))
        assert cfg["filters"] == ["clamp:0.2"]
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, {"filters": [0.2]}))
