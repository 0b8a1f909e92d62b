import argparse
import json

import pytest

from src.core.config import RunConfig, parse_int_list
from src.core.errors import ConfigError, ParseError
from src.core.utils import format_float, load_config_file, read_csv, write_csv, write_json
from src.services.fed_trainer import RecordLevel


class TestParseIntList:
    @pytest.mark.parametrize(
        "value, expected",
        [(3, [3]), ("0,1,2", [0, 1, 2]), ("0-3", [0, 1, 2, 3]), ([4, 5], [4, 5]), ("1, 5-6", [1, 5, 6])],
    )
    def test_forms(self, value, expected):
        assert parse_int_list(value, "seeds") == expected

    def test_garbage(self):
        with pytest.raises(ConfigError):
            parse_int_list("a,b", "seeds")


class TestRunConfig:
    def test_defaults_validate(self):
        config = RunConfig().validate()
        assert config.record_level is RecordLevel.BOUNDS
        assert config.partition_mode == ("iid", None)
        assert config.audit_radius is None

    def test_skewed_partition_mode(self):
        assert RunConfig(partition="skewed:0.5").partition_mode == ("skewed", 0.5)

    @pytest.mark.parametrize("partition", ["skewed", "skewed:-1", "skewed:x", "blocks"])
    def test_bad_partition_mode(self, partition):
        with pytest.raises(ConfigError):
            RunConfig(partition=partition).validate()

    def test_decomposition_radius_forms(self):
        assert RunConfig(decomposition_radius="measured").audit_radius == "measured"
        assert RunConfig(decomposition_radius="0.25").audit_radius == 0.25
        with pytest.raises(ConfigError):
            RunConfig(decomposition_radius="0").validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"seeds": []},
            {"seeds": [1, 1]},
            {"clients": 20},
            {"d": 1},
            {"eta_local": 0.0},
            {"eps": 0.0},
            {"safety_c": 2.0},
            {"delta": 1.0},
            {"record": "everything"},
            {"radius_mode": "fixed"},
            {"clients_list": [0]},
            {"command": "verify"},
        ],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigError):
            RunConfig(**overrides).validate()

    def test_missing_path_is_an_io_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig(data=str(tmp_path / "nope.csv")).validate()

    def test_from_mapping_coerces_types(self):
        config = RunConfig.from_mapping(
            {"n": "8", "eta_local": "0.01", "seeds": "0-2", "audits": "false", "rounds": 4.0}
        )
        assert (config.n, config.eta_local, config.seeds) == (8, 0.01, [0, 1, 2])
        assert config.audits is False and config.rounds == 4

    def test_from_mapping_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown option"):
            RunConfig.from_mapping({"learning_rate": 1})

    def test_from_mapping_rejects_fractional_int(self):
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"n": 2.5})

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"n": 8, "local-steps": 3, "width": 64}))
        args = argparse.Namespace(command="train", config=str(path), n=10, width=None)
        config = RunConfig.from_args(args)
        assert (config.n, config.local_steps, config.width) == (10, 3, 64)

    def test_train_config(self):
        train = RunConfig(clients=2).train_config(3, 0.1, 1.0, 7, record_level="loss-only")
        assert (train.num_clients, train.seed, train.rounds) == (2, 3, 7)
        assert train.record_level is RecordLevel.LOSS_ONLY

    def test_seed_dirs(self):
        assert RunConfig(out="runs/x").seed_dir(4).as_posix() == "runs/x/seed-4"


class TestConfigFiles:
    def test_key_value_file(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("# comment\n\nn = 8\nrecord = full-states\nplot = true\n")
        assert load_config_file(path) == {"n": 8, "record": "full-states", "plot": True}

    def test_missing_equals_sign(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("n = 8\nwidth\n")
        with pytest.raises(ParseError) as info:
            load_config_file(path)
        assert info.value.line == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"n": 8,\n "d": }\n')
        with pytest.raises(ParseError):
            load_config_file(path)

    def test_json_must_be_an_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config_file(tmp_path / "absent.conf")


class TestWriters:
    @pytest.mark.parametrize(
        "value, text",
        [(0.1, "0.1"), (1e-20, "1e-20"), (float("nan"), "nan"), (float("-inf"), "-inf"), (3, "3.0")],
    )
    def test_format_float(self, value, text):
        assert format_float(value) == text

    def test_json_keys_are_sorted(self, tmp_path):
        path = write_json({"b": 1, "a": 2}, tmp_path / "x.json")
        assert path.read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'

    def test_csv_reload_keeps_line_numbers(self, tmp_path):
        path = write_csv(tmp_path / "x.csv", ["k", "v"], [[1, 0.5], [2, 0.25]])
        header, rows = read_csv(path)
        assert header == ["k", "v"]
        assert rows == [(2, ["1", "0.5"]), (3, ["2", "0.25"])]

    def test_empty_csv(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            read_csv(path)
