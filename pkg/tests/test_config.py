import json

import pytest

from cabkws.config import DataConfig, RunConfig, parse_override
from cabkws.data import SynthSpec
from cabkws.errors import ConfigError


def test_defaults_round_trip_through_json(tmp_path):
    cfg = RunConfig()
    text = cfg.to_json()
    assert list(json.loads(text)) == ["augment", "data", "model", "train"]
    assert RunConfig.from_json(text) == cfg
    path = tmp_path / "c.json"
    path.write_text(text)
    assert RunConfig.load(path) == cfg


def test_missing_sections_take_defaults():
    cfg = RunConfig.from_dict({"train": {"seed": 4}})
    assert cfg.train.seed == 4
    assert cfg.model == RunConfig().model
    assert cfg.data.synth == SynthSpec()


@pytest.mark.parametrize(
    "doc",
    [
        {"extra": {}},
        {"model": {"width": 3}},
        {"train": {"seed": "zero"}},
        {"train": {"batch_size": 1.5}},
        {"train": {"freeze": 1}},
        {"data": {"synth": {"colour": 1}}},
        {"data": {"sweep_counts": [0, "x"]}},
        {"model": {"heads": 3}},
        {"augment": {"speed_min": 2.0, "speed_max": 1.0}},
        {"model": []},
    ],
)
def test_bad_documents_are_config_errors(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_bad_json_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_json("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


def test_overrides():
    cfg = RunConfig().with_overrides(
        ["train.seed=7", "model.temperature=0.07", "data.synth.seed=3", "data.manifest=m.csv", "data.sweep_counts=[0,5]"]
    )
    assert cfg.train.seed == 7
    assert cfg.model.temperature == 0.07
    assert cfg.data.synth.seed == 3
    assert cfg.data.manifest == "m.csv"
    assert cfg.data.sweep_counts == (0, 5)
    for bad in ("train.nope=1", "nope.seed=1", "train=1", "train.seed"):
        with pytest.raises(ConfigError):
            RunConfig().with_overrides([bad])


def test_parse_override_values():
    assert parse_override("--a.b=3") == ("a.b", 3)
    assert parse_override("a.b=null") == ("a.b", None)
    assert parse_override("a.b=x.csv") == ("a.b", "x.csv")
    assert parse_override("a.b=true") == ("a.b", True)


def test_data_config_validation():
    with pytest.raises(ConfigError):
        DataConfig(labeled_per_class=0)
