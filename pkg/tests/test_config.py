from pathlib import Path

import pytest

from permanence.config import ConfigError, build_model, load_config, parse_config, resolve

EXAMPLES = sorted((Path(__file__).resolve().parent.parent / "docs" / "examples").glob("*.yaml"))


@pytest.mark.parametrize("path", EXAMPLES, ids=lambda p: p.stem)
def test_examples_load(path):
    config = load_config(path)
    build = build_model(config)
    assert build.model.m >= 1
    assert config["analysis"]["horizon"] >= 1


def test_one_example_per_family():
    assert {p.stem for p in EXAMPLES} == {"lv", "annual", "meta", "sir"}


def test_unknown_key_is_line_anchored():
    text = "model:\n  lv:\n    B: [[-1.0]]\n    c: [1.0]\n    colour: red\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text, "run.yaml")
    assert err.value.line == 5
    assert "model.lv.colour" in str(err.value) and str(err.value).startswith("run.yaml:5:")


def test_wrong_type_names_key():
    text = "model:\n  fixture: ricker\nanalysis:\n  horizon: ten\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == 4 and "analysis.horizon" in str(err.value)


def test_missing_required():
    with pytest.raises(ConfigError) as err:
        parse_config("model:\n  lv:\n    B: [[-1.0]]\n")
    assert "'c' is a required property" in str(err.value)


def test_exactly_one_model():
    with pytest.raises(ConfigError):
        parse_config("model:\n  fixture: ricker\n  sir: {m: 1, beta: 1, c: 1}\n")


def test_yaml_syntax_error():
    with pytest.raises(ConfigError) as err:
        parse_config("model: [unclosed\n")
    assert "YAML" in str(err.value)


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_defaults_filled():
    config = resolve(parse_config("model:\n  fixture: symmetric-lv\n"))
    assert config["analysis"]["horizon"] == 10_000
    assert config["output"]["format"] == "both"


def test_parameter_errors_become_config_errors():
    config = resolve(parse_config("model:\n  lv:\n    B: [[-1.0, 0.0]]\n    c: [1.0]\n"))
    with pytest.raises(ConfigError):
        build_model(config)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")
