"""YAML run configuration: schema validation, defaults and model construction.

Validation errors carry the line of the offending key so messages can
point into the file.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import yaml

from . import fixtures
from .model import MODES, PRIMITIVE, StructuredModel
from .zoo import (
    AnnualPlantSpec,
    LotkaVolterraSpec,
    MetacommunitySpec,
    SirSpec,
    build_annual,
    build_lv,
    build_meta,
    build_sir,
)

FORMATS = ("csv", "json", "both")

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_box = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_pos_int = {"type": "integer", "minimum": 1}


def _block(props: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": {**props, "box": _box}, "required": required,
            "additionalProperties": False}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "fixture": {"type": "string", "enum": sorted(fixtures.FIXTURES)},
                "lv": _block({"B": _matrix, "c": _vector}, ["B", "c"]),
                "annual": _block({"g": _vector, "Y": _vector, "s": _vector, "C": _matrix},
                                 ["g", "Y", "s", "C"]),
                "meta": _block({
                    "B": {"type": "array", "items": _matrix, "minItems": 1},
                    "c": _matrix,
                    "D": {"type": "array", "items": _matrix, "minItems": 2, "maxItems": 2},
                    "mode": {"type": "string", "enum": list(MODES)},
                }, ["B", "c", "D"]),
                "sir": _block({"m": {"type": "number", "exclusiveMinimum": 0},
                               "beta": {"type": "number", "exclusiveMinimum": 0},
                               "c": {"type": "number", "exclusiveMinimum": 0}},
                              ["m", "beta", "c"]),
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": _pos_int,
                "burn_in": {"type": "integer", "minimum": 0},
                "x0": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "faces": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                "n_starts": _pos_int,
                "start_grid": _pos_int,
                "eta_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "sweep_analysis": {"type": "string", "enum": ["permanence_test", "two_species_check"]},
                "method": {"type": "string", "enum": ["auto", "vertex", "linprog"]},
                "p_max": {"type": "number", "exclusiveMinimum": 1},
                "inflate": {"type": "number", "minimum": 0},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "format": {"type": "string", "enum": list(FORMATS)},
            },
        },
    },
}

ANALYSIS_DEFAULTS = {
    "horizon": 10_000,
    "n_starts": 4,
    "start_grid": 5,
    "eta_grid": [0.1, 0.05, 0.01, 0.001],
    "deltas": [0.001, 0.01, 0.1],
    "sweep_analysis": "permanence_test",
    "method": "auto",
    "p_max": 1e6,
    "inflate": 1.0,
    "tolerance": 1e-3,
}
OUTPUT_DEFAULTS = {"dir": "permanence-out", "format": "both"}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = source or "config"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


def _line_map(node, path=(), out=None) -> dict:
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


def _locate(lines: dict, path) -> int | None:
    path = tuple(path)
    while path not in lines and path:
        path = path[:-1]
    return lines.get(path)


def _describe(err: jsonschema.ValidationError) -> tuple[str, tuple]:
    path = tuple(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            return f"unknown key '{'.'.join(map(str, path + (extra[0],)))}'", path + (extra[0],)
    if err.validator == "required":
        return f"{'.'.join(map(str, path)) or 'top level'}: {err.message}", path
    name = ".".join(map(str, path)) or "top level"
    return f"key '{name}': {err.message}", path


def parse_config(text: str, source: str | None = None) -> dict:
    """Validate YAML text against the schema and return the raw mapping."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(err, 'problem', err)}",
                          None if mark is None else mark.line + 1, source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    lines = _line_map(node)
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data),
                    key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        msg, path = _describe(errors[0])
        raise ConfigError(msg, _locate(lines, path), source)
    return data


def resolve(data: dict) -> dict:
    """Fill in defaults so the returned mapping fully determines a run."""
    out = copy.deepcopy(data)
    out["analysis"] = {**ANALYSIS_DEFAULTS, **out.get("analysis", {})}
    out["output"] = {**OUTPUT_DEFAULTS, **out.get("output", {})}
    if "meta" in out["model"]:
        out["model"]["meta"].setdefault("mode", PRIMITIVE)
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", source=str(path)) from None
    return resolve(parse_config(text, str(path)))


@dataclass(frozen=True)
class ModelBuild:
    model: StructuredModel
    family: str
    spec: object | None


def build_model(config: dict) -> ModelBuild:
    """Construct the configured model; parameter errors become ``ConfigError``."""
    (family, block), = config["model"].items()
    try:
        if family == "fixture":
            model = fixtures.FIXTURES[block]()
            return ModelBuild(model, model.name, _fixture_spec(block))
        box = block.get("box")
        if family == "lv":
            spec = LotkaVolterraSpec(B=block["B"], c=block["c"])
            return ModelBuild(build_lv(spec, box), family, spec)
        if family == "annual":
            spec = AnnualPlantSpec(g=block["g"], Y=block["Y"], s=block["s"], C=block["C"])
            return ModelBuild(build_annual(spec, box), family, spec)
        if family == "meta":
            spec = MetacommunitySpec(B=block["B"], c=block["c"], D=block["D"])
            return ModelBuild(build_meta(spec, block.get("mode", PRIMITIVE), box), family, spec)
        spec = SirSpec(m=block["m"], beta=block["beta"], c=block["c"])
        return ModelBuild(build_sir(spec, box), family, spec)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"model.{family}: {err}") from None


def _fixture_spec(name: str):
    table = {
        "symmetric-lv": fixtures.SYMMETRIC_LV,
        "dominance-lv": fixtures.DOMINANCE_LV,
        "marginal-lv": fixtures.MARGINAL_LV,
        "ricker": fixtures.ricker_spec(),
        "annual": fixtures.annual_spec(),
        "mirrored-meta": fixtures.mirrored_meta_spec(),
        "dominance-meta": fixtures.dominance_meta_spec(),
        "sir-endemic": fixtures.SIR_ENDEMIC,
        "sir-disease-free": fixtures.SIR_DISEASE_FREE,
    }
    return table[name]


__all__ = ["ConfigError", "FORMATS", "SCHEMA", "build_model", "load_config", "parse_config", "resolve"]
