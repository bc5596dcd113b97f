"""Experiment configuration: JSON files with strict schema validation.

A config is a nested key/value document with five sections (world,
population, model, training, evaluation). Unknown keys are rejected by
name; missing required keys and type mismatches are reported by their
dotted path. Defaults are filled on load, so a loaded config serializes to
a complete, stable document whose hash identifies the experiment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .gridworld import WorldConfig
from .tomnet import ToMnetConfig


class ConfigError(Exception):
    pass


_REQUIRED = object()


def _t_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _t_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool))


_CHECKS = {
    "str": lambda v: isinstance(v, str),
    "bool": lambda v: isinstance(v, bool),
    "int": _t_int,
    "float": _t_num,
    "int?": lambda v: v is None or _t_int(v),
    "intlist": lambda v: isinstance(v, list) and all(_t_int(x) for x in v),
    "numlist": lambda v: isinstance(v, list) and all(_t_num(x) for x in v),
    "fovlist": lambda v: isinstance(v, list) and all(
        _t_int(x) or x in (None, "blind") for x in v),
}

SCHEMA = {
    "name": ("str", _REQUIRED),
    "world": {
        "width": ("int", 11),
        "height": ("int", 11),
        "walls": ("intlist", [0, 4]),
        "subgoal": ("bool", False),
        "timeout": ("int", 31),
        "swap_prob": ("float", 0.0),
    },
    "population": {
        "species": ("str", _REQUIRED),
        "alpha": ("float", 0.01),
        "alphas": ("numlist", []),
        "reward_alpha": ("float", 0.01),
        "greedy_fraction": ("float", 0.0),
        "fovs": ("fovlist", [5]),
        "n_train_agents": ("int", _REQUIRED),
        "n_test_agents": ("int", _REQUIRED),
        "episodes_per_agent": ("int", 12),
        "truncate_steps": ("int?", None),
    },
    "model": {
        "char_arch": ("str", "episodic"),
        "e_char_dim": ("int", 2),
        "channels": ("int", 32),
        "char_conv_channels": ("int", 8),
        "char_lstm_width": ("int", 64),
        "resnet_layers": ("int", 5),
        "batch_norm": ("bool", True),
        "mental": ("bool", False),
        "mental_channels": ("int", 32),
        "consumption_dim": ("int", 0),
        "sr_gammas": ("numlist", []),
        "belief_objects": ("int", 0),
        "dvib": ("bool", False),
        "beta_max": ("float", 0.01),
        "beta_anneal_steps": ("int", 100000),
    },
    "training": {
        "lr": ("float", 1e-4),
        "batch_size": ("int", 16),
        "steps": ("int", 40000),
        "log_every": ("int", 500),
        "npast_kind": ("str", "uniform"),
        "npast_max": ("int", 10),
        "npast_n": ("int", 4),
        "split_rule": ("str", "zero"),
        "char_window": ("int?", None),
        "dtype": ("str", "float32"),
    },
    "evaluation": {
        "n_past_grid": ("intlist", [0, 1, 5]),
        "n_eval_agents": ("int", 200),
        "queries_per_agent": ("int", 5),
        "mc_samples": ("int", 100000),
        "n_counterfactual_pairs": ("int", 500),
        "sr_rollouts": ("int", 10),
        "max_swap_distance": ("int", 8),
        "eval_batches": ("int", 4),
    },
}


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def name(self) -> str:
        return self.data["name"]

    def __getitem__(self, key):
        return self.data[key]

    def world_config(self) -> WorldConfig:
        w = self.data["world"]
        return WorldConfig(
            width=w["width"], height=w["height"],
            wall_range=(w["walls"][0], w["walls"][1]),
            subgoal=w["subgoal"], timeout=w["timeout"], swap_prob=w["swap_prob"],
        )

    def model_config(self) -> ToMnetConfig:
        m = self.data["model"]
        return ToMnetConfig(
            char_arch=m["char_arch"], e_char_dim=m["e_char_dim"],
            channels=m["channels"], char_conv_channels=m["char_conv_channels"],
            char_lstm_width=m["char_lstm_width"], resnet_layers=m["resnet_layers"],
            batch_norm=m["batch_norm"], n_planes=8, grid=self.data["world"]["width"],
            mental=m["mental"], mental_channels=m["mental_channels"],
            consumption_dim=m["consumption_dim"], sr_gammas=tuple(m["sr_gammas"]),
            belief_objects=m["belief_objects"], dvib=m["dvib"],
            beta_max=m["beta_max"], beta_anneal_steps=m["beta_anneal_steps"],
        )

    def npast_rule(self) -> dict:
        t = self.data["training"]
        if t["npast_kind"] == "uniform":
            return {"kind": "uniform", "max": t["npast_max"]}
        if t["npast_kind"] == "fixed":
            return {"kind": "fixed", "n": t["npast_n"]}
        raise ConfigError(f"unknown npast_kind {t['npast_kind']!r}")

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.data, sort_keys=True).encode()
        ).hexdigest()[:16]


def _validate_section(obj: dict, schema: dict, path: str, source: str) -> dict:
    out = {}
    for key in obj:
        if key not in schema:
            raise ConfigError(f"{source}: unknown key '{path}{key}'")
    for key, spec in schema.items():
        dotted = f"{path}{key}"
        if isinstance(spec, dict):
            sub = obj.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{source}: section '{dotted}' must be an object")
            out[key] = _validate_section(sub, spec, dotted + ".", source)
            continue
        typ, default = spec
        if key not in obj:
            if default is _REQUIRED:
                raise ConfigError(f"{source}: missing required key '{dotted}'")
            out[key] = default
            continue
        val = obj[key]
        if not _CHECKS[typ](val):
            raise ConfigError(
                f"{source}: key '{dotted}' expects {typ}, got {type(val).__name__}")
        out[key] = val
    return out


def parse_config(obj: dict, source: str = "<config>") -> ExperimentConfig:
    return ExperimentConfig(_validate_section(obj, SCHEMA, "", source))


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_config(obj, source=str(path))


def preset_names() -> list:
    pkg = resources.files("tomlab") / "presets"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def resolve_config(name_or_path: str) -> ExperimentConfig:
    """A filesystem path, or the name of a shipped preset."""
    p = Path(name_or_path)
    if p.exists():
        return load_config(p)
    pkg = resources.files("tomlab") / "presets" / f"{name_or_path}.json"
    if pkg.is_file():
        obj = json.loads(pkg.read_text())
        return parse_config(obj, source=f"preset:{name_or_path}")
    raise ConfigError(
        f"no such config file or preset: {name_or_path} "
        f"(presets: {', '.join(preset_names())})")
