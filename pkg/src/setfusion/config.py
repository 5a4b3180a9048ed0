"""Run configuration: one JSON schema shared by every command.

A config document has up to six sections (``data``, ``model``, ``train``,
``eval``, ``bench``, ``paths``); every field has a default, a config file
overrides defaults, and repeatable dotted-key assignments
(``--set train.n_mode=fixed:8``) override the file. Unknown sections or
keys are rejected outright so typos cannot silently fall back to defaults.
Every command echoes its fully resolved configuration into the output
directory; that echo (plus the seed) reproduces the run byte for byte,
timing fields aside.

A top-level ``--seed S`` derives section seeds (data=S, model=S+1,
train=S+2, eval=S+3, bench=S+4) before ``--set`` overrides apply.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .bench import BenchConfig
from .data import DatasetMeta
from .errors import ContractError
from .metrics import EvalConfig
from .model import ModelConfig
from .training import TrainConfig

__all__ = ["RunConfig", "load_run_config", "DEFAULTS"]

DEFAULTS: dict = {
    "data": {
        "train_count": 2000,
        "test_count": 500,
        "grid_side": 16,
        "image_side": 16,
        "seed": 0,
    },
    "model": {
        "image_side": 16,
        "latent_dim": 128,
        "encoder_hidden": 256,
        "decoder_hidden": 512,
        "grid_side": 16,
        "aggregator_kind": "attsets_fc",
        "seed": 1,
        "max_views": 24,
    },
    "train": {
        "batch_size": 16,
        "stage1_steps": 600,
        "stage2_steps": 600,
        "n_mode": "fixed:8",
        "learning_rate": 1e-3,
        "finetune_rate": 1e-5,
        "optimizer": "adam",
        "seed": 2,
    },
    "eval": {
        "view_counts": [1, 2, 3, 4, 5, 8],
        "seed": 3,
    },
    "bench": {
        "n_grid": [1, 4, 8, 12, 16, 20, 24],
        "latent_dim": 128,
        "repeats": 30,
        "warmups": 5,
        "inner_loops": 4,
        "aggregators": list(BenchConfig.aggregators),
        "seed": 4,
    },
    "paths": {
        "out_dir": "runs",
        "dataset_dir": "",
        "checkpoint": "",
    },
}

_SEED_OFFSETS = {"data": 0, "model": 1, "train": 2, "eval": 3, "bench": 4}


@dataclass
class RunConfig:
    sections: dict

    @property
    def data(self) -> DatasetMeta:
        return DatasetMeta(**self.sections["data"])

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(**self.sections["model"])

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**self.sections["train"])

    @property
    def eval(self) -> EvalConfig:
        s = self.sections["eval"]
        return EvalConfig(view_counts=tuple(s["view_counts"]), seed=s["seed"])

    @property
    def bench(self) -> BenchConfig:
        s = self.sections["bench"]
        return BenchConfig(n_grid=tuple(s["n_grid"]), latent_dim=s["latent_dim"],
                           repeats=s["repeats"], warmups=s["warmups"],
                           inner_loops=s["inner_loops"],
                           aggregators=tuple(s["aggregators"]), seed=s["seed"])

    @property
    def paths(self) -> dict:
        return self.sections["paths"]

    def echo(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.json"
        path.write_text(json.dumps(self.sections, indent=2, sort_keys=True) + "\n")
        return path


def _reject_unknown(doc: dict, allowed: dict, prefix: str = "") -> None:
    for key, value in doc.items():
        if key not in allowed:
            raise ContractError(f"unknown config key {prefix + key!r}")
        if isinstance(allowed[key], dict):
            if not isinstance(value, dict):
                raise ContractError(f"config key {prefix + key!r} must be a section object")
            _reject_unknown(value, allowed[key], prefix=f"{prefix}{key}.")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _check_types(sections: dict) -> None:
    """Every leaf must keep the type of its default (ints stay ints, floats
    accept ints, strings stay strings, lists stay lists)."""
    for section, body in DEFAULTS.items():
        for key, default in body.items():
            value = sections[section][key]
            dotted = f"{section}.{key}"
            if isinstance(default, bool):
                ok = isinstance(value, bool)
            elif isinstance(default, int):
                ok = isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
                if ok:
                    sections[section][key] = float(value)
            elif isinstance(default, str):
                ok = isinstance(value, str)
            elif isinstance(default, list):
                ok = isinstance(value, (list, tuple))
            else:
                ok = True
            if not ok:
                raise ContractError(
                    f"config key {dotted!r} expects {type(default).__name__}, "
                    f"got {value!r}")


def load_run_config(config_path: str | None = None, overrides: list[str] | None = None,
                    seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Resolve defaults <- config file <- --seed <- --set overrides <- --out."""
    sections = copy.deepcopy(DEFAULTS)

    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise OSError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ContractError(f"config file is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ContractError("config file must hold a JSON object")
        _reject_unknown(doc, DEFAULTS)
        for section, body in doc.items():
            sections[section].update(body)

    if seed is not None:
        if seed < 0:
            raise ContractError("seed must be a nonnegative integer")
        for section, off in _SEED_OFFSETS.items():
            sections[section]["seed"] = seed + off

    for item in overrides or []:
        if "=" not in item:
            raise ContractError(f"--set needs key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in sections:
            raise ContractError(f"unknown config key {dotted!r}")
        section, key = parts
        if key not in sections[section]:
            raise ContractError(f"unknown config key {dotted!r}")
        sections[section][key] = _parse_value(raw)

    if out_dir is not None:
        sections["paths"]["out_dir"] = str(out_dir)
    _check_types(sections)
    return RunConfig(sections=sections)
