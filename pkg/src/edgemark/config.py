"""Run configuration: one strict document mirroring every module's knobs.

Defaults follow the reference hyperparameters this toolkit ships with
(training lr 1e-4 / decay 1e-4 / 500 epochs, embedding lr 5e-5, payload
length 200, decision threshold 0.75). Unknown keys are rejected so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass

from .embedding import EmbedConfig, PseudoGraphConfig, TriggerSynthConfig
from .errors import ConfigError, ParseError
from .graphs import SplitSpec
from .models import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    kind: str = "sbm"              # sbm | er | ba
    num_nodes: int = 1500
    num_classes: int = 5
    intra_p: float = 0.02
    inter_p: float = 0.002
    edge_p: float = 0.01           # er only
    attach_m: int = 3              # ba only
    feature_dim: int = 32
    feature_shift: float = 2.5
    seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    depth: int = 4
    kind: str = "mean-aggregate"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    synth: TriggerSynthConfig = field(default_factory=TriggerSynthConfig)
    pseudo: PseudoGraphConfig = field(default_factory=PseudoGraphConfig)
    n_bits: int = 200
    tau: float = 0.75


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    kwargs = {}
    for name, value in doc.items():
        target = _SECTION_TYPES.get(name)
        if target is not None and is_dataclass(target) and isinstance(value, dict):
            kwargs[name] = _build(target, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTION_TYPES = {
    "data": DataConfig, "split": SplitSpec, "model": ModelConfig,
    "train": TrainConfig, "embed": EmbedConfig, "synth": TriggerSynthConfig,
    "pseudo": PseudoGraphConfig,
}


def run_config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "config")


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return run_config_from_dict(doc)
