"""Key=value run configuration covering model, training and loss settings.

A config file is plain ``key = value`` lines (``#`` comments allowed, no
section headers). Every key defaults to the standard training protocol.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .model import ModelConfig
from .training import LossConfig, TrainConfig

_SECTION = "pahires"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)


def _groups():
    return (("model", ModelConfig), ("train", TrainConfig), ("loss", LossConfig))


def known_keys() -> dict:
    """key -> (groups, default value). ``seed`` drives both model init and training."""
    keys = {}
    for group, cls in _groups():
        inst = cls()
        for f in fields(cls):
            groups = keys.get(f.name, ((), None))[0]
            keys[f.name] = (groups + (group,), getattr(inst, f.name))
    return keys


def _coerce(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if default is None:
            return None if text.lower() in ("", "none", "auto") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ConfigError("config files take plain key = value lines, no [sections]")
    raw = dict(parser[_SECTION])
    raw.update({k: str(v) for k, v in (overrides or {}).items()})
    keys = known_keys()
    values = {"model": {}, "train": {}, "loss": {}}
    for key, text in raw.items():
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r}")
        groups, default = keys[key]
        for group in groups:
            values[group][key] = _coerce(key, text, default)
    try:
        return RunConfig(ModelConfig(**values["model"]), TrainConfig(**values["train"]),
                         LossConfig(**values["loss"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    lines, seen = [], set()
    for group, _ in _groups():
        obj = getattr(cfg, group)
        for f in fields(obj):
            if f.name in seen:
                continue
            seen.add(f.name)
            v = getattr(obj, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
