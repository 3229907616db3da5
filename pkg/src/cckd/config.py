"""Run configuration: an INI file with ``[synth]``, ``[train]``, ``[loss]`` and ``[run]`` sections.

Every key has a default (the dataclass defaults); unknown sections or keys are
rejected. ``effective_text`` renders the fully-defaulted configuration that is
written next to every output.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .synthdata import SynthConfig
from .training import ALL_VARIANTS, TrainConfig, Variant

ENV_CONFIG = "CCKD_CONFIG"
DEFAULT_CONFIG = Path(__file__).with_name("default.cfg")


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    seeds: int = 1
    n_boot: int = 1000
    train_fraction: float = 0.8
    variants: tuple[Variant, ...] = ALL_VARIANTS
    figures: bool = True


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def loss(self) -> LossWeights:
        return self.train.weights


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(value: str, default):
    if isinstance(default, bool):
        return _parse_bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple) and default and isinstance(default[0], Variant):
        return parse_variants(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


def parse_variants(text: str) -> tuple[Variant, ...]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    try:
        return tuple(Variant(n) for n in names)
    except ValueError:
        valid = ", ".join(v.value for v in ALL_VARIANTS)
        raise ConfigError(f"unknown variant in {text!r}; choose from {valid}") from None


_SECTIONS = {"synth": SynthConfig, "train": TrainConfig, "loss": LossWeights, "run": RunSettings}


def _section_values(obj, cls) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(cls) if f.name != "weights"}


def _apply(obj, cls, section: configparser.SectionProxy, name: str):
    valid = _section_values(obj, cls)
    updates = {}
    for key, text in section.items():
        if key not in valid:
            raise ConfigError(f"unknown key [{name}] {key}")
        try:
            updates[key] = _coerce(text, valid[key])
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return replace(obj, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive field names
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    unknown = set(cp.sections()) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    synth, train, loss, run = SynthConfig(), TrainConfig(), LossWeights(), RunSettings()
    try:
        if cp.has_section("synth"):
            synth = _apply(synth, SynthConfig, cp["synth"], "synth")
        if cp.has_section("loss"):
            loss = _apply(loss, LossWeights, cp["loss"], "loss")
        if cp.has_section("train"):
            train = _apply(train, TrainConfig, cp["train"], "train")
        if cp.has_section("run"):
            run = _apply(run, RunSettings, cp["run"], "run")
    except ConfigError:
        raise
    except Exception as exc:  # invalid values caught by dataclass validation
        raise ConfigError(str(exc)) from None
    train = replace(train, weights=loss)
    train.validate()
    try:
        synth.validate()
    except Exception as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(synth, train, run)


def load_config(path=None) -> RunConfig:
    """Read ``path``, else ``$CCKD_CONFIG``, else the packaged defaults."""
    path = path or os.environ.get(ENV_CONFIG) or DEFAULT_CONFIG
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(v.value if isinstance(v, Variant) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def effective_text(cfg: RunConfig) -> str:
    parts = []
    for name, obj, cls in (("synth", cfg.synth, SynthConfig), ("train", cfg.train, TrainConfig),
                           ("loss", cfg.loss, LossWeights), ("run", cfg.run, RunSettings)):
        parts.append(f"[{name}]")
        parts += [f"{k} = {_fmt(v)}" for k, v in _section_values(obj, cls).items()]
        parts.append("")
    return "\n".join(parts)
