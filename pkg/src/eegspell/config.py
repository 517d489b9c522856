"""Run configuration: one INI file with sections, command-line overrides on top."""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .preprocess import PreprocessConfig
from .synth import SynthConfig
from .tsld.estimator import TSLDClassifier


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


_ARCH_KEYS = (
    "n_freq_components",
    "temporal_kernel_len",
    "temporal_stride",
    "n_subnetworks",
    "gru_hidden",
    "use_gru",
    "direct_mode",
    "n_task_classes",
    "tie_temporal",
    "eye_weight",
    "window",
    "shift",
    "soft_vote",
    "validation_fraction",
)
_TRAIN_KEYS = ("lr", "batch_size", "epochs", "max_steps", "steps_per_epoch", "clip_norm")


def _estimator_defaults(keys) -> dict:
    params = TSLDClassifier().get_params()
    return {k: params[k] for k in keys}


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    out: str = "runs"
    data: str = ""
    checkpoint: str = ""
    codebook: str = ""
    train_sessions: tuple[int, ...] = (0, 1, 2, 3, 4)
    decode_sessions: tuple[int, ...] = (5,)
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.eval_seeds:
            raise ConfigError("eval_seeds must name at least one seed")
        if set(self.train_sessions) & set(self.decode_sessions):
            raise ConfigError("train_sessions and decode_sessions overlap")


@dataclass(frozen=True)
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: dict = field(default_factory=lambda: _estimator_defaults(_ARCH_KEYS))
    train: dict = field(default_factory=lambda: _estimator_defaults(_TRAIN_KEYS))
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        # build the network config and optimiser settings once so bad values fail before any work
        est = self.estimator()
        try:
            est._make_config(self.synth.n_channels)
            est._settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.model["validation_fraction"] < 1:
            raise ConfigError("validation_fraction must lie in [0, 1)")

    def estimator(self, **overrides) -> TSLDClassifier:
        return TSLDClassifier(**{**self.model, **self.train, "random_state": self.run.seed, **overrides})

    def to_dict(self) -> dict:
        return {
            "preprocess": self.preprocess.to_dict(),
            "synth": self.synth.to_dict(),
            "model": dict(self.model),
            "train": dict(self.train),
            "run": {f.name: getattr(self.run, f.name) for f in fields(self.run)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, section: str, **values) -> RunConfig:
        return _apply(self, {section: values})


def _coerce(raw, like, key):
    """Convert an INI string to the type of the default value ``like``."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(text)
            return lowered in ("1", "true", "yes", "on")
        if like is None:
            # optional numeric settings
            if text.lower() in ("", "none"):
                return None
            return int(text) if text.lstrip("-").isdigit() else float(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            items = text.replace(",", " ").split()
            cast = type(like[0]) if like else float
            return tuple(cast(v) for v in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return text


def _merge_dict(base: dict, values: dict, section: str) -> dict:
    out = dict(base)
    for key, raw in values.items():
        if key not in base:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        out[key] = _coerce(raw, base[key], f"{section}.{key}")
    return out


def _merge_dataclass(obj, values: dict, section: str):
    names = {f.name for f in fields(obj)}
    updates = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        updates[key] = _coerce(raw, getattr(obj, key), f"{section}.{key}")
    try:
        return replace(obj, **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _apply(cfg: RunConfig, sections: dict[str, dict]) -> RunConfig:
    parts = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for section, values in sections.items():
        if section not in parts:
            raise ConfigError(f"unknown section [{section}]")
        current = parts[section]
        if isinstance(current, dict):
            parts[section] = _merge_dict(current, values, section)
        else:
            parts[section] = _merge_dataclass(current, values, section)
    return RunConfig(**parts)


def load_run_config(path=None, overrides: dict[str, dict] | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = _apply(cfg, {s: dict(parser[s]) for s in parser.sections()})
    if overrides:
        cfg = _apply(cfg, overrides)
    return cfg


def write_run_config(cfg: RunConfig, path) -> None:
    """Write ``cfg`` in the same INI layout :func:`load_run_config` reads."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in cfg.to_dict().items():
        parser[section] = {
            k: ("none" if v is None else " ".join(map(str, v)) if isinstance(v, (tuple, list)) else str(v))
            for k, v in values.items()
        }
    with open(Path(path), "w") as fh:
        parser.write(fh)
