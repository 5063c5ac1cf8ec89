"""Configuration files and named presets.

Config files are line-oriented `key = value` text; blank lines and `#`
comments are allowed, unknown keys are rejected with the offending line. An
empty file means "all defaults". A `preset = NAME` line (or several) applies
a named bundle first, with explicit keys overriding it. The echo file every
run writes back is in this same format, so a run can be reproduced from its
own echo.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .generator import GeneratorConfig
from .training import TrainConfig

# Encoder size bundles. The transformer_xl preset records the published
# full-scale geometry, but only the LSTM encoder is implemented; building a
# model from it fails with a clear error.
ENCODER_PRESETS: dict[str, dict] = {
    "desk-small": {"embedding_size": 64, "hidden_size": 128, "num_layers": 2,
                   "bptt_len": 35},
    "paper-awd-lstm": {"embedding_size": 400, "hidden_size": 1150,
                       "num_layers": 3, "bptt_len": 70},
    "paper-transformer-xl": {"embedding_size": 410, "hidden_size": 2100,
                             "num_layers": 12, "bptt_len": 150,
                             "encoder_type": "transformer_xl"},
}

# Per-dataset epoch/learning-rate bundles.
TRAINING_PRESETS: dict[str, dict] = {
    "gutenberg-lm": {"regime": "mle", "epochs": 20, "learning_rate": 3e-3},
    "poems-lm": {"regime": "mle", "epochs": 8, "learning_rate": 3e-3},
    "metaphors-lm": {"regime": "mle", "epochs": 8, "learning_rate": 3e-4},
    "lyrics-lm": {"regime": "mle", "epochs": 15, "learning_rate": 3e-4},
    "poems-gan": {"regime": "creative_gan", "epochs": 10, "learning_rate": 3e-4},
    "metaphors-gan": {"regime": "creative_gan", "epochs": 10, "learning_rate": 3e-4},
    "lyrics-gan": {"regime": "creative_gan", "epochs": 12, "learning_rate": 3e-4},
    "poems-gumbel": {"regime": "gumbel_gan", "epochs": 10, "learning_rate": 3e-4},
    "metaphors-gumbel": {"regime": "gumbel_gan", "epochs": 10, "learning_rate": 3e-4},
    "lyrics-gumbel": {"regime": "gumbel_gan", "epochs": 12, "learning_rate": 3e-4},
}

# Keys the corpus pipeline consumes (not part of the model dataclasses).
CORPUS_KEYS = {"min_freq": int, "max_size": int}

_GENERATOR_KEYS = {f.name: f.type for f in fields(GeneratorConfig)
                   if f.name != "vocab_size"}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}

_TYPES: dict[str, type] = {}
for _name, _t in {**_GENERATOR_KEYS, **_TRAIN_KEYS}.items():
    _TYPES[_name] = {"int": int, "float": float, "str": str}.get(str(_t), str)
_TYPES.update(CORPUS_KEYS)


def default_settings() -> dict:
    settings = {name: getattr(GeneratorConfig(vocab_size=2), name)
                for name in _GENERATOR_KEYS}
    settings.update({name: getattr(TrainConfig(), name) for name in _TRAIN_KEYS})
    settings.update({"min_freq": 2, "max_size": 30000})
    return settings


def resolve_preset(name: str) -> dict:
    if name in ENCODER_PRESETS:
        return dict(ENCODER_PRESETS[name])
    if name in TRAINING_PRESETS:
        return dict(TRAINING_PRESETS[name])
    known = sorted(ENCODER_PRESETS) + sorted(TRAINING_PRESETS)
    raise ConfigError(f"unknown preset {name!r}; known presets: {', '.join(known)}")


def _parse_value(key: str, raw: str, lineno: int):
    caster = _TYPES[key]
    raw = raw.strip()
    try:
        if caster is int:
            return int(raw)
        if caster is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"line {lineno}: cannot parse {raw!r} as {caster.__name__} "
            f"for key {key!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines into a settings dict (presets applied)."""
    overrides: dict = {}
    presets: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key == "preset":
            presets.append(raw.strip())
            continue
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        overrides[key] = _parse_value(key, raw, lineno)
    settings = default_settings()
    for preset in presets:
        settings.update(resolve_preset(preset))
    settings.update(overrides)
    return settings


def load_config(path) -> dict:
    """Settings dict from a config file; empty file means all defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"))


def build_configs(settings: dict, vocab_size: int
                  ) -> tuple[GeneratorConfig, TrainConfig]:
    gen_kwargs = {k: settings[k] for k in _GENERATOR_KEYS}
    train_kwargs = {k: settings[k] for k in _TRAIN_KEYS}
    gen_config = GeneratorConfig(vocab_size=vocab_size, **gen_kwargs)
    gen_config.validate()
    train_config = TrainConfig(**train_kwargs)
    train_config.validate()
    return gen_config, train_config
