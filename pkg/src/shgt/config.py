"""Run configuration: dataclasses plus a flat key = value file format.

The file format is deliberately schema-free text: one assignment per
line, '#' comments, values typed by the target field. Unknown keys are
rejected rather than ignored so config drift fails loudly. A `preset`
key seeds the defaults for a cohort shape before the remaining
assignments apply.
"""

import dataclasses
from dataclasses import dataclass

from .data import GeneratorConfig
from .errors import ConfigError

# Cohort-shape presets: the denser cohort trains a deeper stack with a
# stronger reconstruction weight, the sparser one a single layer.
PRESETS = {
    "mimic3": {"alpha": 0.3, "layers": 2},
    "mimic4": {"alpha": 0.2, "layers": 1},
}

ABLATIONS = ("wo-S", "wo-T", "wo-L")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.004
    dropout: float = 0.4
    d: int = 256
    layers: int = 2
    alpha: float = 0.3
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    ablate: str | None = None

    def validate(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.ablate is not None and self.ablate not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablate!r}, expected one of {ABLATIONS}")
        return self

    def echo(self):
        """Flat dict of every field, for manifests and checkpoints."""
        return dataclasses.asdict(self)


def _convert(key, raw, target_type):
    if target_type is str:
        return raw
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {target_type.__name__}") from None
    raise ConfigError(f"key {key!r}: unsupported type")


def _parse_assignments(text, source):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"{source} line {lineno}: empty key or value")
        pairs.append((key, value))
    return pairs


_TRAIN_TYPES = {
    "lr": float,
    "dropout": float,
    "d": int,
    "layers": int,
    "alpha": float,
    "epochs": int,
    "patience": int,
    "seed": int,
    "ablate": str,
}

_GENERATOR_TYPES = {
    "patients": int,
    "n_diagnosis": int,
    "n_medication": int,
    "n_procedure": int,
    "clusters": int,
    "visits_min": int,
    "visits_max": int,
    "codes_min": int,
    "codes_max": int,
    "noise_rate": float,
    "label_min": int,
    "label_max": int,
}


def _build(pairs, types, factory, source, allow_preset):
    values = {}
    preset = None
    for key, raw in pairs:
        if allow_preset and key == "preset":
            if raw not in PRESETS:
                raise ConfigError(f"{source}: unknown preset {raw!r}, expected one of {sorted(PRESETS)}")
            preset = raw
            continue
        if key not in types:
            raise ConfigError(f"{source}: unknown key {key!r}")
        values[key] = _convert(key, raw, types[key])
    merged = dict(PRESETS[preset]) if preset else {}
    merged.update(values)
    return factory(**merged)


def parse_train_config(text, source="config", overrides=None):
    config = _build(_parse_assignments(text, source), _TRAIN_TYPES, TrainConfig, source, True)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config.validate()


def parse_generator_config(text, source="config", overrides=None):
    config = _build(_parse_assignments(text, source), _GENERATOR_TYPES, GeneratorConfig, source, False)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def _read(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def load_train_config(path=None, overrides=None):
    text = _read(path) if path else ""
    return parse_train_config(text, source=str(path) if path else "defaults", overrides=overrides)


def load_generator_config(path=None, overrides=None):
    text = _read(path) if path else ""
    return parse_generator_config(text, source=str(path) if path else "defaults", overrides=overrides)
