"""YAML job files keyed by the published hyperparameter names.

A job file is a flat mapping.  Hyperparameters may be written with their
symbolic names (``|U|``, ``τ``, ``θ``, ``N``, ``ε``, ``+μ``, ``w_u``, ``α``,
``CF``, ``LN``, ``η``, ``|X|``, ``Mem.``, ``γ``, ``Frames``, ``|N|``, ``h``,
``STGE``) or with the ASCII aliases in :data:`ALIASES`.  Everything else uses
the field names of :class:`~neurofuzzy.rl.agent.RLConfig` or
:class:`SupervisedJob`.  YAML needs quotes around keys that start with
``|`` or ``+`` (``"|U|": 64``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .inference import MEAN, SUM

# symbol -> field name
SYMBOLS = {
    "|U|": "n_rules",
    "STGE": "STGE",
    "τ": "temperature",
    "θ": "threshold_percentile",
    "N": "retain_batches",
    "ε": "epsilon",
    "+μ": "delay",
    "w_u": "firing_mode",
    "α": "alpha",
    "CF": "certainty_factors",
    "LN": "layer_norm",
    "η": "lr",
    "|X|": "batch_size",
    "Mem.": "memory",
    "γ": "gamma",
    "Frames": "frames",
    "|N|": "hidden",
    "h": "activation",
}

ALIASES = {
    "U": "n_rules", "rules": "n_rules",
    "tau": "temperature",
    "theta": "threshold_percentile",
    "retain": "retain_batches",
    "epsilon": "epsilon", "eps": "epsilon",
    "mu": "delay", "+mu": "delay",
    "alpha": "alpha",
    "eta": "lr",
    "X": "batch_size", "batch": "batch_size",
    "Mem": "memory",
    "gamma": "gamma",
    "hidden": "hidden",
}

HARNESS_KEYS = ("task", "metrics", "episode_log", "event_log", "checkpoint")


@dataclass
class SupervisedJob:
    """Regression of a 1-D target on an interval."""

    target: str = "sin"  # "sin" or "constant"
    low: float = -3.0
    high: float = 3.0
    n_samples: int = 256
    seed: int = 0
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-2
    n_rules: int = 8
    n_terms: int = 3
    STGE: bool = False
    temperature: float = 0.6
    retain_batches: int = 64
    threshold_percentile: float = 0.0
    epsilon: float = 0.1
    delay: int = 3
    neurogenesis: bool = True
    firing_mode: str = SUM
    alpha: float = 1.0
    layer_norm: bool = False
    certainty_factors: bool = False

    def __post_init__(self):
        if self.target not in ("sin", "constant"):
            raise ConfigError(f"unknown regression target {self.target!r}")
        if self.high <= self.low:
            raise ConfigError("high must exceed low")


def _canonical(key: str) -> str:
    key = str(key).strip()
    return SYMBOLS.get(key) or ALIASES.get(key) or key


def _coerce(name: str, value, ftype):
    kind = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    try:
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "yes", "on", "1"):
                    return True
                if low in ("false", "no", "off", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(float(value)) if isinstance(value, str) else int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {kind}") from None
    return value


def _fill(cls, values: dict):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown setting {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(key, value, fields[key])
    return cls(**kwargs)


def normalize(doc: dict) -> tuple[str, dict, dict]:
    """Split a raw mapping into ``(task, settings, harness options)``."""
    if not isinstance(doc, dict):
        raise ConfigError("a job file must be a mapping")
    settings, harness = {}, {}
    for key, value in doc.items():
        name = _canonical(key)
        if name in HARNESS_KEYS:
            harness[name] = value
        elif name in settings:
            raise ConfigError(f"setting {name!r} given twice")
        else:
            settings[name] = value
    task = str(harness.pop("task", "rl"))
    if task not in ("rl", "supervised"):
        raise ConfigError(f"task must be 'rl' or 'supervised', got {task!r}")
    if "firing_mode" in settings:
        mode = str(settings["firing_mode"]).capitalize()
        if mode not in (SUM, MEAN):
            raise ConfigError(f"w_u must be Sum or Mean, got {settings['firing_mode']!r}")
        settings["firing_mode"] = mode
    return task, settings, harness


def build(doc: dict, task: str | None = None):
    """Return ``(job config, harness options)`` for a parsed mapping."""
    from .rl.agent import RLConfig

    found, settings, harness = normalize(doc)
    task = task or found
    if task == "supervised":
        return _fill(SupervisedJob, settings), harness
    if "STGE" in settings:
        settings["estimator"] = "STGE" if _coerce("STGE", settings.pop("STGE"), "bool") else "STE"
    return _fill(RLConfig, settings), harness


def load(path, task: str | None = None):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return build(doc, task)
