"""Experiment configuration and its flat ``key = value`` text form.

Nested sections are addressed with dotted keys::

    # comment
    method = spl
    seed = 3
    model.d_model = 64
    task.kind = dict_map
    confidence.k = 2.0
    loss.use_tlc = false

The same keys are accepted as command-line flags (``--confidence.k 2``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .confidence import ConfidenceConfig
from .curriculum import CompetenceSchedule
from .data import SyntheticTask
from .loss import LossConfig
from .model import ModelConfig
from .optim import OptimConfig

METHODS = ("vanilla", "cl_sl", "cl_wr", "spl")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: SyntheticTask = field(default_factory=SyntheticTask)
    method: str = "spl"
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: CompetenceSchedule = field(default_factory=CompetenceSchedule)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    total_steps: int = 5000
    eval_every: int = 100
    bucket_count: int = 20
    batch_size_tokens: int = 300
    eval_size: int = 300
    eval_bleu: bool = True
    track_slc: bool = True
    probe_size: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("total_steps", "eval_size", "probe_size"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("eval_every", "bucket_count", "batch_size_tokens"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.batch_size_tokens < self.task.length_max + 1:
            raise ConfigError("batch_size_tokens must hold the longest sentence")
        if self.task.length_max + 2 > self.model.max_len:
            raise ConfigError("task.length_max + 2 exceeds model.max_len")
        # vocabulary sizes always follow the task
        v = self.task.model_vocab
        if (self.model.vocab_size_src, self.model.vocab_size_tgt) != (v, v):
            object.__setattr__(self, "model", replace(self.model, vocab_size_src=v, vocab_size_tgt=v))

    @property
    def is_spl(self) -> bool:
        return self.method == "spl"


def _flatten(obj, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = value
    return out


def flatten(cfg: RunConfig) -> dict[str, Any]:
    return _flatten(cfg)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: RunConfig) -> str:
    lines = ["# spl_nmt run config (flat key = value)"]
    lines += [f"{k} = {_format(v)}" for k, v in flatten(cfg).items()]
    return "\n".join(lines) + "\n"


def _field_types() -> dict[str, type]:
    types: dict[str, type] = {}

    def walk(cls, prefix):
        for f in fields(cls):
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
            if is_dataclass(default):
                walk(type(default), prefix + f.name + ".")
            else:
                types[prefix + f.name] = type(default)

    walk(RunConfig, "")
    return types


FIELD_TYPES = _field_types()


def parse_value(key: str, text: str) -> Any:
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_text(text: str) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, val)
    return values


def build(overrides: dict[str, Any] | None = None, base: RunConfig | None = None) -> RunConfig:
    """Apply flat ``overrides`` on top of ``base`` (defaults when omitted)."""
    flat = flatten(base or RunConfig())
    for key, value in (overrides or {}).items():
        if key not in flat:
            raise ConfigError(f"unknown config key {key!r}")
        flat[key] = value
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        if rest:
            nested.setdefault(head, {})[rest] = value
        else:
            nested[head] = value
    try:
        sections = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)
                    if is_dataclass(getattr(RunConfig(), f.name))}
        kwargs = {k: sections[k](**v) if k in sections else v for k, v in nested.items()}
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    values = parse_text(Path(path).read_text())
    values.update(overrides or {})
    return build(values)


def with_overrides(cfg: RunConfig, **flat: Any) -> RunConfig:
    """``with_overrides(cfg, **{"confidence.k": 0.0})``."""
    return build(flat, base=cfg)
