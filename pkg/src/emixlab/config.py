"""Flat ``key = value`` run configuration.

Keys are the field names of :class:`TrainConfig` and :class:`TaskConfig`.
``seed`` appears in both and sets both. Blank lines and ``#`` comments are
ignored; nesting is not supported.
"""

from __future__ import annotations

from dataclasses import MISSING, dataclass, fields, replace

from .numerics import ContractError
from .synthdata import TaskConfig
from .trainer import TrainConfig


class ConfigError(ContractError):
    """Malformed, duplicate or unknown configuration entry."""


_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
_TASK_KEYS = {f.name: f for f in fields(TaskConfig)}
KNOWN_KEYS = tuple(sorted(set(_TRAIN_KEYS) | set(_TASK_KEYS)))


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    task: TaskConfig = TaskConfig()

    def with_seed(self, seed: int) -> "RunConfig":
        return RunConfig(replace(self.train, seed=seed), replace(self.task, seed=seed))

    def items(self) -> list[tuple[str, str]]:
        """Every key with its rendered value, in a stable order."""
        out = {}
        for obj in (self.task, self.train):
            for f in fields(obj):
                out[f.name] = format_value(getattr(obj, f.name))
        return sorted(out.items())

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _default(field):
    return field.default if field.default is not MISSING else field.default_factory()


def _coerce(key: str, raw: str, template):
    try:
        if isinstance(template, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            return tuple(float(p) for p in raw.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        if key not in _TRAIN_KEYS and key not in _TASK_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key}")
        pairs[key] = value
    return pairs


def build(pairs: dict[str, str]) -> RunConfig:
    train_kw, task_kw = {}, {}
    for key, raw in pairs.items():
        if key in _TRAIN_KEYS:
            train_kw[key] = _coerce(key, raw, _default(_TRAIN_KEYS[key]))
        if key in _TASK_KEYS:
            task_kw[key] = _coerce(key, raw, _default(_TASK_KEYS[key]))
    return RunConfig(TrainConfig(**train_kw), TaskConfig(**task_kw))


def loads(text: str) -> RunConfig:
    return build(parse_pairs(text))


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
