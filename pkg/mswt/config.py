"""Run configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
import logging
import types
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigError
from .model import ABLATION_MODES, ModelConfig

logger = logging.getLogger(__name__)

T = TypeVar("T")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(slots=True)
class RunConfig:
    """Everything a training or ablation run needs.

    Defaults follow the full-scale recipe; :meth:`desk` gives the short preset.

    Parameters
    ----------
    corpus : str
        Corpus directory written by ``gen-corpus``.
    mode : str
        Ablation mode of the model.
    batch, iters : int
        Batch size and total number of optimizer steps.
    lr, step_size, gamma : float, int, float
        Step schedule ``lr * gamma ** floor(iter / step_size)``.
    weight_decay, beta1, beta2 : float
        AdamW hyper-parameters.
    seed : int
        Seeds parameter initialisation, batch order and flips.
    out : str
        Directory receiving the checkpoint and metrics log.
    eval_every, log_every : int
        Validation and loss-logging cadence in iterations; ``0`` disables periodic validation.
    hflip : bool
        Random horizontal flips with probability 0.5.
    """

    corpus: str = "corpus"
    mode: str = "full"
    batch: int = 24
    iters: int = 150_000
    lr: float = 1e-4
    step_size: int = 60_000
    gamma: float = 0.5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    out: str = "runs/mswt"
    eval_every: int = 1000
    log_every: int = 50
    hflip: bool = True
    widths: tuple[int, ...] = (32, 64, 128, 256)
    embed_dims: tuple[int, ...] = (64, 128, 320)
    heads: tuple[int, ...] = (1, 2, 5)
    fusion_levels: int = 3
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.batch < 1:
            msg = f"Batch size must be >= 1, got {self.batch}."
            raise ConfigError(msg)
        if self.iters < 1:
            msg = f"Iteration count must be >= 1, got {self.iters}."
            raise ConfigError(msg)
        if self.lr <= 0.0:
            msg = f"Learning rate must be positive, got {self.lr}."
            raise ConfigError(msg)
        if self.step_size < 1 or self.log_every < 1 or self.eval_every < 0:
            msg = "step_size and log_every must be >= 1 and eval_every >= 0."
            raise ConfigError(msg)
        if self.mode not in ABLATION_MODES:
            msg = f"Unknown ablation mode {self.mode!r}; expected one of {ABLATION_MODES}."
            raise ConfigError(msg)

    @classmethod
    def desk(cls, **overrides: Any) -> RunConfig:
        """Short preset: 3000 iterations with the learning rate halved every 1000."""
        return cls(**{"iters": 3000, "step_size": 1000, "eval_every": 500, **overrides})

    def model_config(self, image_size: int, seed: int | None = None) -> ModelConfig:
        return ModelConfig(
            image_size=image_size,
            widths=self.widths,
            embed_dims=self.embed_dims,
            heads=self.heads,
            mode=self.mode,
            fusion_levels=self.fusion_levels,
            max_tokens=self.max_tokens,
            seed=self.seed if seed is None else seed,
        )


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment and blank lines are skipped."""
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            msg = f"Line {number}: expected 'key = value', got {raw!r}."
            raise ConfigError(msg)
        if key in values:
            msg = f"Line {number}: duplicate key {key!r}."
            raise ConfigError(msg)
        values[key] = value.strip()
    return values


def _coerce(raw: str, hint: Any, key: str) -> Any:
    origin = typing.get_origin(hint)
    try:
        if origin is tuple:
            item_type = typing.get_args(hint)[0]
            return tuple(_coerce(part.strip(), item_type, key) for part in raw.split(",") if part.strip())
        if origin in {typing.Union, types.UnionType}:
            options = [arg for arg in typing.get_args(hint) if arg is not type(None)]
            if raw.lower() in {"", "none"}:
                return None
            return _coerce(raw, options[0], key)
        if hint is bool:
            lowered = raw.lower()
            if lowered not in _TRUE | _FALSE:
                msg = f"Key {key!r}: expected a boolean, got {raw!r}."
                raise ConfigError(msg)
            return lowered in _TRUE
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError as err:
        msg = f"Key {key!r}: cannot read {raw!r} as {hint}."
        raise ConfigError(msg) from err
    return raw


def from_mapping(cls: type[T], values: dict[str, str]) -> T:
    """Build dataclass ``cls`` from string values, coercing each to its field type.

    Raises
    ------
    ConfigError
        On an unknown key or a value that does not parse.
    """
    hints = typing.get_type_hints(cls)
    names = {item.name for item in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        msg = f"Unknown configuration keys for {cls.__name__}: {', '.join(unknown)}."
        raise ConfigError(msg)
    return cls(**{key: _coerce(value, hints[key], key) for key, value in values.items()})


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return "none" if value is None else str(value)


def dump_config(obj: Any) -> str:
    """Serialise a dataclass instance in the ``key = value`` format."""
    return "".join(f"{item.name} = {_format_value(getattr(obj, item.name))}\n" for item in dataclasses.fields(obj))


def load_config(cls: type[T], path: str | Path, overrides: dict[str, Any] | None = None) -> T:
    """Read ``path`` into ``cls``; ``overrides`` (already typed, e.g. from CLI flags) win."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as err:
        msg = f"Config file {path} is not UTF-8."
        raise ConfigError(msg) from err
    values = parse_config_text(text)
    config = from_mapping(cls, values)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    logger.debug("loaded %s from %s", cls.__name__, path)
    return config


__all__ = ["RunConfig", "dump_config", "from_mapping", "load_config", "parse_config_text"]
