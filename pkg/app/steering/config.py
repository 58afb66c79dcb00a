"""Hyperparameters for test-time steering."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from app.utils.config import ConfigError


class Optimizer(str, Enum):
    GD = "gd"
    ADAM = "adam"


class AggregationMode(str, Enum):
    CONTEXT_TOKEN = "context"
    ANSWER_START = "answer_start"


class EnergyMode(str, Enum):
    AUTO = "auto"
    HARD = "hard"
    SOFT = "soft"


@dataclass(frozen=True)
class AggregationSpec:
    mode: AggregationMode
    layer_window: Tuple[int, int]

    def validate(self, n_layers: int) -> None:
        lo, hi = self.layer_window
        if lo > hi or lo < 0 or hi >= n_layers:
            raise ValueError(f"layer window {self.layer_window} is empty or outside [0, {n_layers})")

    @property
    def layers(self) -> range:
        return range(self.layer_window[0], self.layer_window[1] + 1)


def middle_window(n_layers: int) -> Tuple[int, int]:
    """[ceil(L/4), floor(3L/4)], falling back to all layers when that is empty."""

    lo, hi = math.ceil(n_layers / 4), (3 * n_layers) // 4
    hi = min(hi, n_layers - 1)
    if lo > hi:
        return (0, n_layers - 1)
    return (lo, hi)


def default_aggregation(mode: AggregationMode, n_layers: int) -> AggregationSpec:
    if mode is AggregationMode.CONTEXT_TOKEN:
        return AggregationSpec(mode, (0, n_layers - 1))
    return AggregationSpec(mode, middle_window(n_layers))


@dataclass(frozen=True)
class EarlyStopConfig:
    enabled: bool = True
    energy_threshold: float = 0.2
    min_improvement: float = 0.01


_DEFAULT_ITERATIONS = {Optimizer.GD: 5, Optimizer.ADAM: 3}
_DEFAULT_MODE = {Optimizer.GD: AggregationMode.CONTEXT_TOKEN, Optimizer.ADAM: AggregationMode.ANSWER_START}


@dataclass(frozen=True)
class SteeringConfig:
    """All steering knobs. ``iterations`` and the aggregation resolve per optimizer when unset."""

    iterations: Optional[int] = None
    alpha: float = 400.0
    beta: float = 0.5
    lr: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    gamma: float = 0.7
    sigma: float = 0.1
    soft_normalized: bool = True
    energy_mode: EnergyMode = EnergyMode.AUTO
    aggregation: Optional[AggregationMode] = None
    layer_start: Optional[int] = None
    layer_end: Optional[int] = None
    early_stop: EarlyStopConfig = field(default_factory=EarlyStopConfig)
    eta: float = 10.0

    def __post_init__(self) -> None:
        if self.iterations is not None and self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not math.isfinite(self.eta):
            raise ValueError("eta must be finite")

    def resolve_iterations(self, optimizer: Optimizer) -> int:
        return _DEFAULT_ITERATIONS[Optimizer(optimizer)] if self.iterations is None else self.iterations

    def resolve_aggregation(self, optimizer: Optimizer, n_layers: int) -> AggregationSpec:
        mode = self.aggregation or _DEFAULT_MODE[Optimizer(optimizer)]
        spec = default_aggregation(mode, n_layers)
        lo = spec.layer_window[0] if self.layer_start is None else self.layer_start
        hi = spec.layer_window[1] if self.layer_end is None else self.layer_end
        spec = AggregationSpec(mode, (lo, hi))
        spec.validate(n_layers)
        return spec

    def replace(self, **changes: Any) -> "SteeringConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        payload = dataclasses.asdict(self)
        payload["energy_mode"] = self.energy_mode.value
        payload["aggregation"] = self.aggregation.value if self.aggregation else None
        return payload

    @classmethod
    def from_flat(cls, entries: Mapping[str, str]) -> "SteeringConfig":
        """Build from parsed ``key = value`` entries; unknown keys are errors."""

        kwargs: Dict[str, Any] = {}
        stop: Dict[str, Any] = {}
        for key, raw in entries.items():
            if key in _STOP_KEYS:
                stop[_STOP_KEYS[key]] = _convert(key, raw, _STOP_PARSERS[key])
            elif key in _PARSERS:
                kwargs[key] = _convert(key, raw, _PARSERS[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if stop:
            kwargs["early_stop"] = EarlyStopConfig(**stop)
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _optional_int(raw: str) -> Optional[int]:
    return None if raw.strip().lower() in {"", "none", "auto"} else int(raw)


def _optional_mode(raw: str) -> Optional[AggregationMode]:
    return None if raw.strip().lower() in {"", "none", "auto"} else AggregationMode(raw.strip())


def _convert(key: str, raw: str, parser: Callable[[str], Any]) -> Any:
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "iterations": _optional_int,
    "alpha": float,
    "beta": float,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "gamma": float,
    "sigma": float,
    "soft_normalized": parse_bool,
    "energy_mode": lambda raw: EnergyMode(raw.strip()),
    "aggregation": _optional_mode,
    "layer_start": _optional_int,
    "layer_end": _optional_int,
    "eta": float,
}
_STOP_KEYS = {"early_stop": "enabled", "energy_threshold": "energy_threshold", "min_improvement": "min_improvement"}
_STOP_PARSERS: Dict[str, Callable[[str], Any]] = {
    "early_stop": parse_bool,
    "energy_threshold": float,
    "min_improvement": float,
}


__all__ = [
    "Optimizer",
    "AggregationMode",
    "AggregationSpec",
    "EnergyMode",
    "EarlyStopConfig",
    "SteeringConfig",
    "default_aggregation",
    "middle_window",
    "parse_bool",
]
