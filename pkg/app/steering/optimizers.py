"""Test-time optimization of the latent modifier added to the visual tokens."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.models.toy_decoder import ToyDecoder
from app.monitoring.logger import logger
from app.steering.config import AggregationSpec, Optimizer, SteeringConfig
from app.steering.energy import EnergyTarget, build_target, evaluate_latent
from app.steering.visprompt import VisualPrompt


@dataclass
class LatentModifier:
    values: np.ndarray

    @classmethod
    def zeros(cls, n_v: int, d_model: int) -> "LatentModifier":
        return cls(np.zeros((n_v, d_model)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, values: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(values), np.zeros_like(values), 0)


def adam_update(
    values: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> Tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step; returns the new values and state without mutating inputs."""

    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return values - lr * m_hat / (np.sqrt(v_hat) + epsilon), AdamState(m, v, t)


class StopReason(str, Enum):
    MAX_ITERS = "max_iters"
    ENERGY_THRESHOLD = "energy_threshold"
    NO_IMPROVEMENT = "no_improvement"


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    energy: float
    mass_ratio: float
    grad_norm: float
    p_v_norm: float


@dataclass
class SteeringTrace:
    optimizer: Optimizer
    records: List[TraceRecord] = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_ITERS

    @property
    def initial_energy(self) -> float:
        return self.records[0].energy

    @property
    def final_energy(self) -> float:
        return self.records[-1].energy

    @property
    def steps_taken(self) -> int:
        return len(self.records) - 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimizer": self.optimizer.value,
            "stop_reason": self.stop_reason.value,
            "records": [asdict(r) for r in self.records],
        }


@dataclass(frozen=True)
class SteeringResult:
    latent: LatentModifier
    trace: SteeringTrace
    spec: AggregationSpec
    target: EnergyTarget = field(repr=False, compare=False)
    attention_before: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    attention_after: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def _record(k: int, energy, grad: np.ndarray, values: np.ndarray) -> TraceRecord:
    return TraceRecord(
        iteration=k,
        energy=energy.value,
        mass_ratio=energy.mass_ratio,
        grad_norm=float(np.linalg.norm(grad)),
        p_v_norm=float(np.linalg.norm(values)),
    )


def _prepare(
    model: ToyDecoder, prompt: VisualPrompt, cfg: SteeringConfig, optimizer: Optimizer
) -> Tuple[int, AggregationSpec, EnergyTarget, np.ndarray]:
    mcfg = model.config
    return (
        cfg.resolve_iterations(optimizer),
        cfg.resolve_aggregation(optimizer, mcfg.n_layers),
        build_target(prompt, mcfg.grid, cfg),
        LatentModifier.zeros(mcfg.n_v, mcfg.d_model).values,
    )


def _finish(
    trace: SteeringTrace,
    values: np.ndarray,
    spec: AggregationSpec,
    target: EnergyTarget,
    maps: Tuple[np.ndarray, np.ndarray],
) -> SteeringResult:
    logger.info(
        "steering finished",
        extra={
            "ctx_optimizer": trace.optimizer.value,
            "ctx_steps": trace.steps_taken,
            "ctx_stop_reason": trace.stop_reason.value,
            "ctx_initial_energy": trace.initial_energy,
            "ctx_final_energy": trace.final_energy,
        },
    )
    return SteeringResult(LatentModifier(values), trace, spec, target, maps[0], maps[1])


def steer_gd_full(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    prompt: VisualPrompt,
    cfg: Optional[SteeringConfig] = None,
) -> SteeringResult:
    """Gradient descent on the latent with iterate EMA and early stopping.

    Each iteration evaluates E at the current latent, records it, then applies
    ``u = p - alpha * grad`` and ``p = beta * p + (1 - beta) * u``. The trace
    holds one record per evaluated latent, the last being the returned one.
    """

    cfg = cfg or SteeringConfig()
    iterations, spec, target, values = _prepare(model, prompt, cfg, Optimizer.GD)
    trace = SteeringTrace(Optimizer.GD)
    stop = cfg.early_stop
    previous: Optional[float] = None
    first: Optional[np.ndarray] = None
    for k in range(iterations + 1):
        evaluation = evaluate_latent(model, image, text, values, target, spec)
        first = evaluation.attention if first is None else first
        record = _record(k, evaluation.energy, evaluation.grad, values)
        trace.records.append(record)
        logger.debug(
            "gd step",
            extra={"ctx_iter": k, "ctx_energy": record.energy, "ctx_grad_norm": record.grad_norm},
        )
        if k == iterations:
            trace.stop_reason = StopReason.MAX_ITERS
            break
        if stop.enabled:
            if record.energy < stop.energy_threshold:
                trace.stop_reason = StopReason.ENERGY_THRESHOLD
                break
            if previous is not None:
                improvement = (previous - record.energy) / max(previous, 1e-12)
                if improvement < stop.min_improvement:
                    trace.stop_reason = StopReason.NO_IMPROVEMENT
                    break
        update = values - cfg.alpha * evaluation.grad
        values = cfg.beta * values + (1.0 - cfg.beta) * update
        previous = record.energy
    return _finish(trace, values, spec, target, (first, evaluation.attention))


def steer_adam_full(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    prompt: VisualPrompt,
    cfg: Optional[SteeringConfig] = None,
) -> SteeringResult:
    """Adam on the gradient of ``alpha * E`` with bias correction; no EMA, no early stop."""

    cfg = cfg or SteeringConfig()
    iterations, spec, target, values = _prepare(model, prompt, cfg, Optimizer.ADAM)
    trace = SteeringTrace(Optimizer.ADAM)
    state = AdamState.zeros_like(values)
    first: Optional[np.ndarray] = None
    for k in range(iterations + 1):
        evaluation = evaluate_latent(model, image, text, values, target, spec, scale=cfg.alpha)
        first = evaluation.attention if first is None else first
        record = _record(k, evaluation.energy, evaluation.grad, values)
        trace.records.append(record)
        logger.debug(
            "adam step",
            extra={"ctx_iter": k, "ctx_energy": record.energy, "ctx_grad_norm": record.grad_norm},
        )
        if k == iterations:
            break
        values, state = adam_update(values, evaluation.grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    return _finish(trace, values, spec, target, (first, evaluation.attention))


def steer_gd(model, image, text, prompt, cfg: Optional[SteeringConfig] = None) -> Tuple[LatentModifier, SteeringTrace]:
    result = steer_gd_full(model, image, text, prompt, cfg)
    return result.latent, result.trace


def steer_adam(model, image, text, prompt, cfg: Optional[SteeringConfig] = None) -> Tuple[LatentModifier, SteeringTrace]:
    result = steer_adam_full(model, image, text, prompt, cfg)
    return result.latent, result.trace


def steer(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    prompt: VisualPrompt,
    optimizer: Optimizer,
    cfg: Optional[SteeringConfig] = None,
) -> SteeringResult:
    if Optimizer(optimizer) is Optimizer.GD:
        return steer_gd_full(model, image, text, prompt, cfg)
    return steer_adam_full(model, image, text, prompt, cfg)


TRACE_COLUMNS = ["iter", "energy", "mass_ratio", "grad_norm", "p_v_norm"]


def write_trace_csv(trace: SteeringTrace, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow([r.iteration, repr(r.energy), repr(r.mass_ratio), repr(r.grad_norm), repr(r.p_v_norm)])


def summarize_traces(traces: Iterable[SteeringTrace]) -> Dict[str, Any]:
    """Mean final energy and stop-reason histogram over many runs."""

    traces = list(traces)
    reasons = Counter(t.stop_reason.value for t in traces)
    return {
        "count": len(traces),
        "mean_final_energy": float(np.mean([t.final_energy for t in traces])) if traces else 0.0,
        "stop_reasons": {reason.value: reasons.get(reason.value, 0) for reason in StopReason},
    }


def write_trace_summary(traces: Iterable[SteeringTrace], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summarize_traces(traces), f, indent=2, sort_keys=True)


__all__ = [
    "LatentModifier",
    "AdamState",
    "StopReason",
    "TraceRecord",
    "SteeringTrace",
    "SteeringResult",
    "adam_update",
    "steer",
    "steer_gd",
    "steer_gd_full",
    "steer_adam",
    "steer_adam_full",
    "summarize_traces",
    "write_trace_csv",
    "write_trace_summary",
]
