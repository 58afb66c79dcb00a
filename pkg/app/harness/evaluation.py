"""Referring-object-classification evaluation across decoding and steering modes."""
from __future__ import annotations

import json
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.harness.dataset import RocSample, dataset_digest
from app.models.toy_decoder import ToyDecoder
from app.monitoring.logger import logger
from app.monitoring.metrics import MetricsCollector
from app.services.decoding import (
    DecodeConfig,
    EditSteps,
    edit_attention_decode,
    greedy_decode,
    prompt_debias_decode,
)
from app.steering.config import Optimizer, SteeringConfig
from app.steering.energy import region_mass
from app.steering.optimizers import SteeringResult, StopReason, steer
from app.steering.visprompt import RegionMask, rasterize


class FreezeViolation(RuntimeError):
    """Raised when model parameters change during an evaluation."""


class EvalMode(str, Enum):
    PLAIN = "plain"
    EDIT = "edit"
    GD = "gd"
    ADAM = "adam"
    ADAM_DEBIAS = "adam+debias"


ALL_MODES = tuple(EvalMode)


def parse_modes(raw: str) -> List[EvalMode]:
    """Comma-separated mode list, e.g. ``plain,edit,gd,adam,adam+debias``."""

    modes = [EvalMode(part.strip()) for part in raw.split(",") if part.strip()]
    if not modes:
        raise ValueError("at least one evaluation mode is required")
    return list(dict.fromkeys(modes))


@dataclass(frozen=True)
class EvalConfig:
    gd: SteeringConfig = field(default_factory=SteeringConfig)
    adam: SteeringConfig = field(default_factory=SteeringConfig)
    eta: float = 10.0
    max_workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {"gd": self.gd.to_dict(), "adam": self.adam.to_dict(), "eta": self.eta}


@dataclass(frozen=True)
class SampleOutcome:
    index: int
    mode: EvalMode
    predicted: int
    correct: bool
    initial_energy: Optional[float] = None
    final_energy: Optional[float] = None
    mass_before: Optional[float] = None
    mass_after: Optional[float] = None
    iterations: Optional[int] = None
    stop_reason: Optional[StopReason] = None
    seconds: float = field(default=0.0, compare=False)


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _fraction(flags: Sequence[bool]) -> Optional[float]:
    return float(np.mean(flags)) if flags else None


@dataclass(frozen=True)
class ModeStats:
    mode: EvalMode
    count: int
    correct: int
    mean_initial_energy: Optional[float] = None
    mean_final_energy: Optional[float] = None
    mean_mass_before: Optional[float] = None
    mean_mass_after: Optional[float] = None
    energy_decreased: Optional[float] = None
    mass_increased: Optional[float] = None
    mean_iterations: Optional[float] = None
    stop_reasons: Dict[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0

    @classmethod
    def from_outcomes(cls, mode: EvalMode, outcomes: Sequence[SampleOutcome]) -> "ModeStats":
        steered = [o for o in outcomes if o.final_energy is not None]
        reasons = Counter(o.stop_reason.value for o in steered if o.stop_reason is not None)
        return cls(
            mode=mode,
            count=len(outcomes),
            correct=sum(o.correct for o in outcomes),
            mean_initial_energy=_mean([o.initial_energy for o in steered]),
            mean_final_energy=_mean([o.final_energy for o in steered]),
            mean_mass_before=_mean([o.mass_before for o in steered]),
            mean_mass_after=_mean([o.mass_after for o in steered]),
            energy_decreased=_fraction([o.final_energy < o.initial_energy for o in steered]),
            mass_increased=_fraction([o.mass_after > o.mass_before for o in steered]),
            mean_iterations=_mean([o.iterations for o in steered]),
            stop_reasons=dict(sorted(reasons.items())) if steered else {},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.value,
            "count": self.count,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "mean_initial_energy": self.mean_initial_energy,
            "mean_final_energy": self.mean_final_energy,
            "mean_mass_before": self.mean_mass_before,
            "mean_mass_after": self.mean_mass_after,
            "energy_decreased": self.energy_decreased,
            "mass_increased": self.mass_increased,
            "mean_iterations": self.mean_iterations,
            "stop_reasons": self.stop_reasons,
        }


@dataclass
class EvalReport:
    n_samples: int
    model_checksum: str
    dataset_digest: str
    modes: Dict[str, ModeStats]
    config: Dict[str, Any]
    wall_clock: Dict[str, float] = field(default_factory=dict)

    @property
    def accuracy(self) -> Dict[str, float]:
        return {name: stats.accuracy for name, stats in self.modes.items()}

    def to_dict(self) -> Dict[str, Any]:
        """Deterministic report body; wall-clock lives in the timing sidecar."""

        return {
            "n_samples": self.n_samples,
            "model_checksum": self.model_checksum,
            "dataset_digest": self.dataset_digest,
            "accuracy": self.accuracy,
            "modes": {name: stats.to_dict() for name, stats in self.modes.items()},
            "config": self.config,
        }


def timing_path(report_path: Path) -> Path:
    return Path(report_path).with_suffix(".timing.json")


def write_report(report: EvalReport, path: Path) -> Path:
    """Write the report JSON and its ``.timing.json`` sidecar; returns the sidecar path."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    sidecar = timing_path(path)
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump({"wall_clock_seconds": report.wall_clock}, f, indent=2, sort_keys=True)
    return sidecar


def _choose(logits: np.ndarray, sample: RocSample) -> int:
    """Higher of the two candidate logits; ties go to answer A."""

    return sample.answer_a if logits[sample.answer_a] >= logits[sample.answer_b] else sample.answer_b


def _outcome(
    sample: RocSample,
    mode: EvalMode,
    logits: np.ndarray,
    started: float,
    steering: Optional[SteeringResult] = None,
    region: Optional[RegionMask] = None,
) -> SampleOutcome:
    predicted = _choose(logits, sample)
    extra: Dict[str, Any] = {}
    if steering is not None and region is not None:
        first, last = steering.trace.records[0], steering.trace.records[-1]
        extra = {
            "initial_energy": first.energy,
            "final_energy": last.energy,
            "mass_before": region_mass(steering.attention_before, region),
            "mass_after": region_mass(steering.attention_after, region),
            "iterations": steering.trace.steps_taken,
            "stop_reason": steering.trace.stop_reason,
        }
    return SampleOutcome(
        index=sample.index,
        mode=mode,
        predicted=predicted,
        correct=predicted == sample.truth,
        seconds=time.perf_counter() - started,
        **extra,
    )


def evaluate_sample(
    model: ToyDecoder, sample: RocSample, modes: Sequence[EvalMode], cfg: EvalConfig
) -> List[SampleOutcome]:
    """Run every requested mode on one sample; the debias mode reuses the Adam latent."""

    single = DecodeConfig(max_new_tokens=1)
    text = list(sample.question)
    region = rasterize(sample.prompt, model.config.grid)
    outcomes: List[SampleOutcome] = []
    adam_run: Optional[SteeringResult] = None
    adam_seconds = 0.0

    for mode in modes:
        started = time.perf_counter()
        if mode is EvalMode.PLAIN:
            result = greedy_decode(model, sample.image, text, single)
            outcomes.append(_outcome(sample, mode, result.step_logits[0], started))
        elif mode is EvalMode.EDIT:
            result = edit_attention_decode(
                model, sample.image, text, region, cfg.eta, EditSteps.FIRST_ONLY, max_new_tokens=1
            )
            outcomes.append(_outcome(sample, mode, result.step_logits[0], started))
        elif mode is EvalMode.GD:
            run = steer(model, sample.image, text, sample.prompt, Optimizer.GD, cfg.gd)
            result = greedy_decode(model, sample.image, text, single, p_v=run.latent)
            outcomes.append(_outcome(sample, mode, result.step_logits[0], started, run, region))
        else:
            if adam_run is None:
                adam_run = steer(model, sample.image, text, sample.prompt, Optimizer.ADAM, cfg.adam)
                adam_seconds = time.perf_counter() - started
            else:
                started -= adam_seconds
            if mode is EvalMode.ADAM:
                result = greedy_decode(model, sample.image, text, single, p_v=adam_run.latent)
            else:
                result = prompt_debias_decode(
                    model, sample.image, text, adam_run.latent, cfg.adam.gamma, max_new_tokens=1
                )
            outcomes.append(_outcome(sample, mode, result.step_logits[0], started, adam_run, region))
    return outcomes


def eval_roc(
    model: ToyDecoder,
    dataset: Sequence[RocSample],
    modes: Sequence[EvalMode] = ALL_MODES,
    cfg: Optional[EvalConfig] = None,
    metrics: Optional[MetricsCollector] = None,
) -> EvalReport:
    """Evaluate every sample under every mode; per-mode numbers are independent of mode order."""

    cfg = cfg or EvalConfig()
    modes = [EvalMode(m) for m in dict.fromkeys(modes)]
    checksum = model.checksum()

    def run(sample: RocSample) -> List[SampleOutcome]:
        return evaluate_sample(model, sample, modes, cfg)

    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            per_sample = list(pool.map(run, dataset))
    else:
        per_sample = [run(sample) for sample in dataset]

    if model.checksum() != checksum:
        raise FreezeViolation("model parameters changed during evaluation")

    by_mode: Dict[EvalMode, List[SampleOutcome]] = {mode: [] for mode in modes}
    for outcomes in per_sample:
        for outcome in outcomes:
            by_mode[outcome.mode].append(outcome)
            if metrics is not None:
                metrics.observe_latency(f"eval.{outcome.mode.value}", outcome.seconds)
                if outcome.stop_reason is not None:
                    metrics.increment(f"steering.stop.{outcome.stop_reason.value}")

    ordered = sorted(modes, key=ALL_MODES.index)
    stats = {mode.value: ModeStats.from_outcomes(mode, by_mode[mode]) for mode in ordered}
    for name, mode_stats in stats.items():
        logger.info(
            "evaluation mode finished",
            extra={"ctx_mode": name, "ctx_accuracy": mode_stats.accuracy, "ctx_count": mode_stats.count},
        )
    return EvalReport(
        n_samples=len(dataset),
        model_checksum=checksum,
        dataset_digest=dataset_digest(dataset),
        modes=stats,
        config=cfg.to_dict(),
        wall_clock={mode.value: float(sum(o.seconds for o in by_mode[mode])) for mode in ordered},
    )


__all__ = [
    "ALL_MODES",
    "EvalConfig",
    "EvalMode",
    "EvalReport",
    "FreezeViolation",
    "ModeStats",
    "SampleOutcome",
    "eval_roc",
    "evaluate_sample",
    "parse_modes",
    "timing_path",
    "write_report",
]
