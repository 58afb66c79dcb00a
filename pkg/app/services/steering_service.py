"""Steering service orchestrating registry models, steering runs, eval jobs and monitoring."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from app.harness.dataset import RocSample, gen_dataset
from app.harness.evaluation import EvalConfig, EvalMode, eval_roc
from app.harness.vocab import Vocabulary
from app.models.registry import ModelRegistry
from app.models.toy_decoder import ToyDecoder
from app.monitoring.logger import logger
from app.monitoring.metrics import MetricsCollector
from app.services.decoding import DecodeConfig, greedy_decode, prompt_debias_decode
from app.services.job_manager import JobManager
from app.steering.config import Optimizer, SteeringConfig
from app.steering.energy import region_mass
from app.steering.optimizers import SteeringResult, steer
from app.steering.visprompt import VisualPrompt, rasterize
from app.utils.config import AppSettings


@dataclass
class SteerOutcome:
    sample: RocSample
    steering: SteeringResult
    prediction: int
    candidate_logits: Dict[int, float]
    attention_before: np.ndarray = field(repr=False)
    attention_after: np.ndarray = field(repr=False)
    mass_before: float = 0.0
    mass_after: float = 0.0
    debiased: bool = False

    @property
    def correct(self) -> bool:
        return self.prediction == self.sample.truth

    def to_dict(self, vocab: Optional[Vocabulary] = None) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "index": self.sample.index,
            "prediction": self.prediction,
            "truth": self.sample.truth,
            "correct": self.correct,
            "debiased": self.debiased,
            "candidate_logits": {str(k): v for k, v in self.candidate_logits.items()},
            "latent_norm": self.steering.latent.norm(),
            "region_mass": {"before": self.mass_before, "after": self.mass_after},
            "trace": self.steering.trace.to_dict(),
        }
        if vocab is not None:
            payload["prediction_text"] = vocab.decode([self.prediction])
        return payload


def run_steering(
    model: ToyDecoder,
    sample: RocSample,
    optimizer: Optimizer,
    cfg: Optional[SteeringConfig] = None,
    prompt: Optional[VisualPrompt] = None,
    debias: bool = False,
) -> SteerOutcome:
    """Steer one sample toward ``prompt`` (default: the sample's own) and read off the answer."""

    cfg = cfg or SteeringConfig()
    prompt = prompt or sample.prompt
    text = list(sample.question)
    result = steer(model, sample.image, text, prompt, optimizer, cfg)
    if debias:
        decoded = prompt_debias_decode(model, sample.image, text, result.latent, cfg.gamma, max_new_tokens=1)
    else:
        decoded = greedy_decode(model, sample.image, text, DecodeConfig(max_new_tokens=1), p_v=result.latent)
    logits = decoded.step_logits[0]
    a, b = sample.answer_a, sample.answer_b
    prediction = a if logits[a] >= logits[b] else b
    region = rasterize(prompt, model.config.grid)
    return SteerOutcome(
        sample=sample,
        steering=result,
        prediction=prediction,
        candidate_logits={a: float(logits[a]), b: float(logits[b])},
        attention_before=result.attention_before,
        attention_after=result.attention_after,
        mass_before=region_mass(result.attention_before, region),
        mass_after=region_mass(result.attention_after, region),
        debiased=debias,
    )


class SteeringService:
    def __init__(
        self,
        settings: AppSettings,
        registry: ModelRegistry,
        metrics: MetricsCollector,
        job_manager: JobManager,
    ) -> None:
        self.settings = settings
        self.registry = registry
        self.metrics = metrics
        self.job_manager = job_manager
        self.vocab = Vocabulary()

    def load_model(self, version: str) -> None:
        """Load a model version into memory."""
        self.registry.load(version)

    def unload_model(self, version: str) -> None:
        """Unload a model version from memory."""
        self.registry.unload(version)

    def promote_model(self, version: str) -> None:
        """Set a model version as the default."""
        self.registry.set_default_version(version)

    def list_models(self) -> Dict[str, Any]:
        return {
            "loaded_versions": self.registry.list_loaded_versions(),
            "available_versions": self.registry.list_available_versions(),
            "default_version": self.registry.default_version,
        }

    def model(self, version: Optional[str] = None) -> ToyDecoder:
        return self.registry.load(version or self.registry.default_version)

    def steer(
        self,
        sample: RocSample,
        optimizer: Optimizer,
        cfg: SteeringConfig,
        prompt: Optional[VisualPrompt] = None,
        debias: bool = False,
        model_version: Optional[str] = None,
    ) -> Dict[str, Any]:
        model = self.model(model_version)
        checksum = model.checksum()
        start = time.monotonic()
        self.metrics.increment("steer_requests_total")
        try:
            outcome = run_steering(model, sample, optimizer, cfg, prompt, debias)
        except Exception:
            self.metrics.increment("errors")
            logger.exception("steering request failed", extra={"ctx_version": model.version})
            raise
        latency = time.monotonic() - start
        self.metrics.observe_latency(f"steer.{Optimizer(optimizer).value}", latency)
        self.metrics.increment(f"steering.stop.{outcome.steering.trace.stop_reason.value}")
        logger.info(
            "steering request completed",
            extra={
                "ctx_version": model.version,
                "ctx_optimizer": Optimizer(optimizer).value,
                "ctx_latency_ms": int(latency * 1000),
                "ctx_final_energy": outcome.steering.trace.final_energy,
            },
        )
        payload = outcome.to_dict(self.vocab)
        payload.update({"version": model.version, "checksum": checksum, "latency_ms": latency * 1000})
        return payload

    def submit_eval(
        self,
        n: int,
        seed: int,
        modes: Sequence[EvalMode],
        gd: SteeringConfig,
        adam: SteeringConfig,
        eta: float = 10.0,
        model_version: Optional[str] = None,
    ) -> str:
        version = model_version or self.registry.default_version
        return self.job_manager.submit(self._run_eval, version, n, seed, list(modes), gd, adam, eta)

    def _run_eval(
        self,
        version: str,
        n: int,
        seed: int,
        modes: List[EvalMode],
        gd: SteeringConfig,
        adam: SteeringConfig,
        eta: float,
    ) -> Dict[str, Any]:
        model = self.registry.load(version)
        dataset = gen_dataset(n, seed, g=model.config.grid, vocab=self.vocab)
        report = eval_roc(model, dataset, modes, EvalConfig(gd=gd, adam=adam, eta=eta), metrics=self.metrics)
        payload = report.to_dict()
        payload["version"] = version
        payload["wall_clock_seconds"] = report.wall_clock
        return payload

    def eval_status(self, job_id: str) -> Dict[str, Any]:
        state = self.job_manager.state(job_id)
        if state is None:
            return {"job_id": job_id, "status": "not_found"}
        payload: Dict[str, Any] = {"job_id": job_id, "status": state.get("status", "unknown")}
        if "result" in state:
            payload["result"] = state["result"]
        if "error" in state:
            payload["error"] = state["error"]
        return payload

    def metrics_snapshot(self) -> Mapping[str, Any]:
        return self.metrics.snapshot()

    def health(self) -> Dict[str, Any]:
        try:
            model = self.registry.load(self.registry.default_version)
            status, checksum = "ready", model.checksum()
        except (OSError, ValueError):
            logger.exception("default model failed to load")
            status, checksum = "degraded", None
        return {
            "status": status,
            "default_model": self.registry.default_version,
            "checksum": checksum,
            "env": self.settings.env,
        }


__all__ = ["SteerOutcome", "SteeringService", "run_steering"]
