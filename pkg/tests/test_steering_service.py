import json
from pathlib import Path

import numpy as np
import pytest

from app.harness.dataset import gen_dataset
from app.harness.evaluation import EvalMode
from app.models.registry import ModelRegistry
from app.monitoring.metrics import MetricsCollector
from app.services.job_manager import JobManager
from app.services.steering_service import SteeringService, run_steering
from app.steering.config import Optimizer, SteeringConfig
from app.steering.energy import region_mass
from app.steering.visprompt import Point, rasterize
from app.utils.config import AppSettings
from tests.conftest import TINY_CONFIG


def build_service(tmp_path: Path, default_version: str = "v1") -> SteeringService:
    store = tmp_path / "model_store"
    (store / "v1").mkdir(parents=True)
    (store / "v1" / "model.json").write_text(json.dumps({"config": TINY_CONFIG.to_dict()}))
    settings = AppSettings(
        env="test",
        model_registry_path=store,
        default_model_version=default_version,
        service_name="attention-steering-test",
        eval_max_workers=1,
        job_storage_dir=tmp_path / "jobs",
        log_level="INFO",
    )
    registry = ModelRegistry(settings.model_registry_path, settings.default_model_version)
    jobs = JobManager(max_workers=settings.eval_max_workers, storage_dir=settings.job_storage_dir)
    return SteeringService(settings=settings, registry=registry, metrics=MetricsCollector(), job_manager=jobs)


def test_run_steering_reports_energy_and_prediction(tiny_model, tiny_sample) -> None:
    outcome = run_steering(tiny_model, tiny_sample, Optimizer.GD, SteeringConfig(iterations=2))
    assert outcome.prediction in (tiny_sample.answer_a, tiny_sample.answer_b)
    assert set(outcome.candidate_logits) == {tiny_sample.answer_a, tiny_sample.answer_b}
    assert outcome.attention_before.shape == (4, 4)
    before_mass = outcome.attention_before.sum()
    assert 0.0 < before_mass <= 1.0 + 1e-12
    assert 0.0 <= outcome.steering.trace.final_energy <= 1.0
    region = rasterize(tiny_sample.prompt, TINY_CONFIG.grid)
    assert outcome.mass_before == region_mass(outcome.attention_before, region)
    assert outcome.mass_after == region_mass(outcome.attention_after, region)
    payload = outcome.to_dict()
    assert payload["trace"]["optimizer"] == "gd"
    assert payload["region_mass"] == {"before": outcome.mass_before, "after": outcome.mass_after}
    assert payload["correct"] == (outcome.prediction == tiny_sample.truth)


def test_run_steering_accepts_an_override_prompt(tiny_model, tiny_sample) -> None:
    outcome = run_steering(tiny_model, tiny_sample, Optimizer.ADAM, SteeringConfig(iterations=1), Point(0.9, 0.9))
    assert outcome.steering.target.kind.value == "soft"
    assert np.argmax(outcome.steering.target.weights) == 15


def test_service_steer_records_metrics(tmp_path: Path) -> None:
    service = build_service(tmp_path)
    sample = gen_dataset(1, seed=0, g=TINY_CONFIG.grid)[0]
    response = service.steer(sample, Optimizer.ADAM, SteeringConfig(iterations=1), debias=True)
    assert response["version"] == "v1"
    assert response["debiased"] is True
    assert response["checksum"] == service.model().checksum()
    snapshot = service.metrics_snapshot()
    assert snapshot["counters"]["steer_requests_total"] == 1
    assert snapshot["latency"]["steer.adam"]["count"] == 1


def test_eval_job_completes(tmp_path: Path) -> None:
    service = build_service(tmp_path)
    cfg = SteeringConfig(iterations=1)
    job_id = service.submit_eval(2, 0, [EvalMode.PLAIN, EvalMode.ADAM], cfg, cfg)
    service.job_manager.wait(job_id, timeout=120)
    status = service.eval_status(job_id)
    assert status["status"] == "completed"
    assert status["result"]["n_samples"] == 2
    assert set(status["result"]["accuracy"]) == {"plain", "adam"}
    assert service.eval_status("missing")["status"] == "not_found"
    service.job_manager.shutdown()


def test_failed_eval_job_is_recorded(tmp_path: Path) -> None:
    service = build_service(tmp_path)
    job_id = service.submit_eval(2, 0, [EvalMode.PLAIN], SteeringConfig(), SteeringConfig(), model_version="v9")
    service.job_manager.wait(job_id, timeout=60)
    status = service.eval_status(job_id)
    assert status["status"] == "failed"
    assert "FileNotFoundError" in status["error"]


def test_health_and_model_admin(tmp_path: Path) -> None:
    service = build_service(tmp_path)
    assert service.health()["status"] == "ready"
    assert service.list_models()["available_versions"] == ["v1"]
    with pytest.raises(FileNotFoundError):
        service.load_model("v2")
    with pytest.raises(ValueError):
        service.unload_model("v1")


def test_health_degrades_without_default_model(tmp_path: Path) -> None:
    service = build_service(tmp_path, default_version="v3")
    health = service.health()
    assert health["status"] == "degraded"
    assert health["checksum"] is None
