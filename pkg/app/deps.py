"""Dependency wiring for FastAPI routes."""
from functools import lru_cache

from app.models.registry import ModelRegistry
from app.monitoring.logger import configure_logging
from app.monitoring.metrics import MetricsCollector
from app.services.job_manager import JobManager
from app.services.steering_service import SteeringService
from app.utils.config import get_settings


@lru_cache()
def get_registry() -> ModelRegistry:
    settings = get_settings()
    return ModelRegistry(
        registry_path=settings.model_registry_path,
        default_version=settings.default_model_version,
    )


@lru_cache()
def get_metrics() -> MetricsCollector:
    return MetricsCollector()


@lru_cache()
def get_job_manager() -> JobManager:
    settings = get_settings()
    return JobManager(max_workers=settings.eval_max_workers, storage_dir=settings.job_storage_dir)


@lru_cache()
def get_steering_service() -> SteeringService:
    settings = get_settings()
    configure_logging(settings.service_name, settings.log_level)
    return SteeringService(
        settings=settings,
        registry=get_registry(),
        metrics=get_metrics(),
        job_manager=get_job_manager(),
    )


__all__ = [
    "get_registry",
    "get_metrics",
    "get_job_manager",
    "get_steering_service",
]
