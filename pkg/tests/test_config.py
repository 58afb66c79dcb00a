import json
import logging
from pathlib import Path

import pytest

from app.monitoring.logger import configure_logging, logger
from app.monitoring.metrics import MetricsCollector, percentile
from app.steering.config import SteeringConfig
from app.utils.config import AppSettings, ConfigError, load_flat_config, parse_flat_config


def test_parse_flat_config() -> None:
    text = "# steering\nalpha = 200\n\nbeta=0.25  # ema\nenergy_mode = soft\n"
    assert parse_flat_config(text) == {"alpha": "200", "beta": "0.25", "energy_mode": "soft"}


@pytest.mark.parametrize("text", ["alpha 200", "= 3", "alpha = 1\nalpha = 2"])
def test_parse_flat_config_errors(text: str) -> None:
    with pytest.raises(ConfigError):
        parse_flat_config(text)


def test_load_flat_config_feeds_steering_config(tmp_path: Path) -> None:
    path = tmp_path / "steer.cfg"
    path.write_text("iterations = 7\nlr = 0.05\nmin_improvement = 0.1\nsoft_normalized = no\n")
    cfg = SteeringConfig.from_flat(load_flat_config(path))
    assert cfg.iterations == 7
    assert cfg.lr == 0.05
    assert cfg.early_stop.min_improvement == 0.1
    assert cfg.soft_normalized is False


def test_settings_from_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("MODEL_REGISTRY_PATH", str(tmp_path))
    monkeypatch.setenv("EVAL_MAX_WORKERS", "3")
    monkeypatch.setenv("LOG_LEVEL", "DEBUG")
    monkeypatch.delenv("APP_ENV", raising=False)
    settings = AppSettings.from_env()
    assert settings.model_registry_path == tmp_path
    assert settings.eval_max_workers == 3
    assert settings.log_level == "DEBUG"
    assert settings.env == "dev"


def test_json_logging_includes_context(capsys: pytest.CaptureFixture) -> None:
    configure_logging("steering-test", "INFO")
    logger.info("steering finished", extra={"ctx_steps": 3})
    logger.debug("hidden")
    line = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(line)
    assert payload["message"] == "steering finished"
    assert payload["service"] == "steering-test"
    assert payload["steps"] == 3
    logging.getLogger().handlers.clear()


def test_metrics_collector() -> None:
    metrics = MetricsCollector(latency_window=3)
    metrics.increment("steer.requests")
    for value in (1.0, 2.0, 3.0, 4.0):
        metrics.observe_latency("steer.adam", value)
    snapshot = metrics.snapshot()
    assert snapshot["counters"] == {"steer.requests": 1}
    assert snapshot["latency"]["steer.adam"]["count"] == 3
    assert snapshot["latency"]["steer.adam"]["p50"] == 3.0
    assert percentile([], 50) == 0.0
