"""Hyperparameter sweeps over the steering knobs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

from app.harness.dataset import RocSample
from app.harness.evaluation import EvalConfig, EvalMode, eval_roc
from app.models.toy_decoder import ToyDecoder
from app.monitoring.logger import logger
from app.steering.config import EarlyStopConfig, Optimizer, SteeringConfig

SWEEPABLE = ("alpha", "beta", "iterations", "gamma")
SWEEP_COLUMNS = ["param", "value", "accuracy", "mean_final_energy", "mean_iterations"]


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    accuracy: float
    mean_final_energy: Optional[float]
    mean_iterations: Optional[float]


def sweep_mode(param: str, optimizer: Optimizer) -> EvalMode:
    if param == "gamma":
        return EvalMode.ADAM_DEBIAS
    return EvalMode.GD if Optimizer(optimizer) is Optimizer.GD else EvalMode.ADAM


def run_sweep(
    model: ToyDecoder,
    dataset: Sequence[RocSample],
    param: str,
    values: Sequence[float],
    optimizer: Optimizer = Optimizer.GD,
    base: Optional[SteeringConfig] = None,
    early_stop: bool = True,
    max_workers: int = 1,
) -> List[SweepRow]:
    """One evaluation per value of ``param``, everything else held at ``base``."""

    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEPABLE)}")
    base = base or SteeringConfig()
    if not early_stop:
        base = base.replace(early_stop=EarlyStopConfig(enabled=False))
    mode = sweep_mode(param, optimizer)
    rows: List[SweepRow] = []
    for value in values:
        setting = int(value) if param == "iterations" else float(value)
        cfg = base.replace(**{param: setting})
        report = eval_roc(
            model,
            dataset,
            [mode],
            EvalConfig(gd=cfg, adam=cfg, eta=cfg.eta, max_workers=max_workers),
        )
        stats = report.modes[mode.value]
        rows.append(
            SweepRow(
                param=param,
                value=setting,
                accuracy=stats.accuracy,
                mean_final_energy=stats.mean_final_energy,
                mean_iterations=stats.mean_iterations,
            )
        )
        logger.info(
            "sweep point finished",
            extra={"ctx_param": param, "ctx_value": setting, "ctx_accuracy": stats.accuracy},
        )
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.param,
                    row.value,
                    repr(row.accuracy),
                    "" if row.mean_final_energy is None else repr(row.mean_final_energy),
                    "" if row.mean_iterations is None else repr(row.mean_iterations),
                ]
            )


__all__ = ["SWEEPABLE", "SWEEP_COLUMNS", "SweepRow", "run_sweep", "sweep_mode", "write_sweep_csv"]
