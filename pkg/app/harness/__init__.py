"""Synthetic referring task: data, training, evaluation, sweeps and selftest."""
from app.harness.dataset import RocSample, SceneObject, SyntheticImage, gen_dataset, load_dataset, save_dataset
from app.harness.evaluation import EvalConfig, EvalMode, EvalReport, FreezeViolation, eval_roc, write_report
from app.harness.heatmap import dump_heatmap
from app.harness.training import DivergenceError, TrainResult, train_toy
from app.harness.vocab import Vocabulary

__all__ = [
    "DivergenceError",
    "EvalConfig",
    "EvalMode",
    "EvalReport",
    "FreezeViolation",
    "RocSample",
    "SceneObject",
    "SyntheticImage",
    "TrainResult",
    "Vocabulary",
    "dump_heatmap",
    "eval_roc",
    "gen_dataset",
    "load_dataset",
    "save_dataset",
    "train_toy",
    "write_report",
]
