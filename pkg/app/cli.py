"""Command-line entry point: gen, train, steer, eval, sweep, selftest, serve."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from app.harness.ablation import SWEEPABLE, run_sweep, write_sweep_csv
from app.harness.dataset import dataset_digest, gen_dataset, load_dataset, save_dataset
from app.harness.evaluation import EvalConfig, FreezeViolation, eval_roc, parse_modes, write_report
from app.harness.heatmap import dump_heatmap
from app.harness.selftest import run_selftest
from app.harness.training import DEFAULT_EPOCHS, DEFAULT_FOCUS, train_toy
from app.harness.vocab import FEATURE_DIM, Vocabulary
from app.models.checkpoint import load_checkpoint, save_checkpoint
from app.models.toy_decoder import ModelConfig, ToyDecoder
from app.monitoring.logger import configure_logging, logger
from app.monitoring.metrics import MetricsCollector
from app.numcore import NumericError
from app.services.steering_service import run_steering
from app.steering.config import Optimizer, SteeringConfig
from app.steering.optimizers import write_trace_csv
from app.steering.visprompt import load_prompt
from app.utils.config import get_settings, load_flat_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class UsageError(ValueError):
    """Raised for malformed command lines."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _steering_config(path: Optional[Path], iterations: Optional[int]) -> SteeringConfig:
    cfg = SteeringConfig.from_flat(load_flat_config(path)) if path else SteeringConfig()
    return cfg if iterations is None else cfg.replace(iterations=iterations)


def _floats(raw: str) -> List[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def cmd_gen(args: argparse.Namespace) -> int:
    samples = gen_dataset(args.n, args.seed, g=args.grid)
    save_dataset(samples, args.out)
    logger.info("dataset written", extra={"ctx_path": str(args.out), "ctx_n": len(samples)})
    print(json.dumps({"out": str(args.out), "n": len(samples), "digest": dataset_digest(samples)}))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    samples = load_dataset(args.dataset)
    grid = samples[0].image.grid
    model = ToyDecoder.initialize(ModelConfig(grid=grid, feature_dim=FEATURE_DIM, seed=args.seed))
    result = train_toy(
        model,
        samples,
        epochs=args.epochs,
        lr_train=args.lr,
        seed=args.seed,
        log_every=args.log_every,
        focus=args.focus,
    )
    trained = ToyDecoder(model.config, result.params, version=args.out.stem)
    extra = {
        "epochs": args.epochs,
        "lr_train": args.lr,
        "focus": args.focus,
        "seed": args.seed,
        "dataset_digest": dataset_digest(samples),
        "steps": len(result.losses),
        "initial_loss": result.losses[0] if result.losses else None,
        "final_loss": result.final_loss if result.losses else None,
    }
    save_checkpoint(args.out, trained, extra)
    if args.losses:
        args.losses.parent.mkdir(parents=True, exist_ok=True)
        args.losses.write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(result.losses)))
    print(json.dumps({"out": str(args.out), "checksum": trained.checksum(), **extra}))
    return EXIT_OK


def cmd_steer(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    samples = load_dataset(args.dataset)
    if not 0 <= args.image_idx < len(samples):
        raise UsageError(f"--image-idx {args.image_idx} outside dataset of {len(samples)} samples")
    sample = samples[args.image_idx]
    prompt = load_prompt(args.prompt) if args.prompt else None
    cfg = _steering_config(args.config, args.iterations)
    checksum = model.checksum()
    outcome = run_steering(model, sample, Optimizer(args.optimizer), cfg, prompt, debias=args.debias)
    if model.checksum() != checksum:
        raise FreezeViolation("model parameters changed during steering")
    if args.trace:
        write_trace_csv(outcome.steering.trace, args.trace)
    if args.heatmap:
        dump_heatmap(outcome.attention_after, args.heatmap)
        before = args.heatmap.with_name(args.heatmap.stem + ".before" + args.heatmap.suffix)
        dump_heatmap(outcome.attention_before, before)
    print(json.dumps(outcome.to_dict(Vocabulary(model.config.vocab_size)), sort_keys=True))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    samples = load_dataset(args.dataset)
    cfg = _steering_config(args.config, args.iterations)
    eval_cfg = EvalConfig(gd=cfg, adam=cfg, eta=cfg.eta if args.eta is None else args.eta, max_workers=args.workers)
    metrics = MetricsCollector()
    report = eval_roc(model, samples, parse_modes(args.modes), eval_cfg, metrics=metrics)
    sidecar = write_report(report, args.report)
    print(json.dumps({"report": str(args.report), "timing": str(sidecar), "accuracy": report.accuracy}))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    samples = load_dataset(args.dataset)
    rows = run_sweep(
        model,
        samples,
        args.param,
        _floats(args.values),
        Optimizer(args.optimizer),
        _steering_config(args.config, None),
        early_stop=not args.no_early_stop,
        max_workers=args.workers,
    )
    write_sweep_csv(rows, args.out)
    print(json.dumps({"out": str(args.out), "points": len(rows)}))
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(
        quick=args.quick,
        log=lambda r: print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}"),
    )
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.api.server:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attention-steering", description=__doc__)
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate a synthetic referring dataset")
    gen.add_argument("--n", type=int, default=200)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--grid", type=int, default=8)
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen)

    train = sub.add_parser("train", help="train the toy decoder")
    train.add_argument("--dataset", type=Path, required=True)
    train.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    train.add_argument("--seed", type=int, default=7)
    train.add_argument("--lr", type=float, default=3e-3)
    train.add_argument(
        "--focus", type=float, default=DEFAULT_FOCUS, help="text-row attention bias toward the described object"
    )
    train.add_argument("--log-every", type=int, default=100)
    train.add_argument("--losses", type=Path, default=None, help="optional CSV of per-step losses")
    train.add_argument("--out", type=Path, required=True)
    train.set_defaults(handler=cmd_train)

    steer = sub.add_parser("steer", help="steer one sample and dump its trace")
    steer.add_argument("--model", type=Path, required=True)
    steer.add_argument("--dataset", type=Path, required=True)
    steer.add_argument("--image-idx", type=int, required=True)
    steer.add_argument("--prompt", type=Path, default=None)
    steer.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=Optimizer.ADAM.value)
    steer.add_argument("--config", type=Path, default=None)
    steer.add_argument("--iterations", type=int, default=None)
    steer.add_argument("--debias", action="store_true")
    steer.add_argument("--trace", type=Path, default=None)
    steer.add_argument("--heatmap", type=Path, default=None)
    steer.set_defaults(handler=cmd_steer)

    ev = sub.add_parser("eval", help="evaluate decoding and steering modes")
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--dataset", type=Path, required=True)
    ev.add_argument("--modes", default="plain,edit,gd,adam,adam+debias")
    ev.add_argument("--config", type=Path, default=None)
    ev.add_argument("--iterations", type=int, default=None)
    ev.add_argument("--eta", type=float, default=None)
    ev.add_argument("--workers", type=int, default=1)
    ev.add_argument("--report", type=Path, required=True)
    ev.set_defaults(handler=cmd_eval)

    sw = sub.add_parser("sweep", help="sweep one steering hyperparameter")
    sw.add_argument("--model", type=Path, required=True)
    sw.add_argument("--dataset", type=Path, required=True)
    sw.add_argument("--param", choices=SWEEPABLE, required=True)
    sw.add_argument("--values", required=True, help="comma-separated, e.g. 100,400,1600")
    sw.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=Optimizer.GD.value)
    sw.add_argument("--config", type=Path, default=None)
    sw.add_argument("--no-early-stop", action="store_true")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", type=Path, required=True)
    sw.set_defaults(handler=cmd_sweep)

    st = sub.add_parser("selftest", help="gradient checks and oracle equivalences")
    st.add_argument("--quick", action="store_true")
    st.set_defaults(handler=cmd_selftest)

    serve = sub.add_parser("serve", help="run the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


ERROR_CODES: Dict[type, int] = {
    NumericError: EXIT_NUMERIC,
    FreezeViolation: EXIT_NUMERIC,
    OSError: EXIT_IO,
    ValueError: EXIT_USAGE,
    KeyError: EXIT_USAGE,
}


def exit_code_for(exc: BaseException) -> Optional[int]:
    for kind, code in ERROR_CODES.items():
        if isinstance(exc, kind):
            return code
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    configure_logging(get_settings().service_name, args.log_level or get_settings().log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            raise
        logger.error("command failed", extra={"ctx_command": args.command, "ctx_error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return code


__all__ = ["build_parser", "exit_code_for", "main"]
