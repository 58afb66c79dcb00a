"""Gradient checks and oracle-equivalence checks for the steering stack.

Each check returns a ``CheckResult``; ``run_selftest`` runs them all on small
seeded models and is what the ``selftest`` CLI command reports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.harness.dataset import gen_dataset
from app.harness.vocab import FEATURE_DIM
from app.models.toy_decoder import ModelConfig, ToyDecoder
from app.monitoring.logger import logger
from app.numcore import Tensor, relative_error
from app.services.decoding import (
    DecodeConfig,
    EditSteps,
    edit_attention_decode,
    greedy_decode,
    prompt_debias_decode,
)
from app.steering.config import AggregationMode, AggregationSpec, EarlyStopConfig, Optimizer, SteeringConfig
from app.steering.energy import aggregate, build_target, evaluate_latent, hard_energy, soft_energy
from app.steering.optimizers import AdamState, LatentModifier, adam_update, steer_adam, steer_gd
from app.steering.visprompt import (
    Box,
    Point,
    RegionMask,
    Scribble,
    VisualPrompt,
    distance_transform,
    rasterize,
    soft_weight_map,
)

GRAD_TOLERANCE = 1e-4
# Gradient entries smaller than this are compared on an absolute scale.
GRAD_FLOOR = 1e-5
ORACLE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def gradcheck_model(seed: int) -> ToyDecoder:
    """2 layers, 1 head, 4x4 grid; larger init so gradients sit well above round-off."""

    cfg = ModelConfig(
        d_model=8,
        n_layers=2,
        n_heads=1,
        grid=4,
        vocab_size=40,
        max_seq=32,
        feature_dim=FEATURE_DIM,
        seed=seed,
        init_std=0.5,
    )
    return ToyDecoder.initialize(cfg, version=f"gradcheck-{seed}")


def _energy_at(model, image, text, target, spec) -> Callable[[np.ndarray], float]:
    def f(values: np.ndarray) -> float:
        return evaluate_latent(model, image, text, values, target, spec, with_grad=False).energy.value

    return f


def energy_gradient_error(
    seed: int,
    prompt_kind: str,
    mode: AggregationMode,
    n_coords: int = 20,
    h: float = 1e-5,
) -> float:
    """Max relative error between tape and central-difference gradients of E w.r.t. p_v,
    over ``n_coords`` latent coordinates drawn uniformly without replacement."""

    model = gradcheck_model(seed)
    sample = gen_dataset(1, seed, g=model.config.grid)[0]
    obj = sample.image.objects[sample.target]
    g = model.config.grid
    prompt: VisualPrompt
    if prompt_kind == "hard":
        prompt = Box(obj.col0 / g, obj.row0 / g, (obj.col1 + 1) / g, (obj.row1 + 1) / g)
    else:
        cx, cy = obj.center
        prompt = Point(cx / g, cy / g)
    cfg = SteeringConfig()
    target = build_target(prompt, g, cfg)
    spec = AggregationSpec(mode, (0, model.config.n_layers - 1))
    text = list(sample.question)
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, 0.3, size=(model.config.n_v, model.config.d_model))

    grad = evaluate_latent(model, sample.image, text, values, target, spec).grad
    picks = rng.choice(values.size, size=min(n_coords, values.size), replace=False)
    f = _energy_at(model, sample.image, text, target, spec)
    worst = 0.0
    for pick in picks:
        idx = tuple(int(i) for i in np.unravel_index(int(pick), values.shape))
        plus, minus = values.copy(), values.copy()
        plus[idx] += h
        minus[idx] -= h
        estimate = (f(plus) - f(minus)) / (2.0 * h)
        worst = max(worst, relative_error(np.array([grad[idx]]), np.array([estimate]), floor=GRAD_FLOOR))
    return worst


def check_gradients(seeds: Sequence[int] = range(10), n_coords: int = 20) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        for kind in ("hard", "soft"):
            for mode in AggregationMode:
                worst = max(worst, energy_gradient_error(seed, kind, mode, n_coords))
    return CheckResult("energy gradients", worst < GRAD_TOLERANCE, f"max relative error {worst:.3e}")


def scalar_ratio_energy(A: np.ndarray, weights: np.ndarray, clamp: bool = False) -> float:
    inside = 0.0
    total = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            inside += weights[i, j] * A[i, j]
            total += A[i, j]
    ratio = inside / total
    if clamp:
        ratio = min(max(ratio, 0.0), 1.0)
    return (1.0 - ratio) ** 2


def check_energy_oracles(count: int = 1000, g: int = 4, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        A = rng.random((g, g))
        cells = rng.random((g, g)) < 0.4
        cells[rng.integers(g), rng.integers(g)] = True
        region = RegionMask(cells)
        worst = max(worst, abs(hard_energy(A, region).value - scalar_ratio_energy(A, region.as_weights())))
        points = [tuple(p) for p in rng.random((int(rng.integers(1, 4)), 2))]
        normalized = bool(rng.integers(2))
        wmap = soft_weight_map(distance_transform(points, g), 0.1, normalized)
        expected = scalar_ratio_energy(A, np.asarray(wmap.weights), clamp=not normalized)
        worst = max(worst, abs(soft_energy(A, wmap).value - expected))
    return CheckResult("energy oracles", worst < ORACLE_TOLERANCE, f"max abs error {worst:.3e}")


def brute_force_distances(points: Sequence[Tuple[float, float]], g: int) -> np.ndarray:
    out = np.zeros((g, g))
    for r in range(g):
        for c in range(g):
            cx, cy = (c + 0.5) / g, (r + 0.5) / g
            out[r, c] = min(math.sqrt((cx - px) ** 2 + (cy - py) ** 2) for px, py in points)
    return out


def check_distance_transform(count: int = 100, g: int = 8, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(count):
        scribble = Scribble(tuple(tuple(p) for p in rng.random((int(rng.integers(1, 12)), 2))))
        if not np.array_equal(distance_transform(scribble, g), brute_force_distances(scribble.points, g)):
            mismatches += 1
    return CheckResult("distance transform", mismatches == 0, f"{mismatches} of {count} scribbles differ")


def naive_aggregate(maps: np.ndarray, spec: AggregationSpec, n_v: int, rows: Tuple[int, int]) -> np.ndarray:
    """Triple loop over layers, heads and query rows; ``maps`` is (layers, heads, seq, seq)."""

    acc = np.zeros(n_v)
    terms = 0
    for layer in spec.layers:
        for head in range(maps.shape[1]):
            row_mean = np.zeros(n_v)
            for q in range(rows[0], rows[1]):
                row_mean += maps[layer, head, q, :n_v]
            acc += row_mean / (rows[1] - rows[0])
            terms += 1
    g = int(round(n_v**0.5))
    return (acc / terms).reshape(g, g)


def check_aggregation(seed: int = 0) -> CheckResult:
    model = ToyDecoder.initialize(ModelConfig(d_model=16, n_layers=4, n_heads=2, grid=4, max_seq=40, seed=seed))
    sample = gen_dataset(1, seed, g=4)[0]
    result = model.forward(model.embed_image(sample.image), sample.question)
    maps = result.attn.values()
    layout = result.attn.layout
    worst = 0.0
    for mode, rows in (
        (AggregationMode.CONTEXT_TOKEN, layout.text_rows),
        (AggregationMode.ANSWER_START, (layout.answer_start, layout.answer_start + 1)),
    ):
        spec = AggregationSpec(mode, (1, 2))
        fast = aggregate(result.attn, spec).numpy()
        worst = max(worst, float(np.abs(fast - naive_aggregate(maps, spec, layout.n_v, rows)).max()))
    return CheckResult("aggregation", worst < ORACLE_TOLERANCE, f"max abs error {worst:.3e}")


def scalar_adam(
    theta: float, grads: Sequence[float], lr: float, b1: float, b2: float, eps: float
) -> List[float]:
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def check_adam(steps: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    grads = rng.normal(size=(steps, 3))
    values = rng.normal(size=3)
    state = AdamState.zeros_like(values)
    vector: List[np.ndarray] = []
    current = values.copy()
    for g in grads:
        current, state = adam_update(current, g, state, 0.03, 0.9, 0.999, 1e-8)
        vector.append(current)
    worst = 0.0
    for k in range(3):
        reference = scalar_adam(float(values[k]), grads[:, k], 0.03, 0.9, 0.999, 1e-8)
        worst = max(worst, max(abs(a[k] - b) for a, b in zip(vector, reference)))
    return CheckResult("adam recursion", worst < ORACLE_TOLERANCE, f"max abs error {worst:.3e}")


def check_plain_gd(seed: int = 0, iterations: int = 3) -> CheckResult:
    """beta=0 without early stop is plain p <- p - alpha * grad."""

    model = gradcheck_model(seed)
    sample = gen_dataset(1, seed, g=model.config.grid)[0]
    text = list(sample.question)
    cfg = SteeringConfig(iterations=iterations, beta=0.0, alpha=5.0, early_stop=EarlyStopConfig(enabled=False))
    latent, _trace = steer_gd(model, sample.image, text, sample.prompt, cfg)
    target = build_target(sample.prompt, model.config.grid, cfg)
    spec = cfg.resolve_aggregation(Optimizer.GD, model.config.n_layers)
    values = np.zeros((model.config.n_v, model.config.d_model))
    for _ in range(iterations):
        grad = evaluate_latent(model, sample.image, text, values, target, spec).grad
        values = values - cfg.alpha * grad
    same = np.array_equal(latent.values, values)
    return CheckResult("plain gd", same, "bit-exact" if same else "latents differ")


def check_identities(seed: int = 0) -> CheckResult:
    model = ToyDecoder.initialize(ModelConfig(seed=seed, init_std=0.2))
    sample = gen_dataset(1, seed, g=model.config.grid)[0]
    text = list(sample.question)
    failures: List[str] = []
    checksum = model.checksum()
    cfg = DecodeConfig(max_new_tokens=3)

    plain = greedy_decode(model, sample.image, text, cfg)
    edit = edit_attention_decode(
        model, sample.image, text, rasterize(sample.prompt, model.config.grid), 0.0, EditSteps.ALL, 3
    )
    if plain.tokens != edit.tokens:
        failures.append("eta=0 edit differs from plain")

    zero = LatentModifier.zeros(model.config.n_v, model.config.d_model)
    with_zero = model.forward(model.embed_image(sample.image, Tensor(zero.values)), text).logits.data
    without = model.forward(model.embed_image(sample.image), text).logits.data
    if not np.array_equal(with_zero, without):
        failures.append("zero latent changes logits")

    latent, _ = steer_adam(model, sample.image, text, sample.prompt, SteeringConfig(iterations=2))
    steered = greedy_decode(model, sample.image, text, cfg, p_v=latent)
    debiased = prompt_debias_decode(model, sample.image, text, latent, 0.0, max_new_tokens=3)
    if steered.tokens != debiased.tokens:
        failures.append("gamma=0 debias differs from steered")

    idle, trace = steer_gd(model, sample.image, text, sample.prompt, SteeringConfig(iterations=0))
    if np.any(idle.values != 0.0) or len(trace.records) != 1:
        failures.append("T=0 steering moved the latent")

    if model.checksum() != checksum:
        failures.append("parameters changed")
    return CheckResult("identities", not failures, "; ".join(failures) or "all hold")


def run_selftest(quick: bool = False, log: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    """Run every check; ``quick`` trims the gradient sweep to two seeds."""

    checks: List[Callable[[], CheckResult]] = [
        lambda: check_gradients(range(2) if quick else range(10)),
        check_energy_oracles,
        check_distance_transform,
        check_aggregation,
        check_adam,
        check_plain_gd,
        check_identities,
    ]
    results = []
    for check in checks:
        result = check()
        logger.info(
            "selftest check",
            extra={"ctx_check": result.name, "ctx_passed": result.passed, "ctx_detail": result.detail},
        )
        if log is not None:
            log(result)
        results.append(result)
    return results


__all__ = [
    "CheckResult",
    "brute_force_distances",
    "check_adam",
    "check_aggregation",
    "check_distance_transform",
    "check_energy_oracles",
    "check_gradients",
    "check_identities",
    "check_plain_gd",
    "energy_gradient_error",
    "gradcheck_model",
    "naive_aggregate",
    "run_selftest",
    "scalar_adam",
]
