"""Attention aggregation and mask-based energies over the visual-token grid."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from app.models.toy_decoder import AttentionStack, ToyDecoder
from app.numcore import NumericError, Tensor, backward, ops
from app.steering.config import AggregationMode, AggregationSpec, EnergyMode, Optimizer, SteeringConfig
from app.steering.visprompt import (
    Box,
    Mask,
    RegionMask,
    SoftWeightMap,
    VisualPrompt,
    distance_transform,
    rasterize,
    region_points,
    soft_weight_map,
)

MapLike = Union[Tensor, np.ndarray]


class ZeroMassError(NumericError):
    """Raised when an aggregated attention map carries no mass."""


@dataclass(frozen=True)
class EnergyValue:
    value: float
    mass_ratio: float
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class EnergyTarget:
    """Constant per-cell weights an energy is measured against."""

    kind: EnergyMode
    weights: np.ndarray = field(compare=False)
    clamp: bool = False

    @property
    def grid(self) -> int:
        return int(self.weights.shape[0])


def build_target(prompt: VisualPrompt, g: int, cfg: SteeringConfig) -> EnergyTarget:
    """Pick the hard or soft target for a prompt under ``cfg.energy_mode``."""

    region_like = isinstance(prompt, (Box, Mask))
    mode = cfg.energy_mode
    if mode is EnergyMode.AUTO:
        mode = EnergyMode.HARD if region_like else EnergyMode.SOFT
    if mode is EnergyMode.HARD:
        return EnergyTarget(EnergyMode.HARD, rasterize(prompt, g).as_weights())
    points = region_points(rasterize(prompt, g)) if region_like else prompt
    wmap = soft_weight_map(distance_transform(points, g), cfg.sigma, cfg.soft_normalized)
    return EnergyTarget(EnergyMode.SOFT, np.array(wmap.weights), clamp=not wmap.normalized)


def _as_tensor(A: MapLike) -> Tensor:
    return A if isinstance(A, Tensor) else Tensor(np.asarray(A, dtype=np.float64))


def _query_rows(attn: AttentionStack, mode: AggregationMode) -> tuple:
    layout = attn.layout
    if mode is AggregationMode.ANSWER_START:
        return (layout.answer_start, layout.answer_start + 1)
    return layout.text_rows


def aggregate(attn: AttentionStack, spec: AggregationSpec) -> Tensor:
    """Mean over selected layers, all heads and the selected query rows of the visual-key slice."""

    spec.validate(attn.n_layers)
    layout = attn.layout
    if layout.n_text < 1:
        raise ValueError("aggregation needs at least one text token")
    rows = _query_rows(attn, spec.mode)
    pooled = [
        ops.mean_rows(ops.slice2d(attn.maps[layer][head], rows, layout.visual_keys))
        for layer in spec.layers
        for head in range(attn.n_heads)
    ]
    g = int(round(layout.n_v ** 0.5))
    return ops.reshape(ops.mean_of(pooled), (g, g))


def ratio_energy(A: MapLike, weights: np.ndarray, clamp: bool = False) -> EnergyValue:
    """(1 - sum(w * A) / sum(A))^2, differentiable in ``A``."""

    a = _as_tensor(A)
    mass = ops.total(a)
    if not mass.item() > 0:
        raise ZeroMassError("attention map has zero total mass")
    ratio = ops.weighted_sum(a, weights) / mass
    if clamp:
        ratio = ops.clamp(ratio, 0.0, 1.0)
    energy = ops.square(1.0 - ratio)
    return EnergyValue(value=energy.item(), mass_ratio=ratio.item(), tensor=energy)


def hard_energy(A: MapLike, region: RegionMask) -> EnergyValue:
    return ratio_energy(A, region.as_weights())


def soft_energy(A: MapLike, weights: SoftWeightMap) -> EnergyValue:
    """Gaussian-weighted mass ratio energy; the ratio is clamped to [0, 1] for raw pdf weights."""

    return ratio_energy(A, np.asarray(weights.weights), clamp=not weights.normalized)


def target_energy(A: MapLike, target: EnergyTarget) -> EnergyValue:
    return ratio_energy(A, target.weights, clamp=target.clamp)


@dataclass(frozen=True)
class LatentEvaluation:
    energy: EnergyValue
    grad: Optional[np.ndarray]
    attention: np.ndarray = field(repr=False, compare=False)


def evaluate_latent(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    p_v: np.ndarray,
    target: EnergyTarget,
    spec: AggregationSpec,
    scale: float = 1.0,
    with_grad: bool = True,
) -> LatentEvaluation:
    """One forward (and optionally one backward) of ``scale * E`` at latent ``p_v``."""

    latent = Tensor(np.array(p_v, dtype=np.float64), requires_grad=with_grad)
    result = model.forward(model.embed_image(image, latent), text)
    A = aggregate(result.attn, spec)
    energy = target_energy(A, target)
    grad = None
    if with_grad:
        objective = energy.tensor if scale == 1.0 else energy.tensor * scale
        backward(objective)
        grad = latent.grad if latent.grad is not None else np.zeros_like(latent.data)
    return LatentEvaluation(energy=EnergyValue(energy.value, energy.mass_ratio), grad=grad, attention=A.numpy())


def energy_gradient(
    p_v: MapLike,
    model: ToyDecoder,
    image,
    text: Sequence[int],
    prompt: VisualPrompt,
    spec: Optional[AggregationSpec] = None,
    cfg: Optional[SteeringConfig] = None,
) -> Tensor:
    """Gradient of the prompt's energy with respect to the latent modifier."""

    cfg = cfg or SteeringConfig()
    spec = spec or cfg.resolve_aggregation(Optimizer.GD, model.config.n_layers)
    values = p_v.data if isinstance(p_v, Tensor) else np.asarray(p_v)
    target = build_target(prompt, model.config.grid, cfg)
    evaluation = evaluate_latent(model, image, text, values, target, spec)
    return Tensor(evaluation.grad)


def region_mass(A: MapLike, region: RegionMask) -> float:
    """Share of an aggregated map's visual mass that falls inside the rasterized region."""

    values = A.data if isinstance(A, Tensor) else np.asarray(A, dtype=np.float64)
    total = float(values.sum())
    if not total > 0:
        raise ZeroMassError("attention map has zero total mass")
    return float(values[region.cells].sum()) / total


def layer_energy_profile(attn: AttentionStack, target: EnergyTarget, mode: AggregationMode) -> List[float]:
    """Energy of each layer's head-averaged map, to locate layers where attention is grounded."""

    frozen = attn.detached()
    return [
        target_energy(aggregate(frozen, AggregationSpec(mode, (layer, layer))).data, target).value
        for layer in range(frozen.n_layers)
    ]


def token_visual_mass(attn: AttentionStack, spec: AggregationSpec) -> np.ndarray:
    """Visual-key attention mass of each text query row, averaged over the selected layers and all heads."""

    values = attn.values()[list(spec.layers)]
    layout = attn.layout
    r0, r1 = layout.text_rows
    visual = values[:, :, r0:r1, : layout.n_v].sum(axis=-1)
    return visual.mean(axis=(0, 1))


__all__ = [
    "EnergyValue",
    "EnergyTarget",
    "LatentEvaluation",
    "ZeroMassError",
    "aggregate",
    "build_target",
    "energy_gradient",
    "evaluate_latent",
    "hard_energy",
    "layer_energy_profile",
    "ratio_energy",
    "region_mass",
    "soft_energy",
    "target_energy",
    "token_visual_mass",
]
