"""Greedy decoding in plain, edit-attention, steered and prompt-debiased modes."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from app.models.toy_decoder import AttentionStack, ToyDecoder, next_token_logits
from app.numcore import Tensor
from app.steering.config import Optimizer, SteeringConfig
from app.steering.optimizers import LatentModifier, SteeringTrace, steer
from app.steering.visprompt import RegionMask, VisualPrompt, rasterize


class DecodeMode(str, Enum):
    PLAIN = "plain"
    EDIT_ATTENTION = "edit"
    STEERED = "steered"
    STEERED_DEBIAS = "steered_debias"


class EditSteps(str, Enum):
    FIRST_ONLY = "first_only"
    ALL = "all"


@dataclass(frozen=True)
class DecodeConfig:
    max_new_tokens: int = 4
    mode: DecodeMode = DecodeMode.PLAIN
    eta: float = 10.0
    edit_steps: EditSteps = EditSteps.FIRST_ONLY
    optimizer: Optimizer = Optimizer.ADAM
    steering: SteeringConfig = field(default_factory=SteeringConfig)
    gamma: Optional[float] = None
    stop_token: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if not np.isfinite(self.eta):
            raise ValueError("eta must be finite")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    @property
    def resolved_gamma(self) -> float:
        return self.steering.gamma if self.gamma is None else self.gamma

    def to_dict(self) -> Dict[str, Any]:
        return {
            "max_new_tokens": self.max_new_tokens,
            "mode": self.mode.value,
            "eta": self.eta,
            "edit_steps": self.edit_steps.value,
            "optimizer": self.optimizer.value,
            "steering": self.steering.to_dict(),
            "gamma": self.resolved_gamma,
            "stop_token": self.stop_token,
        }


@dataclass
class DecodeResult:
    mode: DecodeMode
    tokens: List[int]
    step_logits: List[np.ndarray] = field(repr=False)
    steered_logits: List[np.ndarray] = field(default_factory=list, repr=False)
    unsteered_logits: List[np.ndarray] = field(default_factory=list, repr=False)
    attn: Optional[AttentionStack] = field(default=None, repr=False)
    trace: Optional[SteeringTrace] = None


def _latent_tensor(p_v: Optional[LatentModifier]) -> Optional[Tensor]:
    return None if p_v is None else Tensor(p_v.values)


def _step(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    generated: Sequence[int],
    latent: Optional[Tensor],
    attn_bias: Optional[np.ndarray] = None,
):
    result = model.forward(
        model.embed_image(image, latent),
        list(text) + list(generated),
        attn_bias=attn_bias,
        n_text=len(text),
    )
    return next_token_logits(result).numpy(), result.attn


def _stopped(token: int, stop_token: Optional[int]) -> bool:
    return stop_token is not None and token == stop_token


def greedy_decode(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    cfg: Optional[DecodeConfig] = None,
    p_v: Optional[LatentModifier] = None,
) -> DecodeResult:
    """Append the argmax token (lowest id on ties) until the stop token or the budget."""

    cfg = cfg or DecodeConfig()
    latent = _latent_tensor(p_v)
    tokens: List[int] = []
    step_logits: List[np.ndarray] = []
    attn = None
    for _ in range(cfg.max_new_tokens):
        logits, attn = _step(model, image, text, tokens, latent)
        token = int(np.argmax(logits))
        step_logits.append(logits)
        tokens.append(token)
        if _stopped(token, cfg.stop_token):
            break
    mode = DecodeMode.PLAIN if p_v is None else DecodeMode.STEERED
    return DecodeResult(mode=mode, tokens=tokens, step_logits=step_logits, attn=attn)


def edit_bias(region: RegionMask, seq_len: int, eta: float) -> np.ndarray:
    """Pre-softmax bias adding ``eta`` on the region's visual key columns for every query row."""

    bias = np.zeros((seq_len, seq_len))
    bias[:, region.flat_indices()] = eta
    return bias


def edit_attention_decode(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    region: RegionMask,
    eta: float,
    steps: EditSteps = EditSteps.FIRST_ONLY,
    max_new_tokens: int = 4,
    stop_token: Optional[int] = None,
) -> DecodeResult:
    if region.count < 1:
        raise ValueError("edit attention needs a non-empty region")
    tokens: List[int] = []
    step_logits: List[np.ndarray] = []
    attn = None
    for step in range(max_new_tokens):
        biased = step == 0 or EditSteps(steps) is EditSteps.ALL
        seq_len = model.config.n_v + len(text) + len(tokens)
        bias = edit_bias(region, seq_len, eta) if biased else None
        logits, attn = _step(model, image, text, tokens, None, attn_bias=bias)
        token = int(np.argmax(logits))
        step_logits.append(logits)
        tokens.append(token)
        if _stopped(token, stop_token):
            break
    return DecodeResult(mode=DecodeMode.EDIT_ATTENTION, tokens=tokens, step_logits=step_logits, attn=attn)


def debias_logits(steered: np.ndarray, unsteered: np.ndarray, gamma: float) -> np.ndarray:
    """(1 + gamma) * steered - gamma * unsteered."""

    return (1.0 + gamma) * steered - gamma * unsteered


def prompt_debias_decode(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    p_v: LatentModifier,
    gamma: float,
    max_new_tokens: int = 4,
    stop_token: Optional[int] = None,
) -> DecodeResult:
    """Contrast the steered branch against the same forward without the latent at every step."""

    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    latent = _latent_tensor(p_v)
    tokens: List[int] = []
    combined: List[np.ndarray] = []
    steered: List[np.ndarray] = []
    plain: List[np.ndarray] = []
    attn = None
    for _ in range(max_new_tokens):
        steered_logits, attn = _step(model, image, text, tokens, latent)
        unsteered_logits, _ = _step(model, image, text, tokens, None)
        mixed = debias_logits(steered_logits, unsteered_logits, gamma)
        token = int(np.argmax(mixed))
        combined.append(mixed)
        steered.append(steered_logits)
        plain.append(unsteered_logits)
        tokens.append(token)
        if _stopped(token, stop_token):
            break
    return DecodeResult(
        mode=DecodeMode.STEERED_DEBIAS,
        tokens=tokens,
        step_logits=combined,
        steered_logits=steered,
        unsteered_logits=plain,
        attn=attn,
    )


def decode(
    model: ToyDecoder,
    image,
    text: Sequence[int],
    prompt: Optional[VisualPrompt],
    cfg: DecodeConfig,
) -> DecodeResult:
    """Run one decode in the configured mode; steering happens once, before the first token."""

    if cfg.mode is DecodeMode.PLAIN:
        return greedy_decode(model, image, text, cfg)
    if prompt is None:
        raise ValueError(f"{cfg.mode.value} decoding needs a visual prompt")
    if cfg.mode is DecodeMode.EDIT_ATTENTION:
        region = rasterize(prompt, model.config.grid)
        return edit_attention_decode(
            model, image, text, region, cfg.eta, cfg.edit_steps, cfg.max_new_tokens, cfg.stop_token
        )
    steering = steer(model, image, text, prompt, cfg.optimizer, cfg.steering)
    if cfg.mode is DecodeMode.STEERED:
        result = greedy_decode(model, image, text, cfg, p_v=steering.latent)
    else:
        result = prompt_debias_decode(
            model, image, text, steering.latent, cfg.resolved_gamma, cfg.max_new_tokens, cfg.stop_token
        )
    result.trace = steering.trace
    return result


def result_to_dict(
    result: DecodeResult,
    cfg: DecodeConfig,
    detokenize: Optional[Callable[[Sequence[int]], str]] = None,
    top_k: int = 5,
) -> Dict[str, Any]:
    """JSON-ready export: tokens, text, per-step top-k logits and the config echo."""

    steps = []
    for logits in result.step_logits:
        order = np.argsort(-logits, kind="stable")[:top_k]
        steps.append([{"token": int(i), "logit": float(logits[i])} for i in order])
    payload: Dict[str, Any] = {
        "mode": result.mode.value,
        "tokens": list(result.tokens),
        "text": detokenize(result.tokens) if detokenize else None,
        "top_logits": steps,
        "config": cfg.to_dict(),
    }
    if result.trace is not None:
        payload["trace"] = result.trace.to_dict()
    return payload


__all__ = [
    "DecodeConfig",
    "DecodeMode",
    "DecodeResult",
    "EditSteps",
    "debias_logits",
    "decode",
    "edit_attention_decode",
    "edit_bias",
    "greedy_decode",
    "prompt_debias_decode",
    "result_to_dict",
]
