"""Next-token training of the toy decoder on synthetic captions and questions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.harness.dataset import RocSample
from app.harness.vocab import Vocabulary
from app.models.toy_decoder import ModelParams, ToyDecoder
from app.monitoring.logger import logger
from app.numcore import NumericError, Tensor, backward, ops
from app.steering.optimizers import AdamState, adam_update


DEFAULT_EPOCHS = 15
DEFAULT_FOCUS = 4.0


class DivergenceError(NumericError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainResult:
    params: ModelParams
    losses: List[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        """Mean of the last 100 step losses."""

        tail = self.losses[-min(len(self.losses), 100):]
        return float(np.mean(tail))


def target_cells(sample: RocSample) -> np.ndarray:
    """Flat visual-token indices of the described object."""

    g = sample.image.grid
    return np.array(sorted(r * g + c for r, c in sample.image.objects[sample.target].cells), dtype=int)


def focus_bias(n_v: int, seq_len: int, cells: np.ndarray, focus: float) -> Optional[np.ndarray]:
    """Pre-softmax bias of ``focus`` from every text query row onto ``cells``; visual rows are left unbiased."""

    if focus == 0.0:
        return None
    bias = np.zeros((seq_len, seq_len))
    bias[n_v:, cells] = focus
    return bias


def caption_loss(
    model: ToyDecoder,
    sample: RocSample,
    weights: Dict[str, Tensor],
    vocab: Vocabulary,
    focus: float = 0.0,
) -> Tensor:
    """Cross-entropy on the color, shape and end tokens of the target's caption."""

    caption = sample.caption(vocab)
    inputs = caption[:-1]
    n_v = model.config.n_v
    # Inputs end with "... is <color> <shape>"; the last three positions predict color, shape, eos.
    positions = [n_v + len(inputs) - 3, n_v + len(inputs) - 2, n_v + len(inputs) - 1]
    targets = caption[-3:]
    bias = focus_bias(n_v, n_v + len(inputs), target_cells(sample), focus)
    result = model.forward(
        model.embed_image(sample.image, weights=weights), inputs, attn_bias=bias, weights=weights
    )
    return ops.cross_entropy(result.logits, positions, targets)


def question_loss(
    model: ToyDecoder, sample: RocSample, weights: Dict[str, Tensor], focus: float = 0.0
) -> Tensor:
    """Cross-entropy of the correct candidate at the answer-start position."""

    n_v = model.config.n_v
    bias = focus_bias(n_v, n_v + len(sample.question), target_cells(sample), focus)
    result = model.forward(
        model.embed_image(sample.image, weights=weights), sample.question, attn_bias=bias, weights=weights
    )
    return ops.cross_entropy(result.logits, [result.attn.layout.answer_start], [sample.truth])


def train_toy(
    model: ToyDecoder,
    dataset: Sequence[RocSample],
    epochs: int = DEFAULT_EPOCHS,
    lr_train: float = 3e-3,
    seed: int = 7,
    vocab: Optional[Vocabulary] = None,
    log_every: int = 100,
    focus: float = DEFAULT_FOCUS,
) -> TrainResult:
    """Adam over every parameter block, one sample per step, shuffled per epoch by ``seed``.

    Text rows are biased by ``focus`` toward the described object, so the answer
    is read from whatever the question attends to rather than located from the
    region word. Locating the object is left to the visual prompt at test time.
    """

    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if lr_train <= 0:
        raise ValueError("lr_train must be positive")
    if not np.isfinite(focus) or focus < 0:
        raise ValueError("focus must be finite and >= 0")
    vocab = vocab or Vocabulary(model.config.vocab_size)
    params = model.params
    arrays = {name: np.array(arr) for name, arr in params.arrays.items()}
    states = {name: AdamState.zeros_like(arr) for name, arr in arrays.items()}
    losses: List[float] = []
    rng = np.random.default_rng(seed)
    step = 0

    for epoch in range(epochs):
        for index in rng.permutation(len(dataset)):
            sample = dataset[int(index)]
            weights = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
            loss = ops.mean_of(
                [
                    caption_loss(model, sample, weights, vocab, focus),
                    question_loss(model, sample, weights, focus),
                ]
            )
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"training loss became {value} at epoch {epoch}, step {step} (sample {sample.index})"
                )
            backward(loss)
            for name, w in weights.items():
                if w.grad is None:
                    continue
                arrays[name], states[name] = adam_update(arrays[name], w.grad, states[name], lr_train)
            losses.append(value)
            step += 1
            if log_every and step % log_every == 0:
                logger.info(
                    "training progress",
                    extra={
                        "ctx_epoch": epoch,
                        "ctx_step": step,
                        "ctx_loss": float(np.mean(losses[-log_every:])),
                    },
                )

    trained = params if step == 0 else ModelParams(arrays)
    logger.info(
        "training finished",
        extra={"ctx_steps": step, "ctx_checksum": trained.checksum()},
    )
    return TrainResult(params=trained, losses=losses)


__all__ = [
    "DEFAULT_EPOCHS",
    "DEFAULT_FOCUS",
    "DivergenceError",
    "TrainResult",
    "caption_loss",
    "focus_bias",
    "question_loss",
    "target_cells",
    "train_toy",
]
