"""Desk-scale multimodal decoder with a visual-token prefix and recorded attention."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from app.models.base import MultimodalDecoder
from app.numcore import ShapeError, Tensor, ops


class SequenceOverflowError(ValueError):
    """Raised when the visual prefix plus text exceeds ``max_seq``."""


class HasFeatures(Protocol):
    grid: int
    features: np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 48
    n_layers: int = 4
    n_heads: int = 4
    grid: int = 8
    vocab_size: int = 40
    max_seq: int = 80
    feature_dim: int = 13
    seed: int = 7
    init_std: float = 0.02

    def __post_init__(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "grid", "vocab_size", "max_seq", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_seq <= self.n_v:
            raise ValueError(f"max_seq={self.max_seq} leaves no room for text after {self.n_v} visual tokens")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_v(self) -> int:
        return self.grid * self.grid

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(payload: Mapping[str, Any]) -> "ModelConfig":
        known = ModelConfig.__dataclass_fields__
        unknown = set(payload) - set(known)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return ModelConfig(**dict(payload))


def parameter_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Named parameter blocks in canonical order."""

    d, hidden = cfg.d_model, 4 * cfg.d_model
    shapes: Dict[str, Tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "patch.w": (cfg.feature_dim, d),
        "patch.b": (d,),
        "pos_emb": (cfg.max_seq, d),
    }
    for layer in range(cfg.n_layers):
        prefix = f"layers.{layer}"
        shapes.update(
            {
                f"{prefix}.ln1.g": (d,),
                f"{prefix}.ln1.b": (d,),
                f"{prefix}.attn.wq": (d, d),
                f"{prefix}.attn.wk": (d, d),
                f"{prefix}.attn.wv": (d, d),
                f"{prefix}.attn.wo": (d, d),
                f"{prefix}.ln2.g": (d,),
                f"{prefix}.ln2.b": (d,),
                f"{prefix}.mlp.w1": (d, hidden),
                f"{prefix}.mlp.b1": (hidden,),
                f"{prefix}.mlp.w2": (hidden, d),
                f"{prefix}.mlp.b2": (d,),
            }
        )
    shapes.update(
        {
            "ln_f.g": (d,),
            "ln_f.b": (d,),
            "head.w": (d, cfg.vocab_size),
            "head.b": (cfg.vocab_size,),
        }
    )
    return shapes


@dataclass(frozen=True)
class ModelParams:
    """Read-only parameter blocks. Updates produce a new instance."""

    arrays: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        frozen: Dict[str, np.ndarray] = {}
        for name, value in self.arrays.items():
            arr = np.array(value, dtype=np.float64, copy=True)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "arrays", frozen)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def weight_names(self) -> List[str]:
        """Names of randomly initialized blocks (everything but norms and biases)."""

        return [n for n, a in self.arrays.items() if a.ndim == 2]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.arrays:
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.arrays[name], dtype="<f8").tobytes())
        return digest.hexdigest()

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        merged = dict(self.arrays)
        merged.update(updates)
        return ModelParams(merged)


def init_model(cfg: ModelConfig) -> ModelParams:
    """Seeded Gaussian(0, init_std) weights; norm gains 1, biases 0."""

    rng = np.random.default_rng(cfg.seed)
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if len(shape) == 2:
            arrays[name] = rng.normal(0.0, cfg.init_std, size=shape)
        elif name.endswith(".g"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(arrays)


@dataclass(frozen=True)
class AttentionLayout:
    n_v: int
    n_text: int
    seq_len: int

    @property
    def answer_start(self) -> int:
        """Query row whose logits produce the first answer token."""

        return self.n_v + self.n_text - 1

    @property
    def text_rows(self) -> Tuple[int, int]:
        return (self.n_v, self.n_v + self.n_text)

    @property
    def visual_keys(self) -> Tuple[int, int]:
        return (0, self.n_v)


@dataclass
class AttentionStack:
    """Post-softmax attention, ``maps[layer][head]`` of shape (seq, seq)."""

    maps: List[List[Tensor]]
    layout: AttentionLayout

    @property
    def n_layers(self) -> int:
        return len(self.maps)

    @property
    def n_heads(self) -> int:
        return len(self.maps[0]) if self.maps else 0

    def values(self) -> np.ndarray:
        return np.stack([np.stack([m.data for m in layer]) for layer in self.maps])

    def detached(self) -> "AttentionStack":
        return AttentionStack([[Tensor(m.data) for m in layer] for layer in self.maps], self.layout)


@dataclass
class ForwardResult:
    logits: Tensor
    attn: AttentionStack
    hidden: Optional[Tensor] = field(default=None, repr=False)

    @property
    def graph(self) -> Any:
        return self.logits.graph


def causal_bias(seq_len: int) -> np.ndarray:
    bias = np.zeros((seq_len, seq_len))
    bias[np.triu_indices(seq_len, k=1)] = -np.inf
    return bias


class ToyDecoder(MultimodalDecoder):
    """Pre-norm decoder; visual tokens are a prefix of the causal sequence."""

    def __init__(self, config: ModelConfig, params: ModelParams, version: str = "untrained") -> None:
        expected = parameter_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter blocks do not match config (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params
        self.version = version
        self._constants = {name: Tensor(arr) for name, arr in params.arrays.items()}

    @classmethod
    def initialize(cls, config: ModelConfig, version: str = "untrained") -> "ToyDecoder":
        return cls(config, init_model(config), version=version)

    def trainable_weights(self) -> Dict[str, Tensor]:
        """Fresh leaf tensors over the parameters, for one training step."""

        return {name: Tensor(arr, requires_grad=True) for name, arr in self.params.arrays.items()}

    def embed_image(
        self,
        image: HasFeatures,
        p_v: Optional[Tensor] = None,
        weights: Optional[Mapping[str, Tensor]] = None,
    ) -> Tensor:
        cfg = self.config
        w = weights or self._constants
        if image.grid != cfg.grid:
            raise ShapeError(f"image grid {image.grid} does not match model grid {cfg.grid}")
        features = np.asarray(image.features, dtype=np.float64)
        if features.shape != (cfg.n_v, cfg.feature_dim):
            raise ShapeError(f"image features {features.shape}, expected {(cfg.n_v, cfg.feature_dim)}")
        base = ops.matmul(Tensor(features), w["patch.w"]) + w["patch.b"]
        base = base + ops.slice2d(w["pos_emb"], (0, cfg.n_v), (0, cfg.d_model))
        if p_v is None:
            return base
        if p_v.shape != (cfg.n_v, cfg.d_model):
            raise ShapeError(f"latent modifier {p_v.shape}, expected {(cfg.n_v, cfg.d_model)}")
        return base + p_v

    def forward(
        self,
        e_v: Tensor,
        text: Sequence[int],
        attn_bias: Optional[np.ndarray] = None,
        n_text: Optional[int] = None,
        weights: Optional[Mapping[str, Tensor]] = None,
    ) -> ForwardResult:
        cfg = self.config
        w = weights or self._constants
        tokens = [int(t) for t in text]
        seq_len = cfg.n_v + len(tokens)
        if not tokens:
            raise ShapeError("forward needs at least one text token")
        if seq_len > cfg.max_seq:
            raise SequenceOverflowError(f"sequence length {seq_len} exceeds max_seq={cfg.max_seq}")
        if any(t < 0 or t >= cfg.vocab_size for t in tokens):
            raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
        e_t = ops.gather_rows(w["tok_emb"], tokens) + ops.slice2d(
            w["pos_emb"], (cfg.n_v, seq_len), (0, cfg.d_model)
        )
        x = ops.concat_rows([e_v, e_t])

        bias = causal_bias(seq_len)
        if attn_bias is not None:
            if attn_bias.shape != (seq_len, seq_len):
                raise ShapeError(f"attention bias {attn_bias.shape}, expected {(seq_len, seq_len)}")
            bias = bias + attn_bias

        scale = 1.0 / math.sqrt(cfg.d_k)
        maps: List[List[Tensor]] = []
        for layer in range(cfg.n_layers):
            x, layer_maps = self._block(x, layer, bias, scale, w)
            maps.append(layer_maps)

        h = ops.layernorm(x, w["ln_f.g"], w["ln_f.b"])
        logits = ops.matmul(h, w["head.w"]) + w["head.b"]
        layout = AttentionLayout(
            n_v=cfg.n_v,
            n_text=len(tokens) if n_text is None else n_text,
            seq_len=seq_len,
        )
        return ForwardResult(logits=logits, attn=AttentionStack(maps=maps, layout=layout), hidden=h)

    def _block(
        self,
        x: Tensor,
        layer: int,
        bias: np.ndarray,
        scale: float,
        w: Mapping[str, Tensor],
    ) -> Tuple[Tensor, List[Tensor]]:
        cfg = self.config
        p = f"layers.{layer}"
        seq_len = x.shape[0]
        xn = ops.layernorm(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        q = ops.matmul(xn, w[f"{p}.attn.wq"])
        k = ops.matmul(xn, w[f"{p}.attn.wk"])
        v = ops.matmul(xn, w[f"{p}.attn.wv"])
        heads: List[Tensor] = []
        maps: List[Tensor] = []
        for head in range(cfg.n_heads):
            cols = (head * cfg.d_k, (head + 1) * cfg.d_k)
            qh = ops.slice2d(q, (0, seq_len), cols)
            kh = ops.slice2d(k, (0, seq_len), cols)
            vh = ops.slice2d(v, (0, seq_len), cols)
            probs = ops.softmax_rows(ops.matmul(qh, ops.transpose(kh)) * scale, bias=bias)
            maps.append(probs)
            heads.append(ops.matmul(probs, vh))
        merged = heads[0] if len(heads) == 1 else ops.concat_cols(heads)
        x = x + ops.matmul(merged, w[f"{p}.attn.wo"])
        xn2 = ops.layernorm(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        hidden = ops.gelu(ops.matmul(xn2, w[f"{p}.mlp.w1"]) + w[f"{p}.mlp.b1"])
        x = x + (ops.matmul(hidden, w[f"{p}.mlp.w2"]) + w[f"{p}.mlp.b2"])
        return x, maps

    def checksum(self) -> str:
        return self.params.checksum()

    def metadata(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "config": self.config.to_dict(),
            "checksum": self.checksum(),
            "n_parameters": int(sum(a.size for a in self.params.arrays.values())),
        }


def next_token_logits(result: ForwardResult) -> Tensor:
    """Logits at the final sequence position."""

    seq_len, vocab = result.logits.shape
    return ops.reshape(ops.slice2d(result.logits, (seq_len - 1, seq_len), (0, vocab)), (vocab,))


__all__ = [
    "ModelConfig",
    "ModelParams",
    "AttentionLayout",
    "AttentionStack",
    "ForwardResult",
    "ToyDecoder",
    "SequenceOverflowError",
    "causal_bias",
    "init_model",
    "next_token_logits",
    "parameter_shapes",
]
