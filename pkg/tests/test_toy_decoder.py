import json
from pathlib import Path

import numpy as np
import pytest

from app.models.checkpoint import CheckpointError, decode, encode, load_checkpoint, save_checkpoint
from app.models.registry import ModelRegistry
from app.models.toy_decoder import ModelConfig, SequenceOverflowError, ToyDecoder, next_token_logits
from app.numcore import ShapeError, Tensor
from tests.conftest import TINY_CONFIG


def _forward(model: ToyDecoder, sample, p_v=None):
    e_v = model.embed_image(sample.image, p_v)
    return model.forward(e_v, sample.question)


def test_forward_shapes_and_layout(tiny_model: ToyDecoder, tiny_sample) -> None:
    result = _forward(tiny_model, tiny_sample)
    seq_len = TINY_CONFIG.n_v + len(tiny_sample.question)
    assert result.logits.shape == (seq_len, TINY_CONFIG.vocab_size)
    assert result.attn.n_layers == TINY_CONFIG.n_layers
    assert result.attn.n_heads == TINY_CONFIG.n_heads
    assert result.attn.values().shape == (TINY_CONFIG.n_layers, TINY_CONFIG.n_heads, seq_len, seq_len)
    assert result.attn.layout.answer_start == seq_len - 1
    assert next_token_logits(result).shape == (TINY_CONFIG.vocab_size,)


def test_attention_rows_sum_to_one_and_are_causal(tiny_model: ToyDecoder, tiny_sample) -> None:
    maps = _forward(tiny_model, tiny_sample).attn.values()
    np.testing.assert_allclose(maps.sum(axis=-1), 1.0, atol=1e-12)
    upper = np.triu_indices(maps.shape[-1], k=1)
    assert np.all(maps[..., upper[0], upper[1]] == 0.0)


def test_future_tokens_do_not_change_earlier_logits(tiny_model: ToyDecoder, tiny_sample) -> None:
    short = _forward(tiny_model, tiny_sample).logits.data
    e_v = tiny_model.embed_image(tiny_sample.image)
    longer = tiny_model.forward(e_v, list(tiny_sample.question) + [tiny_sample.truth]).logits.data
    np.testing.assert_allclose(longer[: short.shape[0]], short, atol=1e-12)


def test_zero_latent_gives_identical_logits(tiny_model: ToyDecoder, tiny_sample) -> None:
    plain = _forward(tiny_model, tiny_sample).logits.data
    zero = Tensor(np.zeros((TINY_CONFIG.n_v, TINY_CONFIG.d_model)))
    np.testing.assert_array_equal(_forward(tiny_model, tiny_sample, zero).logits.data, plain)


def test_latent_shape_and_sequence_checks(tiny_model: ToyDecoder, tiny_sample) -> None:
    with pytest.raises(ShapeError):
        tiny_model.embed_image(tiny_sample.image, Tensor(np.zeros((3, TINY_CONFIG.d_model))))
    e_v = tiny_model.embed_image(tiny_sample.image)
    with pytest.raises(SequenceOverflowError):
        tiny_model.forward(e_v, [1] * (TINY_CONFIG.max_seq - TINY_CONFIG.n_v + 1))
    with pytest.raises(ShapeError):
        tiny_model.forward(e_v, [])
    with pytest.raises(ValueError):
        tiny_model.forward(e_v, [TINY_CONFIG.vocab_size])


def test_initialization_is_seeded(tiny_model: ToyDecoder) -> None:
    again = ToyDecoder.initialize(TINY_CONFIG)
    assert again.checksum() == tiny_model.checksum()
    other = ToyDecoder.initialize(ModelConfig(**{**TINY_CONFIG.to_dict(), "seed": 4}))
    assert other.checksum() != tiny_model.checksum()


def test_parameters_are_read_only(tiny_model: ToyDecoder) -> None:
    with pytest.raises(ValueError):
        tiny_model.params["head.b"][0] = 1.0


def test_model_config_validation() -> None:
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(grid=8, max_seq=64)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"d_model": 16, "depth": 2})


def test_checkpoint_round_trip(tmp_path: Path, tiny_model: ToyDecoder) -> None:
    path = tmp_path / "model.bin"
    save_checkpoint(path, tiny_model, {"epochs": 0})
    restored = load_checkpoint(path, version="restored")
    assert restored.checksum() == tiny_model.checksum()
    assert restored.config == tiny_model.config
    assert decode(path.read_bytes())[2] == {"epochs": 0}
    assert encode(tiny_model.config, tiny_model.params) == encode(restored.config, restored.params)


def test_corrupt_checkpoint_is_rejected(tiny_model: ToyDecoder) -> None:
    blob = bytearray(encode(tiny_model.config, tiny_model.params))
    blob[-1] ^= 0xFF
    with pytest.raises(CheckpointError):
        decode(bytes(blob))
    with pytest.raises(CheckpointError):
        decode(b"NOPE" + bytes(blob[4:]))
    with pytest.raises(CheckpointError):
        decode(bytes(blob[:-64]))


def test_missing_checkpoint_raises(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.bin")


def _write_manifest(root: Path, version: str) -> None:
    (root / version).mkdir(parents=True)
    (root / version / "model.json").write_text(json.dumps({"config": TINY_CONFIG.to_dict()}))


def test_registry_prefers_checkpoint_then_manifest(tmp_path: Path, tiny_model: ToyDecoder) -> None:
    _write_manifest(tmp_path, "v1")
    _write_manifest(tmp_path, "v2")
    trained = ToyDecoder(TINY_CONFIG, tiny_model.params.replace({"head.b": np.ones(TINY_CONFIG.vocab_size)}))
    save_checkpoint(tmp_path / "v2" / "model.bin", trained)

    registry = ModelRegistry(tmp_path)
    assert registry.list_available_versions() == ["v1", "v2"]
    assert registry.load("v1").checksum() == tiny_model.checksum()
    assert registry.load("v2").checksum() == trained.checksum()
    assert registry.load("v2") is registry.load("v2")
    with pytest.raises(FileNotFoundError):
        registry.load("v9")


def test_registry_promote_and_unload(tmp_path: Path) -> None:
    _write_manifest(tmp_path, "v1")
    _write_manifest(tmp_path, "v2")
    registry = ModelRegistry(tmp_path)
    registry.load("v1")
    with pytest.raises(ValueError):
        registry.unload("v1")
    registry.set_default_version("v2")
    assert registry.default_version == "v2"
    registry.unload("v1")
    assert registry.list_loaded_versions() == ["v2"]
