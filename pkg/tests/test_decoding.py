import numpy as np
import pytest

from app.harness.vocab import Vocabulary
from app.models.toy_decoder import ToyDecoder
from app.services.decoding import (
    DecodeConfig,
    DecodeMode,
    EditSteps,
    debias_logits,
    decode,
    edit_attention_decode,
    edit_bias,
    greedy_decode,
    prompt_debias_decode,
    result_to_dict,
)
from app.steering.config import Optimizer, SteeringConfig
from app.steering.optimizers import LatentModifier, steer_adam
from app.steering.visprompt import Point, rasterize


def test_plain_decode_is_deterministic(tiny_model: ToyDecoder, tiny_sample) -> None:
    first = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question)
    second = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question)
    assert first.mode is DecodeMode.PLAIN
    assert len(first.tokens) == 4
    assert first.tokens == second.tokens
    for a, b in zip(first.step_logits, second.step_logits):
        np.testing.assert_array_equal(a, b)


def test_stop_token_truncates(tiny_model: ToyDecoder, tiny_sample) -> None:
    first = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question).tokens[0]
    result = greedy_decode(
        tiny_model, tiny_sample.image, tiny_sample.question, DecodeConfig(max_new_tokens=4, stop_token=first)
    )
    assert result.tokens == [first]


def test_zero_latent_decode_matches_plain(tiny_model: ToyDecoder, tiny_sample) -> None:
    plain = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question)
    zero = LatentModifier.zeros(tiny_model.config.n_v, tiny_model.config.d_model)
    steered = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question, p_v=zero)
    assert steered.mode is DecodeMode.STEERED
    assert steered.tokens == plain.tokens
    np.testing.assert_array_equal(steered.step_logits[0], plain.step_logits[0])


def test_edit_with_zero_eta_equals_plain(tiny_model: ToyDecoder, tiny_sample) -> None:
    region = rasterize(tiny_sample.prompt, tiny_model.config.grid)
    plain = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question)
    edit = edit_attention_decode(tiny_model, tiny_sample.image, tiny_sample.question, region, 0.0, EditSteps.ALL)
    assert edit.tokens == plain.tokens
    for a, b in zip(edit.step_logits, plain.step_logits):
        np.testing.assert_array_equal(a, b)


def test_large_eta_concentrates_text_attention_in_region(tiny_model: ToyDecoder, tiny_sample) -> None:
    region = rasterize(tiny_sample.prompt, tiny_model.config.grid)
    result = edit_attention_decode(
        tiny_model, tiny_sample.image, tiny_sample.question, region, 50.0, EditSteps.FIRST_ONLY, max_new_tokens=1
    )
    maps = result.attn.values()
    r0, r1 = result.attn.layout.text_rows
    in_region = maps[:, :, r0:r1][..., region.flat_indices()].sum(axis=-1)
    assert np.all(in_region > 0.99)


def test_edit_bias_layout() -> None:
    region = rasterize(Point(0.1, 0.1), 2)
    bias = edit_bias(region, 5, 3.0)
    assert bias.shape == (5, 5)
    assert np.all(bias[:, 0] == 3.0)
    assert np.all(bias[:, 1:] == 0.0)


def test_debias_formula_and_argmax_invariance() -> None:
    steered = np.array([1.0, 3.0, 2.0])
    unsteered = np.array([2.0, 1.0, 0.5])
    np.testing.assert_allclose(debias_logits(steered, unsteered, 0.5), [0.5, 4.0, 2.75])
    shifted = debias_logits(steered + 7.0, unsteered + 7.0, 0.5)
    assert np.argmax(shifted) == np.argmax(debias_logits(steered, unsteered, 0.5))
    probs = np.exp(shifted - shifted.max())
    probs /= probs.sum()
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(probs >= 0.0)


def test_zero_gamma_debias_equals_steered(tiny_model: ToyDecoder, tiny_sample) -> None:
    latent, _ = steer_adam(
        tiny_model, tiny_sample.image, tiny_sample.question, tiny_sample.prompt, SteeringConfig(iterations=2)
    )
    steered = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question, p_v=latent)
    debiased = prompt_debias_decode(tiny_model, tiny_sample.image, tiny_sample.question, latent, 0.0)
    assert debiased.tokens == steered.tokens
    assert len(debiased.unsteered_logits) == len(debiased.tokens)
    with pytest.raises(ValueError):
        prompt_debias_decode(tiny_model, tiny_sample.image, tiny_sample.question, latent, -0.1)


def test_debias_keeps_both_branches(tiny_model: ToyDecoder, tiny_sample) -> None:
    latent, _ = steer_adam(
        tiny_model, tiny_sample.image, tiny_sample.question, tiny_sample.prompt, SteeringConfig(iterations=2)
    )
    gamma = 0.7
    result = prompt_debias_decode(tiny_model, tiny_sample.image, tiny_sample.question, latent, gamma)
    assert len(result.steered_logits) == len(result.unsteered_logits) == len(result.step_logits) == 4
    single = DecodeConfig(max_new_tokens=1)
    steered = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question, single, p_v=latent)
    np.testing.assert_array_equal(result.steered_logits[0], steered.step_logits[0])
    plain = greedy_decode(tiny_model, tiny_sample.image, tiny_sample.question, single)
    np.testing.assert_array_equal(result.unsteered_logits[0], plain.step_logits[0])
    for mixed, s, u in zip(result.step_logits, result.steered_logits, result.unsteered_logits):
        np.testing.assert_allclose(mixed, (1.0 + gamma) * s - gamma * u, rtol=0.0, atol=1e-12)


def test_decode_dispatch_and_export(tiny_model: ToyDecoder, tiny_sample) -> None:
    checksum = tiny_model.checksum()
    vocab = Vocabulary(tiny_model.config.vocab_size)
    cfg = DecodeConfig(
        max_new_tokens=2,
        mode=DecodeMode.STEERED_DEBIAS,
        optimizer=Optimizer.GD,
        steering=SteeringConfig(iterations=1),
    )
    result = decode(tiny_model, tiny_sample.image, tiny_sample.question, tiny_sample.prompt, cfg)
    assert result.trace is not None
    payload = result_to_dict(result, cfg, vocab.decode, top_k=3)
    assert payload["mode"] == "steered_debias"
    assert len(payload["top_logits"]) == len(result.tokens)
    assert len(payload["top_logits"][0]) == 3
    assert payload["config"]["gamma"] == 0.7
    assert payload["trace"]["optimizer"] == "gd"
    assert isinstance(payload["text"], str)
    assert tiny_model.checksum() == checksum


def test_decode_needs_prompt_outside_plain(tiny_model: ToyDecoder, tiny_sample) -> None:
    with pytest.raises(ValueError):
        decode(tiny_model, tiny_sample.image, tiny_sample.question, None, DecodeConfig(mode=DecodeMode.EDIT_ATTENTION))
    with pytest.raises(ValueError):
        DecodeConfig(max_new_tokens=0)
    with pytest.raises(ValueError):
        DecodeConfig(eta=float("inf"))
