import numpy as np
import pytest

from app.harness.selftest import (
    GRAD_TOLERANCE,
    check_aggregation,
    check_distance_transform,
    check_energy_oracles,
    energy_gradient_error,
)
from app.models.toy_decoder import ToyDecoder
from app.numcore import Tensor, backward
from app.steering.config import AggregationMode, AggregationSpec, EnergyMode, SteeringConfig, middle_window
from app.steering.energy import (
    ZeroMassError,
    aggregate,
    build_target,
    energy_gradient,
    hard_energy,
    layer_energy_profile,
    ratio_energy,
    region_mass,
    soft_energy,
    token_visual_mass,
)
from app.steering.visprompt import Box, Point, RegionMask, SoftWeightMap, rasterize


def _region(cells) -> RegionMask:
    return RegionMask(np.array(cells, dtype=bool))


def test_hard_energy_extremes() -> None:
    region = _region([[1, 0], [0, 0]])
    inside = np.array([[1.0, 0.0], [0.0, 0.0]])
    outside = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert hard_energy(inside, region).value == 0.0
    assert hard_energy(outside, region).value == 1.0
    assert hard_energy(np.full((2, 2), 0.25), region).value == pytest.approx(0.5625)


def test_hard_energy_full_region_and_scale_invariance() -> None:
    rng = np.random.default_rng(0)
    A = rng.uniform(size=(4, 4))
    assert hard_energy(A, _region(np.ones((4, 4)))).value == 0.0
    region = rasterize(Box(0.0, 0.0, 0.5, 1.0), 4)
    assert hard_energy(3.5 * A, region).value == pytest.approx(hard_energy(A, region).value, abs=1e-15)


def test_zero_mass_raises() -> None:
    with pytest.raises(ZeroMassError):
        hard_energy(np.zeros((2, 2)), _region([[1, 0], [0, 0]]))


def test_region_mass_differs_from_gaussian_ratio() -> None:
    A = np.array([[1.0, 3.0], [0.0, 0.0]])
    region = _region([[1, 0], [0, 0]])
    assert region_mass(A, region) == 0.25
    soft = SoftWeightMap(np.array([[1.0, 0.5], [0.5, 0.1]]))
    assert soft_energy(A, soft).mass_ratio == pytest.approx(0.625)
    with pytest.raises(ZeroMassError):
        region_mass(np.zeros((2, 2)), region)


def test_soft_energy_clamps_raw_weights_only() -> None:
    A = np.array([[1.0, 0.0], [0.0, 0.0]])
    raw = SoftWeightMap(np.array([[4.0, 0.0], [0.0, 0.0]]), normalized=False)
    assert soft_energy(A, raw).value == 0.0
    assert soft_energy(A, raw).mass_ratio == 1.0
    unclamped = ratio_energy(A, raw.weights)
    assert unclamped.value == pytest.approx(9.0)
    normalized = SoftWeightMap(np.array([[1.0, 0.5], [0.5, 0.2]]))
    assert 0.0 <= soft_energy(np.ones((2, 2)), normalized).value <= 1.0


def test_clamped_energy_has_zero_gradient_when_saturated() -> None:
    A = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]), requires_grad=True)
    energy = ratio_energy(A, np.array([[4.0, 0.0], [0.0, 0.0]]), clamp=True)
    backward(energy.tensor)
    np.testing.assert_array_equal(A.grad, np.zeros((2, 2)))


def test_build_target_modes() -> None:
    box = Box(0.0, 0.0, 0.5, 0.5)
    cfg = SteeringConfig()
    assert build_target(box, 4, cfg).kind is EnergyMode.HARD
    assert build_target(Point(0.1, 0.1), 4, cfg).kind is EnergyMode.SOFT
    soft_box = build_target(box, 4, cfg.replace(energy_mode=EnergyMode.SOFT))
    assert soft_box.kind is EnergyMode.SOFT
    assert soft_box.weights[0, 0] == 1.0
    hard_point = build_target(Point(0.1, 0.1), 4, cfg.replace(energy_mode=EnergyMode.HARD))
    assert hard_point.weights.sum() == 1.0
    raw = build_target(Point(0.1, 0.1), 4, cfg.replace(soft_normalized=False))
    assert raw.clamp


@pytest.mark.parametrize(
    "n_layers, window",
    [(1, (0, 0)), (2, (1, 1)), (4, (1, 3)), (8, (2, 6)), (32, (8, 24))],
)
def test_middle_window(n_layers: int, window) -> None:
    assert middle_window(n_layers) == window


def test_aggregate_shapes_and_mass(tiny_model: ToyDecoder, tiny_sample) -> None:
    result = tiny_model.forward(tiny_model.embed_image(tiny_sample.image), tiny_sample.question)
    for mode in AggregationMode:
        A = aggregate(result.attn, AggregationSpec(mode, (0, 1))).numpy()
        assert A.shape == (4, 4)
        assert np.all(A >= 0.0)
        assert A.sum() <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        aggregate(result.attn, AggregationSpec(AggregationMode.CONTEXT_TOKEN, (1, 2)))


def test_oracle_checks_pass() -> None:
    assert check_energy_oracles(count=200).passed
    assert check_distance_transform(count=30).passed
    assert check_aggregation().passed


@pytest.mark.parametrize("kind", ["hard", "soft"])
@pytest.mark.parametrize("mode", list(AggregationMode))
def test_energy_gradient_matches_finite_differences(kind: str, mode: AggregationMode) -> None:
    assert energy_gradient_error(0, kind, mode, n_coords=8) < GRAD_TOLERANCE


def test_energy_gradient_matches_on_every_coordinate() -> None:
    # 4x4 grid, d_model 8: 128 latent coordinates, small gradients included.
    assert energy_gradient_error(1, "soft", AggregationMode.ANSWER_START, n_coords=128) < GRAD_TOLERANCE


def test_energy_gradient_is_deterministic(tiny_model: ToyDecoder, tiny_sample) -> None:
    p_v = np.random.default_rng(2).normal(0.0, 0.1, size=(16, 16))
    first = energy_gradient(p_v, tiny_model, tiny_sample.image, tiny_sample.question, tiny_sample.prompt)
    second = energy_gradient(p_v, tiny_model, tiny_sample.image, tiny_sample.question, tiny_sample.prompt)
    assert first.shape == (16, 16)
    np.testing.assert_array_equal(first.data, second.data)


def test_layer_profile_and_token_mass(tiny_model: ToyDecoder, tiny_sample) -> None:
    result = tiny_model.forward(tiny_model.embed_image(tiny_sample.image), tiny_sample.question)
    target = build_target(tiny_sample.prompt, 4, SteeringConfig())
    profile = layer_energy_profile(result.attn, target, AggregationMode.CONTEXT_TOKEN)
    assert len(profile) == 2
    assert all(0.0 <= e <= 1.0 for e in profile)
    mass = token_visual_mass(result.attn, AggregationSpec(AggregationMode.CONTEXT_TOKEN, (0, 1)))
    assert mass.shape == (len(tiny_sample.question),)
    assert np.all((mass > 0.0) & (mass <= 1.0 + 1e-12))
