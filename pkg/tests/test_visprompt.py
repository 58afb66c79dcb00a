import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from app.steering.visprompt import (
    Box,
    EmptyRegionError,
    Mask,
    Point,
    RegionMask,
    Scribble,
    distance_transform,
    load_prompt,
    parse_prompt,
    prompt_to_dict,
    rasterize,
    region_points,
    soft_weight_map,
)


def test_box_rasterizes_by_cell_center() -> None:
    region = rasterize(Box(0.0, 0.0, 0.5, 0.5), 4)
    expected = np.zeros((4, 4), dtype=bool)
    expected[:2, :2] = True
    np.testing.assert_array_equal(region.cells, expected)
    assert region.count == 4
    np.testing.assert_array_equal(region.flat_indices(), [0, 1, 4, 5])


def test_box_without_cell_center_is_empty() -> None:
    with pytest.raises(EmptyRegionError):
        rasterize(Box(0.0, 0.0, 0.1, 0.1), 4)


def test_region_mask_needs_a_set_cell() -> None:
    with pytest.raises(EmptyRegionError):
        RegionMask(np.zeros((4, 4), dtype=bool))
    with pytest.raises(ValueError):
        RegionMask(np.ones((2, 3), dtype=bool))
    assert RegionMask(np.eye(3, dtype=bool)).count == 3


def test_invalid_prompts_rejected() -> None:
    with pytest.raises(ValueError):
        Box(0.5, 0.0, 0.2, 1.0)
    with pytest.raises(ValueError):
        Point(1.2, 0.5)
    with pytest.raises(ValueError):
        Mask(((0, 0), (0, 0)))
    with pytest.raises(ValueError):
        Scribble(())


def test_mask_rasterize_is_idempotent() -> None:
    cells = np.zeros((4, 4), dtype=int)
    cells[1, 2] = cells[3, 0] = 1
    once = rasterize(Mask.from_array(cells), 4)
    twice = rasterize(Mask.from_array(once.cells), 4)
    np.testing.assert_array_equal(once.cells, twice.cells)
    with pytest.raises(ValueError):
        rasterize(Mask.from_array(cells), 8)


def test_point_and_scribble_mark_containing_cells() -> None:
    assert rasterize(Point(1.0, 1.0), 4).flat_indices().tolist() == [15]
    scribble = Scribble(((0.1, 0.1), (0.6, 0.1), (0.6, 0.1)))
    assert rasterize(scribble, 4).flat_indices().tolist() == [0, 2]


def test_distance_transform_values() -> None:
    d = distance_transform(Point(0.125, 0.125), 4)
    assert d[0, 0] == 0.0
    assert d[0, 1] == pytest.approx(0.25)
    assert d[1, 1] == pytest.approx(np.sqrt(2) * 0.25)


def test_distance_transform_monotone_under_point_addition() -> None:
    rng = np.random.default_rng(0)
    points = [tuple(p) for p in rng.uniform(size=(3, 2))]
    before = distance_transform(points, 8)
    after = distance_transform(points + [tuple(rng.uniform(size=2))], 8)
    assert np.all(after <= before)


def test_soft_weights_peak_and_decrease() -> None:
    d = np.array([0.0, 0.05, 0.1, 0.3])
    normalized = soft_weight_map(d, sigma=0.1)
    assert normalized.weights[0] == 1.0
    assert np.all(np.diff(normalized.weights) < 0)
    raw = soft_weight_map(d, sigma=0.1, normalized=False)
    assert raw.weights[0] == pytest.approx(1.0 / (np.sqrt(2 * np.pi) * 0.1))
    with pytest.raises(ValueError):
        soft_weight_map(d, sigma=0.0)
    with pytest.raises(ValueError):
        soft_weight_map(-d - 1.0)


def test_region_points_are_cell_centers() -> None:
    region = rasterize(Box(0.5, 0.5, 1.0, 1.0), 2)
    assert region_points(region) == [(0.75, 0.75)]


def test_prompt_file_parsing(tmp_path: Path) -> None:
    payload = {"type": "scribble", "points": [[0.1, 0.2], [0.3, 0.4]]}
    path = tmp_path / "prompt.json"
    path.write_text(json.dumps(payload))
    prompt = load_prompt(path)
    assert prompt == Scribble(((0.1, 0.2), (0.3, 0.4)))
    assert prompt_to_dict(prompt) == payload
    assert parse_prompt({"type": "box", "coords": [0.0, 0.0, 0.5, 0.5]}) == Box(0.0, 0.0, 0.5, 0.5)
    with pytest.raises(ValidationError):
        parse_prompt({"type": "lasso", "points": []})
