"""Referring prompts (box, mask, scribble, point) rasterized onto the visual-token grid.

Coordinates are normalized to [0, 1]; ``x`` runs along columns and ``y`` along
rows. Cell ``(row, col)`` has its center at ``((col + 0.5) / g, (row + 0.5) / g)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter

Coord = Tuple[float, float]


class EmptyRegionError(ValueError):
    """Raised when a prompt covers no visual-token cell."""


def _check_unit(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise ValueError(f"{name}={value} is outside [0, 1]")


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            _check_unit(getattr(self, name), name)
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box needs x0<x1 and y0<y1, got {self}")


@dataclass(frozen=True)
class Mask:
    grid: Tuple[Tuple[int, ...], ...]

    def __post_init__(self) -> None:
        rows = tuple(tuple(int(bool(v)) for v in row) for row in self.grid)
        if not rows or any(len(r) != len(rows) for r in rows):
            raise ValueError("mask grid must be square")
        if not any(any(r) for r in rows):
            raise ValueError("mask has no set cell")
        object.__setattr__(self, "grid", rows)

    @classmethod
    def from_array(cls, cells: np.ndarray) -> "Mask":
        return cls(tuple(tuple(int(v) for v in row) for row in np.asarray(cells)))


@dataclass(frozen=True)
class Scribble:
    points: Tuple[Coord, ...]

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if not pts:
            raise ValueError("scribble needs at least one point")
        for x, y in pts:
            _check_unit(x, "x")
            _check_unit(y, "y")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        _check_unit(self.x, "x")
        _check_unit(self.y, "y")


VisualPrompt = Union[Box, Mask, Scribble, Point]


@dataclass(frozen=True)
class RegionMask:
    cells: np.ndarray = field(compare=False)

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=bool).copy()
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValueError(f"region cells must be a square grid, got shape {cells.shape}")
        if not cells.any():
            raise EmptyRegionError("region covers no cell")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def grid(self) -> int:
        return int(self.cells.shape[0])

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    def flat_indices(self) -> np.ndarray:
        return np.flatnonzero(self.cells.reshape(-1))

    def as_weights(self) -> np.ndarray:
        return self.cells.astype(np.float64)


@dataclass(frozen=True)
class SoftWeightMap:
    weights: np.ndarray = field(compare=False)
    sigma: float = 0.1
    normalized: bool = True


def cell_centers(g: int) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized (x, y) centers of every cell, each of shape (g, g)."""

    idx = (np.arange(g) + 0.5) / g
    return np.meshgrid(idx, idx)


def prompt_points(prompt: VisualPrompt) -> List[Coord]:
    if isinstance(prompt, Point):
        return [(prompt.x, prompt.y)]
    if isinstance(prompt, Scribble):
        return list(prompt.points)
    raise TypeError(f"{type(prompt).__name__} prompts carry no point set")


def _cell_of(x: float, y: float, g: int) -> Tuple[int, int]:
    return min(int(y * g), g - 1), min(int(x * g), g - 1)


def rasterize(prompt: VisualPrompt, g: int) -> RegionMask:
    """Binary region on the g x g grid.

    Box membership is by cell-center containment; scribbles and points mark
    the cells that contain a prompt point.
    """

    if isinstance(prompt, Box):
        cx, cy = cell_centers(g)
        cells = (cx >= prompt.x0) & (cx <= prompt.x1) & (cy >= prompt.y0) & (cy <= prompt.y1)
        if not cells.any():
            raise EmptyRegionError(f"box {prompt} contains no cell center on a {g}x{g} grid")
        return RegionMask(cells)
    if isinstance(prompt, Mask):
        cells = np.asarray(prompt.grid, dtype=bool)
        if cells.shape != (g, g):
            raise ValueError(f"mask grid {cells.shape} does not match {g}x{g}")
        return RegionMask(cells)
    cells = np.zeros((g, g), dtype=bool)
    for x, y in prompt_points(prompt):
        cells[_cell_of(x, y, g)] = True
    return RegionMask(cells)


def region_points(region: RegionMask) -> List[Coord]:
    """Cell centers of a region, used as the point set for soft weights on boxes and masks."""

    g = region.grid
    rows, cols = np.nonzero(region.cells)
    return [((c + 0.5) / g, (r + 0.5) / g) for r, c in zip(rows, cols)]


def distance_transform(points: Union[VisualPrompt, Sequence[Coord]], g: int) -> np.ndarray:
    """Exact Euclidean distance from each cell center to the nearest prompt point."""

    pts = prompt_points(points) if isinstance(points, (Box, Mask, Scribble, Point)) else list(points)
    if not pts:
        raise ValueError("distance_transform needs at least one point")
    cx, cy = cell_centers(g)
    best = np.full((g, g), np.inf)
    for px, py in pts:
        dx = cx - px
        dy = cy - py
        best = np.minimum(best, np.sqrt(dx * dx + dy * dy))
    return best


def soft_weight_map(distances: np.ndarray, sigma: float = 0.1, normalized: bool = True) -> SoftWeightMap:
    """Gaussian weights of the distance map.

    Raw mode is the Gaussian pdf; normalized mode divides by its peak so the
    weight is exactly 1 at distance 0.
    """

    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    weights = np.exp(-(d * d) / (2.0 * sigma * sigma))
    if not normalized:
        weights = weights / (math.sqrt(2.0 * math.pi) * sigma)
    weights.setflags(write=False)
    return SoftWeightMap(weights=weights, sigma=sigma, normalized=normalized)


class _BoxFile(BaseModel):
    type: Literal["box"]
    coords: Tuple[float, float, float, float]


class _MaskFile(BaseModel):
    type: Literal["mask"]
    grid: List[List[int]]


class _ScribbleFile(BaseModel):
    type: Literal["scribble"]
    points: List[Tuple[float, float]] = Field(min_length=1)


class _PointFile(BaseModel):
    type: Literal["point"]
    point: Tuple[float, float]


PromptFile = Annotated[Union[_BoxFile, _MaskFile, _ScribbleFile, _PointFile], Field(discriminator="type")]
_PROMPT_ADAPTER: TypeAdapter = TypeAdapter(PromptFile)


def parse_prompt(payload: Dict[str, Any]) -> VisualPrompt:
    parsed = _PROMPT_ADAPTER.validate_python(payload)
    if isinstance(parsed, _BoxFile):
        return Box(*parsed.coords)
    if isinstance(parsed, _MaskFile):
        return Mask(tuple(tuple(row) for row in parsed.grid))
    if isinstance(parsed, _ScribbleFile):
        return Scribble(tuple(parsed.points))
    return Point(*parsed.point)


def prompt_to_dict(prompt: VisualPrompt) -> Dict[str, Any]:
    if isinstance(prompt, Box):
        return {"type": "box", "coords": [prompt.x0, prompt.y0, prompt.x1, prompt.y1]}
    if isinstance(prompt, Mask):
        return {"type": "mask", "grid": [list(row) for row in prompt.grid]}
    if isinstance(prompt, Scribble):
        return {"type": "scribble", "points": [list(p) for p in prompt.points]}
    return {"type": "point", "point": [prompt.x, prompt.y]}


def prompt_kind(prompt: VisualPrompt) -> str:
    return type(prompt).__name__.lower()


def load_prompt(path: Path) -> VisualPrompt:
    with open(path, "r", encoding="utf-8") as f:
        return parse_prompt(json.load(f))


__all__ = [
    "Box",
    "Mask",
    "Scribble",
    "Point",
    "VisualPrompt",
    "RegionMask",
    "SoftWeightMap",
    "EmptyRegionError",
    "cell_centers",
    "distance_transform",
    "load_prompt",
    "parse_prompt",
    "prompt_kind",
    "prompt_points",
    "prompt_to_dict",
    "rasterize",
    "region_points",
    "soft_weight_map",
]
