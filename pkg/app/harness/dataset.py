"""Seeded synthetic scenes and referring-object-classification samples."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from app.harness.vocab import COLORS, FEATURE_DIM, SHAPES, Vocabulary
from app.steering.visprompt import Box, Mask, Point, Scribble, VisualPrompt, parse_prompt, prompt_to_dict

PROMPT_KINDS = ("box", "mask", "scribble", "point")
FEATURE_NOISE = 0.05
MAX_PLACEMENT_ATTEMPTS = 200


@dataclass(frozen=True)
class SceneObject:
    color: int
    shape: int
    row0: int
    col0: int
    row1: int
    col1: int

    @property
    def cells(self) -> FrozenSet[Tuple[int, int]]:
        return frozenset(
            (r, c) for r in range(self.row0, self.row1 + 1) for c in range(self.col0, self.col1 + 1)
        )

    @property
    def center(self) -> Tuple[float, float]:
        """(x, y) center of the block in cell units; divide by the grid size to normalize."""

        return ((self.col0 + self.col1 + 1) / 2.0, (self.row0 + self.row1 + 1) / 2.0)

    def separated_from(self, other: "SceneObject") -> bool:
        """True when at least one empty cell lies between the blocks."""

        return (
            self.row1 + 1 < other.row0
            or other.row1 + 1 < self.row0
            or self.col1 + 1 < other.col0
            or other.col1 + 1 < self.col0
        )


@dataclass(frozen=True)
class SyntheticImage:
    grid: int
    seed: int
    objects: Tuple[SceneObject, ...]

    @cached_property
    def features(self) -> np.ndarray:
        return render_features(self.objects, self.grid, self.seed)

    def object_at(self, row: int, col: int) -> Optional[int]:
        for i, obj in enumerate(self.objects):
            if (row, col) in obj.cells:
                return i
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid": self.grid,
            "seed": self.seed,
            "objects": [obj.__dict__.copy() for obj in self.objects],
        }

    @staticmethod
    def from_dict(payload: Dict[str, Any]) -> "SyntheticImage":
        return SyntheticImage(
            grid=int(payload["grid"]),
            seed=int(payload["seed"]),
            objects=tuple(SceneObject(**obj) for obj in payload["objects"]),
        )


def render_features(objects: Sequence[SceneObject], g: int, seed: int) -> np.ndarray:
    """One-hot color and shape per object cell, a background flag elsewhere, plus Gaussian noise."""

    features = np.zeros((g * g, FEATURE_DIM))
    features[:, -1] = 1.0
    for obj in objects:
        for r, c in obj.cells:
            row = features[r * g + c]
            row[-1] = 0.0
            row[obj.color] = 1.0
            row[len(COLORS) + obj.shape] = 1.0
    rng = np.random.default_rng(seed)
    features = features + rng.normal(0.0, FEATURE_NOISE, size=features.shape)
    features.setflags(write=False)
    return features


@dataclass(frozen=True)
class RocSample:
    index: int
    image: SyntheticImage
    prompt: VisualPrompt
    target: int
    region: int
    question: Tuple[int, ...]
    answer_a: int
    answer_b: int
    truth: int

    @property
    def prompt_kind(self) -> str:
        return type(self.prompt).__name__.lower()

    def caption(self, vocab: Vocabulary) -> List[int]:
        obj = self.image.objects[self.target]
        return vocab.caption(self.region, vocab.color(obj.color), vocab.shape(obj.shape))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "image": self.image.to_dict(),
            "prompt": prompt_to_dict(self.prompt),
            "target": self.target,
            "region": self.region,
            "question": list(self.question),
            "answer_a": self.answer_a,
            "answer_b": self.answer_b,
            "truth": self.truth,
        }

    @staticmethod
    def from_dict(payload: Dict[str, Any]) -> "RocSample":
        return RocSample(
            index=int(payload["index"]),
            image=SyntheticImage.from_dict(payload["image"]),
            prompt=parse_prompt(payload["prompt"]),
            target=int(payload["target"]),
            region=int(payload["region"]),
            question=tuple(int(t) for t in payload["question"]),
            answer_a=int(payload["answer_a"]),
            answer_b=int(payload["answer_b"]),
            truth=int(payload["truth"]),
        )


def _place_objects(rng: np.random.Generator, g: int) -> List[SceneObject]:
    wanted = int(rng.integers(2, 5))
    shapes = rng.choice(len(SHAPES), size=wanted, replace=False)
    placed: List[SceneObject] = []
    for shape in shapes:
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            h = int(rng.integers(1, min(3, g) + 1))
            w = int(rng.integers(1, min(3, g) + 1))
            r0 = int(rng.integers(0, g - h + 1))
            c0 = int(rng.integers(0, g - w + 1))
            candidate = SceneObject(int(rng.integers(len(COLORS))), int(shape), r0, c0, r0 + h - 1, c0 + w - 1)
            if all(candidate.separated_from(other) for other in placed):
                placed.append(candidate)
                break
    return placed


def place_objects(rng: np.random.Generator, g: int) -> Tuple[SceneObject, ...]:
    """2-4 disjoint rectangular blocks with distinct shapes and a one-cell margin."""

    if g < 3:
        raise ValueError(f"grid {g} is too small to place two separated objects")
    for _ in range(20):
        placed = _place_objects(rng, g)
        if len(placed) >= 2:
            return tuple(placed)
    raise ValueError(f"could not place two separated objects on a {g}x{g} grid")


def make_prompt(obj: SceneObject, kind: str, g: int, rng: np.random.Generator) -> VisualPrompt:
    if kind == "box":
        return Box(obj.col0 / g, obj.row0 / g, (obj.col1 + 1) / g, (obj.row1 + 1) / g)
    if kind == "mask":
        cells = np.zeros((g, g), dtype=int)
        for r, c in obj.cells:
            cells[r, c] = 1
        return Mask.from_array(cells)
    if kind == "point":
        cx, cy = obj.center
        return Point(cx / g, cy / g)
    if kind == "scribble":
        row = (obj.row0 + obj.row1) // 2
        points = []
        for col in range(obj.col0, obj.col1 + 1):
            jitter_x, jitter_y = rng.uniform(-0.2, 0.2, size=2)
            points.append(((col + 0.5 + jitter_x) / g, (row + 0.5 + jitter_y) / g))
        return Scribble(tuple(points))
    raise ValueError(f"unknown prompt kind {kind!r}")


def quadrant(obj: SceneObject, g: int) -> int:
    cx, cy = obj.center
    return (2 if cy > g / 2 else 0) + (1 if cx > g / 2 else 0)


def _distractor(objects: Sequence[SceneObject], target: int) -> int:
    tx, ty = objects[target].center
    others = [i for i in range(len(objects)) if i != target]
    return min(others, key=lambda i: ((objects[i].center[0] - tx) ** 2 + (objects[i].center[1] - ty) ** 2, i))


def gen_dataset(n: int, seed: int, g: int = 8, vocab: Optional[Vocabulary] = None) -> List[RocSample]:
    """Deterministic samples; prompt kinds round-robin and the correct answer
    alternates between positions A and B within each kind."""

    if n < 1:
        raise ValueError("n must be >= 1")
    vocab = vocab or Vocabulary()
    rng = np.random.default_rng(seed)
    samples: List[RocSample] = []
    for i in range(n):
        objects = place_objects(rng, g)
        target = int(rng.integers(len(objects)))
        image = SyntheticImage(grid=g, seed=int(rng.integers(2**31 - 1)), objects=objects)
        prompt = make_prompt(objects[target], PROMPT_KINDS[i % len(PROMPT_KINDS)], g, rng)
        truth = vocab.shape(objects[target].shape)
        other = vocab.shape(objects[_distractor(objects, target)].shape)
        answer_a, answer_b = (truth, other) if (i // len(PROMPT_KINDS)) % 2 == 0 else (other, truth)
        region = vocab.region(quadrant(objects[target], g))
        samples.append(
            RocSample(
                index=i,
                image=image,
                prompt=prompt,
                target=target,
                region=region,
                question=tuple(vocab.question(region, answer_a, answer_b)),
                answer_a=answer_a,
                answer_b=answer_b,
                truth=truth,
            )
        )
    return samples


def dataset_to_json(samples: Sequence[RocSample]) -> str:
    return json.dumps({"samples": [s.to_dict() for s in samples]}, sort_keys=True)


def dataset_digest(samples: Sequence[RocSample]) -> str:
    return hashlib.sha256(dataset_to_json(samples).encode("utf-8")).hexdigest()


def save_dataset(samples: Sequence[RocSample], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dataset_to_json(samples), encoding="utf-8")


def load_dataset(path: Path) -> List[RocSample]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return [RocSample.from_dict(s) for s in payload["samples"]]


__all__ = [
    "PROMPT_KINDS",
    "SceneObject",
    "SyntheticImage",
    "RocSample",
    "dataset_digest",
    "dataset_to_json",
    "gen_dataset",
    "load_dataset",
    "make_prompt",
    "place_objects",
    "quadrant",
    "render_features",
    "save_dataset",
]
