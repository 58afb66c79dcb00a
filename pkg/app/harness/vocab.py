"""Closed caption/question vocabulary for the synthetic referring task."""
from __future__ import annotations

from typing import Dict, List, Sequence

SPECIALS = ["<pad>", "<bos>", "<eos>"]
WORDS = ["object", "at", "is", "a", "or", "?"]
REGIONS = ["top-left", "top-right", "bottom-left", "bottom-right"]
COLORS = ["red", "green", "blue", "yellow", "purple", "orange"]
SHAPES = ["circle", "square", "triangle", "star", "cross", "ring"]

FEATURE_DIM = len(COLORS) + len(SHAPES) + 1


class Vocabulary:
    def __init__(self, size: int = 40) -> None:
        tokens = SPECIALS + WORDS + REGIONS + COLORS + SHAPES
        if size < len(tokens):
            raise ValueError(f"vocabulary needs at least {len(tokens)} ids, got {size}")
        tokens += [f"<unused{i}>" for i in range(size - len(tokens))]
        self.tokens: List[str] = tokens
        self._ids: Dict[str, int] = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._ids[token]

    def encode(self, words: Sequence[str]) -> List[int]:
        return [self._ids[w] for w in words]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    @property
    def bos(self) -> int:
        return self._ids["<bos>"]

    @property
    def eos(self) -> int:
        return self._ids["<eos>"]

    def region(self, index: int) -> int:
        return self._ids[REGIONS[index]]

    def color(self, index: int) -> int:
        return self._ids[COLORS[index]]

    def shape(self, index: int) -> int:
        return self._ids[SHAPES[index]]

    def question(self, region: int, answer_a: int, answer_b: int) -> List[int]:
        """``<bos> object at <region> a <A> or <B> ?`` with ids for region and answers."""

        return [
            self.bos,
            self.id("object"),
            self.id("at"),
            region,
            self.id("a"),
            answer_a,
            self.id("or"),
            answer_b,
            self.id("?"),
        ]

    def caption(self, region: int, color: int, shape: int) -> List[int]:
        """``<bos> object at <region> is <color> <shape> <eos>``."""

        return [self.bos, self.id("object"), self.id("at"), region, self.id("is"), color, shape, self.eos]


__all__ = ["Vocabulary", "COLORS", "SHAPES", "REGIONS", "FEATURE_DIM"]
