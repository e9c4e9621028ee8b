from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..alphabet import CHARS
from ..rng import Rng
from .font import GLYPH_H, GLYPH_W, glyph
from .image import GrayImage

KINDS = ("diagonal-hatch", "crosshatch", "tiled-glyph")


@dataclass(frozen=True)
class PatternSpec:
    kind: str
    period: int
    stroke: int
    ink: float = 1.0
    phase: tuple[int, int] = (0, 0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if not 0 < self.stroke < self.period:
            raise ValueError("pattern needs 0 < stroke < period")
        if not 0.0 <= self.ink <= 1.0:
            raise ValueError("pattern ink must lie in [0, 1]")
        if self.kind == "tiled-glyph" and GLYPH_H * self.stroke > self.period:
            raise ValueError("tiled glyph does not fit in one period")
        object.__setattr__(self, "phase", tuple(int(v) for v in self.phase))

    @property
    def pattern_id(self) -> int:
        return KINDS.index(self.kind) + 1

    def shifted(self, dx: int, dy: int) -> "PatternSpec":
        return replace(self, phase=(self.phase[0] + dx, self.phase[1] + dy))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase"] = list(self.phase)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        return cls(**{**d, "phase": tuple(d.get("phase", (0, 0)))})


# Pattern 1, 2, 3 of the experiment matrix.
STANDARD_PATTERNS = {
    1: PatternSpec("diagonal-hatch", period=8, stroke=2),
    2: PatternSpec("crosshatch", period=10, stroke=2),
    3: PatternSpec("tiled-glyph", period=16, stroke=2, seed=3),
}


def tile_glyph(seed: int) -> str:
    return CHARS[Rng(seed).randint(len(CHARS))]


def ink_map(spec: PatternSpec, w: int, h: int) -> np.ndarray:
    """Boolean (h, w) grid of pattern ink."""
    dx, dy = spec.phase
    ys, xs = np.mgrid[0:h, 0:w]
    u = xs + dx
    v = ys + dy
    p, s = spec.period, spec.stroke
    if spec.kind == "diagonal-hatch":
        return (u + v) % p < s
    if spec.kind == "crosshatch":
        return ((u + v) % p < s) | ((u - v) % p < s)
    cells = glyph(tile_glyph(spec.seed))
    cx = (u % p) // s
    cy = (v % p) // s
    inside = (cx < GLYPH_W) & (cy < GLYPH_H)
    return inside & cells[np.minimum(cy, GLYPH_H - 1), np.minimum(cx, GLYPH_W - 1)]


def synth_pattern(spec: PatternSpec, w: int, h: int) -> GrayImage:
    return GrayImage(np.where(ink_map(spec, w, h), 1.0 - spec.ink, 1.0))
