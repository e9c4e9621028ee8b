from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..rng import Rng
from .image import GrayImage, ShapeError


@dataclass(frozen=True)
class ComposeParams:
    """Envelope stacking: pattern opacity, paper transparency, camera noise."""

    alpha: float = 0.6
    beta: float = 0.7
    sigma: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def stack(text: np.ndarray, pattern: np.ndarray, alpha: float) -> np.ndarray:
    return np.minimum(text, 1.0 - alpha * (1.0 - pattern))


def compose_sample(text: GrayImage, pattern: GrayImage, p: ComposeParams, seed: int) -> GrayImage:
    if text.shape != pattern.shape:
        raise ShapeError(f"text {text.shape} and pattern {pattern.shape} differ in size")
    stacked = stack(text.pixels, pattern.pixels, p.alpha)
    # written as beta*s + (1-beta)/2 so beta = 1 is exact
    out = p.beta * stacked + 0.5 * (1.0 - p.beta)
    if p.sigma > 0.0:
        noise = Rng(seed).gaussian_array(out.size).reshape(out.shape)
        out = out + p.sigma * noise
    return GrayImage(np.clip(out, 0.0, 1.0))
