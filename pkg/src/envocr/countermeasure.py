"""Content-aware shader: fill the blank paper with ink blocks so that the
strokes and the background carry the same ink density.

The shader is laid out for the page (``jitter = (0, 0)``) and then shifted by
``jitter`` to model the letter moving inside the envelope.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .imagegen.compose import ComposeParams, compose_sample
from .imagegen.dataset import (
    DatasetConfig,
    SampleRecord,
    image_path,
    load_dataset,
    manifest_header,
    write_dataset,
)
from .imagegen.image import GrayImage, ShapeError
from .imagegen.patterns import synth_pattern
from .imagegen.render import render_text
from .rng import MASK64, Rng, splitmix64


@dataclass(frozen=True)
class ShaderParams:
    ink_threshold: float = 0.5
    dilation_radius: int = 2
    block: int = 4
    # None: match the ink density measured inside the dilated strokes
    target_density: float | None = None
    jitter: tuple[int, int] = (0, 0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "jitter", tuple(int(v) for v in self.jitter))
        if self.block < 1:
            raise ValueError("block must be >= 1")
        if self.dilation_radius < 0:
            raise ValueError("dilation_radius must be >= 0")
        if self.target_density is not None and not 0.0 <= self.target_density <= 1.0:
            raise ValueError("target_density must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jitter"] = list(self.jitter)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShaderParams":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a (2r+1)x(2r+1) square, done as two 1-D passes."""
    out = bits.copy()
    for axis in (0, 1):
        src = out
        out = src.copy()
        n = src.shape[axis]
        for shift in range(1, radius + 1):
            if shift >= n:
                break
            lo = [slice(None)] * 2
            hi = [slice(None)] * 2
            lo[axis], hi[axis] = slice(shift, None), slice(None, n - shift)
            out[tuple(lo)] |= src[tuple(hi)]
            out[tuple(hi)] |= src[tuple(lo)]
    return out


def content_mask(text: GrayImage, p: ShaderParams) -> BinaryMask:
    return BinaryMask(dilate(text.pixels < p.ink_threshold, p.dilation_radius))


def stroke_density(text: GrayImage, mask: BinaryMask, p: ShaderParams) -> float:
    """Fraction of mask pixels that are ink."""
    inside = mask.bits.sum()
    if inside == 0:
        return 0.0
    return float((text.pixels[mask.bits] < p.ink_threshold).sum() / inside)


def _cell_seed(seed: int, cx: int, cy: int) -> int:
    return splitmix64(seed ^ splitmix64((cx & 0xFFFFFFFF) << 32 | (cy & 0xFFFFFFFF))) & MASK64


def _page_layer(mask: np.ndarray, p: ShaderParams, density: float) -> np.ndarray:
    """Boolean block layer over the page, never touching the mask.

    Cells are visited in raster order and each takes one uniform draw. A
    cell's stamp probability is the target plus the running ink deficit
    spread over its free pixels, which keeps the realised density within
    about one block of the target on every page.
    """
    h, w = mask.shape
    b = p.block
    rng = Rng(p.seed)
    layer = np.zeros_like(mask)
    deficit = 0.0
    for y0 in range(0, h, b):
        for x0 in range(0, w, b):
            u = rng.uniform()
            free = ~mask[y0 : y0 + b, x0 : x0 + b]
            area = int(free.sum())
            if area == 0:
                continue
            prob = min(max(density + deficit / area, 0.0), 1.0)
            deficit += density * area
            if u < prob:
                layer[y0 : y0 + b, x0 : x0 + b] = free
                deficit -= area
    return layer


def generate_shader(mask: BinaryMask, p: ShaderParams) -> GrayImage:
    if p.target_density is None:
        raise ValueError("target_density is unset; use matched_params() or set it explicitly")
    h, w = mask.bits.shape
    b = p.block
    dx, dy = p.jitter
    page = _page_layer(mask.bits, p, p.target_density)
    # blocks beyond the page edge come into view when the page shifts
    margin = math.ceil(max(abs(dx), abs(dy)) / b) * b
    if margin:
        ext = np.zeros((h + 2 * margin, w + 2 * margin), dtype=bool)
        ext[margin : margin + h, margin : margin + w] = page
        cells_y = range(-margin // b, math.ceil((h + margin) / b))
        cells_x = range(-margin // b, math.ceil((w + margin) / b))
        for cy in cells_y:
            for cx in cells_x:
                y0, x0 = cy * b, cx * b
                if 0 <= y0 < h and 0 <= x0 < w:
                    continue
                if Rng(_cell_seed(p.seed, cx, cy)).uniform() < p.target_density:
                    ys = slice(max(y0 + margin, 0), max(y0 + b + margin, 0))
                    xs = slice(max(x0 + margin, 0), max(x0 + b + margin, 0))
                    ext[ys, xs] = True
        page = ext[margin - dy : margin - dy + h, margin - dx : margin - dx + w]
    return GrayImage(np.where(page, 0.0, 1.0))


def matched_params(text: GrayImage, p: ShaderParams) -> tuple[BinaryMask, ShaderParams]:
    """Mask of ``text`` and ``p`` with target_density filled in if unset."""
    mask = content_mask(text, p)
    if p.target_density is None:
        p = replace(p, target_density=stroke_density(text, mask, p))
    return mask, p


def shade(text: GrayImage, p: ShaderParams) -> GrayImage:
    """Text with its shader printed over it (darkest wins)."""
    mask, p = matched_params(text, p)
    return GrayImage(np.minimum(text.pixels, generate_shader(mask, p).pixels))


def apply_countermeasure(
    text: GrayImage, pattern: GrayImage, shader: GrayImage, p: ComposeParams, seed: int
) -> GrayImage:
    if not text.shape == pattern.shape == shader.shape:
        raise ShapeError(f"text {text.shape}, pattern {pattern.shape}, shader {shader.shape} differ")
    inked = GrayImage(np.minimum(text.pixels, shader.pixels))
    return compose_sample(inked, pattern, p, seed)


def density_gap(inked: GrayImage, mask: BinaryMask, threshold: float = 0.5) -> float:
    """Relative gap |d_in - d_out| / d_in between ink fractions inside and
    outside the content mask."""
    ink = inked.pixels < threshold
    inside, outside = mask.bits, ~mask.bits
    if not inside.any() or not outside.any():
        return 0.0
    d_in = ink[inside].mean()
    d_out = ink[outside].mean()
    return float(abs(d_in - d_out) / d_in) if d_in > 0 else float(d_out > 0)


# -- dataset mirror ----------------------------------------------------------------

def make_shaded_sample(config: DatasetConfig, i: int, shader: ShaderParams):
    """Sample ``i`` of ``config`` with a shader printed under the envelope.

    Replays the draws of :func:`make_sample`, so label, split, pattern,
    phase and noise match the plain sample. Returns (record, image, gap)
    where ``gap`` is the density gap of the inked page.
    """
    rng = Rng(splitmix64(config.seed ^ i))
    label = config.wordlist[rng.randint(len(config.wordlist))]
    split = "train" if rng.uniform() < config.split_fraction else "eval"
    w, h = config.canvas
    text = render_text(label, w, h)
    if config.patterns:
        spec = config.patterns[rng.randint(len(config.patterns))]
        if config.random_phase:
            spec = spec.shifted(rng.randint(spec.period), rng.randint(spec.period))
        pattern = synth_pattern(spec, w, h)
        pattern_id: int | str = spec.pattern_id
    else:
        pattern = GrayImage.blank(w, h)
        pattern_id = "none"
    noise_seed = rng.next_u64()
    mask, sp = matched_params(text, replace(shader, seed=splitmix64(shader.seed ^ i)))
    layer = generate_shader(mask, sp)
    image = apply_countermeasure(text, pattern, layer, config.compose, noise_seed)
    aligned = generate_shader(mask, replace(sp, jitter=(0, 0)))
    gap = density_gap(GrayImage(np.minimum(text.pixels, aligned.pixels)), mask, sp.ink_threshold)
    return SampleRecord(i, label, pattern_id, split, image_path(i)), image, gap


def shaded_samples(config: DatasetConfig, shader: ShaderParams):
    return [make_shaded_sample(config, i, shader) for i in range(config.n_samples)]


def countermeasure_dataset(in_dir: str | os.PathLike, out_dir: str | os.PathLike, shader: ShaderParams) -> list[float]:
    """Write the shader-augmented mirror of a generated dataset.

    Returns the per-sample density gaps.
    """
    src = load_dataset(in_dir)
    config = DatasetConfig.from_dict(src.header["config"])
    samples = shaded_samples(config, shader)
    header = manifest_header(config)
    header["countermeasure"] = shader.to_dict()
    write_dataset(header, ((rec, img) for rec, img, _ in samples), Path(out_dir))
    return [gap for _, _, gap in samples]
