from __future__ import annotations

import numpy as np

from ..alphabet import check_word
from .font import ADVANCE, GAP, GLYPH_H, GLYPH_W, glyph
from .image import GrayImage

SCALE = 4


class CapacityError(ValueError):
    """The label does not fit on the canvas."""


def text_width(n_chars: int, scale: int = SCALE) -> int:
    """Inked extent of ``n_chars`` glyphs, without the trailing gap."""
    if n_chars == 0:
        return 0
    return (n_chars * ADVANCE - GAP) * scale


def max_chars(canvas_w: int, scale: int = SCALE) -> int:
    return (canvas_w // scale + GAP) // ADVANCE


def render_text(label: str, canvas_w: int, canvas_h: int, scale: int = SCALE) -> GrayImage:
    """Draw ``label`` left-aligned and vertically centred in black on white."""
    check_word(label)
    if GLYPH_H * scale > canvas_h or text_width(len(label), scale) > canvas_w:
        raise CapacityError(
            f"label {label!r} needs {text_width(len(label), scale)}x{GLYPH_H * scale} px, "
            f"canvas is {canvas_w}x{canvas_h}"
        )
    px = np.ones((canvas_h, canvas_w))
    top = (canvas_h - GLYPH_H * scale) // 2
    cell = np.ones((scale, scale), dtype=bool)
    for i, ch in enumerate(label):
        left = i * ADVANCE * scale
        ink = np.kron(glyph(ch), cell)
        px[top : top + GLYPH_H * scale, left : left + GLYPH_W * scale][ink] = 0.0
    return GrayImage(px)
