from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class StorageError(OSError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance grid in [0, 1]; 0 is full ink, 1 is white paper.

    ``pixels`` is a read-only float64 array of shape (height, width).
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ShapeError(f"expected a 2-D pixel grid, got shape {px.shape}")
        if px.size and (np.isnan(px).any() or px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def blank(cls, width: int, height: int, value: float = 1.0) -> "GrayImage":
        return cls(np.full((height, width), value))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    def to_bytes(self) -> bytes:
        return quantize(self.pixels).tobytes()


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Luminance to 8-bit: round(v * 255), half away from zero."""
    return np.floor(np.asarray(pixels) * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(image: GrayImage) -> bytes:
    header = b"P5\n%d %d\n255\n" % (image.width, image.height)
    return header + image.to_bytes()


def decode_pgm(data: bytes) -> GrayImage:
    # header: magic, width, height, maxval separated by whitespace, comments allowed
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1
    body = data[pos : pos + width * height]
    if len(body) != width * height:
        raise ValueError("truncated PGM pixel data")
    px = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return GrayImage(px / 255.0)


def write_pgm(image: GrayImage, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(encode_pgm(image))
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_pgm(path: str | os.PathLike) -> GrayImage:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
