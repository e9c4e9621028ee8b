"""Word rendering, security patterns, envelope compositing and datasets."""
from .compose import ComposeParams, compose_sample
from .dataset import (
    Dataset,
    DatasetConfig,
    SampleRecord,
    generate_dataset,
    load_dataset,
    make_sample,
)
from .image import GrayImage, ShapeError, StorageError, read_pgm, write_pgm
from .patterns import STANDARD_PATTERNS, PatternSpec, synth_pattern
from .render import CapacityError, render_text

__all__ = [
    "CapacityError",
    "ComposeParams",
    "Dataset",
    "DatasetConfig",
    "GrayImage",
    "PatternSpec",
    "STANDARD_PATTERNS",
    "SampleRecord",
    "ShapeError",
    "StorageError",
    "compose_sample",
    "generate_dataset",
    "load_dataset",
    "make_sample",
    "read_pgm",
    "render_text",
    "synth_pattern",
    "write_pgm",
]
