"""Deterministic dataset generation and the on-disk manifest format.

Layout of a dataset directory::

    manifest.jsonl      header line {"config_hash", "schema_version", "config"}
                        then one record per sample
    images/NNNNNN.pgm   8-bit binary PGM per sample
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rng import Rng, splitmix64
from .compose import ComposeParams, compose_sample
from .image import GrayImage, StorageError, read_pgm, write_pgm
from .patterns import PatternSpec, synth_pattern
from .render import render_text

SCHEMA_VERSION = 1
MANIFEST = "manifest.jsonl"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class DatasetConfig:
    wordlist: tuple[str, ...]
    n_samples: int
    split_fraction: float = 0.8
    canvas: tuple[int, int] = (160, 32)
    patterns: tuple[PatternSpec, ...] = ()
    compose: ComposeParams = field(default_factory=ComposeParams)
    seed: int = 0
    # random pattern offset per sample; the envelope sits anywhere over the letter
    random_phase: bool = True

    def __post_init__(self):
        object.__setattr__(self, "wordlist", tuple(self.wordlist))
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(self, "canvas", tuple(int(v) for v in self.canvas))
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.wordlist:
            raise ValueError("wordlist is empty")

    def to_dict(self) -> dict:
        return {
            "wordlist": list(self.wordlist),
            "n_samples": self.n_samples,
            "split_fraction": self.split_fraction,
            "canvas": list(self.canvas),
            "patterns": [p.to_dict() for p in self.patterns],
            "compose": self.compose.to_dict(),
            "seed": self.seed,
            "random_phase": self.random_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        d["patterns"] = tuple(PatternSpec.from_dict(p) for p in d.get("patterns", ()))
        d["compose"] = ComposeParams(**d.get("compose", {}))
        return cls(**d)

    def config_hash(self) -> str:
        return f"{fnv1a64(canonical_json(self.to_dict()).encode()):016x}"


@dataclass(frozen=True)
class SampleRecord:
    id: int
    label: str
    pattern_id: int | str
    split: str
    image_path: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "pattern_id": self.pattern_id,
            "split": self.split,
            "image_path": self.image_path,
        }


def image_path(i: int) -> str:
    return f"images/{i:06d}.pgm"


def make_sample(config: DatasetConfig, i: int) -> tuple[SampleRecord, GrayImage]:
    """Sample ``i`` of ``config``; depends only on (config, i)."""
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
    image = compose_sample(text, pattern, config.compose, rng.next_u64())
    return SampleRecord(i, label, pattern_id, split, image_path(i)), image


def _make_sample_star(args):
    return make_sample(*args)


def generate_samples(config: DatasetConfig, workers: int = 1):
    jobs = [(config, i) for i in range(config.n_samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_make_sample_star, jobs, chunksize=32))
    return [make_sample(config, i) for i in range(config.n_samples)]


def manifest_header(config: DatasetConfig) -> dict:
    return {
        "config_hash": config.config_hash(),
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
    }


def write_dataset(header: dict, samples, out_dir: str | os.PathLike) -> list[SampleRecord]:
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        records = []
        with open(out / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical_json(header) + "\n")
            for record, image in samples:
                write_pgm(image, out / record.image_path)
                fh.write(canonical_json(record.to_dict()) + "\n")
                records.append(record)
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {out}: {exc}") from exc
    return records


def generate_dataset(config: DatasetConfig, out_dir: str | os.PathLike, workers: int = 1) -> list[SampleRecord]:
    """Write the images and manifest for ``config``; returns the records."""
    return write_dataset(manifest_header(config), generate_samples(config, workers), out_dir)


@dataclass
class Dataset:
    root: Path
    header: dict
    records: list[SampleRecord]

    def select(self, split: str | None = None) -> list[SampleRecord]:
        return [r for r in self.records if split is None or r.split == split]

    def load_image(self, record: SampleRecord) -> GrayImage:
        return read_pgm(self.root / record.image_path)

    def arrays(self, split: str | None = None) -> tuple[np.ndarray, list[str]]:
        """Images stacked as float32 [N, 1, H, W] plus their labels."""
        recs = self.select(split)
        if not recs:
            return np.zeros((0, 1, 0, 0), dtype=np.float32), []
        imgs = np.stack([self.load_image(r).pixels for r in recs]).astype(np.float32)
        return imgs[:, None], [r.label for r in recs]


def load_dataset(root: str | os.PathLike) -> Dataset:
    root = Path(root)
    with open(root / MANIFEST, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "schema_version" not in lines[0]:
        raise ValueError(f"{root / MANIFEST} has no header line")
    records = [SampleRecord(**rec) for rec in lines[1:]]
    return Dataset(root, lines[0], records)
