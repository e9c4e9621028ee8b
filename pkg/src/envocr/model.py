"""Convolutional encoder + two-layer attention decoder.

Encoder: conv1-BN-ReLU, conv2-BN-ReLU, pool, conv3-BN-ReLU, conv4-ReLU, pool.
The [C4, H/4, W/4] map is read column by column; each flattened column is
projected to ``attn_dim`` and tagged with a fixed sinusoidal position code.

Decoder: ``max_len`` learned position queries cross-attend over the columns
twice (residual + ReLU after each layer); a shared projection maps every
query state to alphabet logits.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import alphabet
from . import autodiff as ad
from .autodiff import Tensor
from .imagegen.image import GrayImage
from .rng import Rng

MAGIC = b"MLCK"
VERSION = 1


class FormatError(ValueError):
    """A checkpoint file is malformed."""


@dataclass(frozen=True)
class ModelConfig:
    conv_channels: tuple[int, int, int, int] = (16, 32, 48, 64)
    attn_dim: int = 128
    attn_layers: int = 2
    max_len: int = 8
    alphabet_size: int = alphabet.SIZE
    canvas: tuple[int, int] = (32, 160)  # (height, width)

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "canvas", tuple(int(c) for c in self.canvas))
        if len(self.conv_channels) != 4:
            raise ValueError("the encoder has exactly four conv layers")
        if self.attn_layers != 2:
            raise ValueError("the decoder has exactly two attention layers")
        h, w = self.canvas
        if h % 4 or w % 4:
            raise ValueError("canvas extents must be divisible by 4")

    @property
    def n_columns(self) -> int:
        return self.canvas[1] // 4

    @property
    def column_dim(self) -> int:
        return self.conv_channels[3] * (self.canvas[0] // 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["canvas"] = list(self.canvas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# name -> (shape, kind); kind is "weight", "bias", "gamma", "beta", "mean", "var"
# or "query"; dict order is the checkpoint order
def param_layout(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    c = (1,) + cfg.conv_channels
    d = cfg.attn_dim
    layout: dict[str, tuple[tuple[int, ...], str]] = {}
    for i in range(4):
        layout[f"conv{i + 1}.kernel"] = ((c[i + 1], c[i], 3, 3), "weight")
        layout[f"conv{i + 1}.bias"] = ((c[i + 1],), "bias")
    for i in range(3):
        ch = (c[i + 1],)
        layout[f"bn{i + 1}.gamma"] = (ch, "gamma")
        layout[f"bn{i + 1}.beta"] = (ch, "beta")
        layout[f"bn{i + 1}.running_mean"] = (ch, "mean")
        layout[f"bn{i + 1}.running_var"] = (ch, "var")
    layout["colproj.weight"] = ((cfg.column_dim, d), "weight")
    layout["colproj.bias"] = ((d,), "bias")
    for layer in range(1, cfg.attn_layers + 1):
        for role in ("query", "key", "value", "output"):
            layout[f"attn{layer}.{role}"] = ((d, d), "weight")
    layout["pos_queries"] = ((cfg.max_len, d), "query")
    layout["out.weight"] = ((d, cfg.alphabet_size), "weight")
    layout["out.bias"] = ((cfg.alphabet_size,), "bias")
    return layout


ENCODER_PREFIXES = ("conv", "bn", "colproj")
BUFFER_KINDS = ("mean", "var")


def parameter_count(cfg: ModelConfig) -> int:
    """Number of stored values, running statistics included."""
    return sum(math.prod(shape) for shape, _ in param_layout(cfg).values())


def is_encoder(name: str) -> bool:
    return name.startswith(ENCODER_PREFIXES)


class ModelParams:
    """All model values as named tensors, in checkpoint order.

    Running statistics are plain tensors (never differentiated) whose arrays
    batchnorm updates in place during training.
    """

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        layout = param_layout(config)
        if list(arrays) != list(layout):
            raise ValueError("parameter names do not match the model layout")
        self.config = config
        self.tensors: dict[str, Tensor] = {}
        for name, arr in arrays.items():
            shape, kind = layout[name]
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape} != {shape}")
            self.tensors[name] = Tensor(arr, requires_grad=kind not in BUFFER_KINDS, name=name)
        self.kinds = {name: kind for name, (_, kind) in layout.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if self.kinds[n] not in BUFFER_KINDS}

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.tensors.items()}

    def copy(self, dtype=None) -> "ModelParams":
        return ModelParams(
            self.config,
            {n: np.array(t.data, dtype=dtype or t.data.dtype) for n, t in self.tensors.items()},
        )

    def running(self, layer: int) -> ad.RunningStats:
        return ad.RunningStats(
            self.tensors[f"bn{layer}.running_mean"].data, self.tensors[f"bn{layer}.running_var"].data
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.astype("<f4").reshape(-1) for t in self.tensors.values()])

    def to_bytes(self) -> bytes:
        return self.flat().tobytes()

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and self.to_bytes() == other.to_bytes()


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fan-in scaled uniform weights; batchnorm starts as the identity."""
    rng = Rng(seed)
    arrays = {}
    for name, (shape, kind) in param_layout(config).items():
        size = math.prod(shape)
        if kind == "weight":
            fan_in = size // shape[0] if len(shape) == 4 else shape[0]
            # ReLU-followed layers get the He bound, plain projections the LeCun bound
            gain = 6.0 if name.startswith(("conv", "colproj")) else 3.0
            bound = math.sqrt(gain / fan_in)
            arr = (2.0 * rng.uniform_array(size) - 1.0) * bound
        elif kind == "query":
            arr = 2.0 * rng.uniform_array(size) - 1.0
        elif kind in ("gamma", "var"):
            arr = np.ones(size)
        else:
            arr = np.zeros(size)
        arrays[name] = arr.reshape(shape).astype(np.float32)
    return ModelParams(config, arrays)


def position_code(n: int, d: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal code: even dims sin(s / 10000^(i/d)), odd dims cos."""
    pos = np.arange(n)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)[:, : d // 2]
    return pe.astype(dtype)


def _as_batch(images, cfg: ModelConfig, dtype) -> Tensor:
    if isinstance(images, GrayImage):
        images = images.pixels[None, None]
    x = np.asarray(images, dtype=dtype)
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != cfg.canvas:
        raise ad.ShapeError(f"expected images of canvas {cfg.canvas}, got array shape {x.shape}")
    return Tensor(x)


def encode_batch(images, params: ModelParams, mode: str = "infer") -> Tensor:
    """Images [N, 1, H, W] (or [N, H, W]) to column features [N, W/4, attn_dim]."""
    cfg = params.config
    p = params.tensors
    x = _as_batch(images, cfg, p["conv1.kernel"].dtype)
    # channels-last internally: [N, H, W, C]
    h = Tensor(x.data.transpose(0, 2, 3, 1))
    for layer in range(1, 5):
        h = ad.conv2d(h, p[f"conv{layer}.kernel"], p[f"conv{layer}.bias"], layout="NHWC")
        if layer < 4:
            h = ad.batchnorm2d(
                h, p[f"bn{layer}.gamma"], p[f"bn{layer}.beta"], params.running(layer), mode, layout="NHWC"
            )
        h = ad.relu(h)
        if layer in (2, 4):
            h = ad.maxpool2d(h, layout="NHWC")
    n, hh, ww, c = h.shape
    # column x flattens its [C, H/4] block channel-major
    cols = ad.reshape(ad.transpose(h, (0, 2, 3, 1)), (n, ww, c * hh))
    feats = ad.linear(cols, p["colproj.weight"], p["colproj.bias"])
    return ad.add(feats, position_code(ww, cfg.attn_dim, feats.dtype))


def decode_batch(features: Tensor, params: ModelParams, return_weights: bool = False):
    """Column features [N, S, d] to logits [N, max_len, alphabet_size]."""
    cfg = params.config
    p = params.tensors
    if features.shape[-1] != cfg.attn_dim:
        raise ad.ShapeError(f"features width {features.shape[-1]} != {cfg.attn_dim}")
    state = p["pos_queries"]
    weights = []
    for layer in range(1, cfg.attn_layers + 1):
        q = ad.matmul(state, p[f"attn{layer}.query"])
        k = ad.matmul(features, p[f"attn{layer}.key"])
        v = ad.matmul(features, p[f"attn{layer}.value"])
        ctx, w = ad.attention(q, k, v)
        state = ad.relu(ad.add(state, ad.matmul(ctx, p[f"attn{layer}.output"])))
        weights.append(w)
    logits = ad.linear(state, p["out.weight"], p["out.bias"])
    return (logits, weights) if return_weights else logits


def forward(images, params: ModelParams, mode: str = "infer") -> Tensor:
    return decode_batch(encode_batch(images, params, mode), params)


def encode(image: GrayImage, params: ModelParams, mode: str = "infer") -> Tensor:
    """Single image to features [S, attn_dim]."""
    feats = encode_batch(image, params, mode)
    return Tensor(feats.data[0])


def decode(features: Tensor, params: ModelParams) -> Tensor:
    """Features [S, attn_dim] to logits [max_len, alphabet_size]."""
    if features.data.ndim != 2:
        raise ad.ShapeError(f"decode expects [S, d] features, got {features.shape}")
    logits = decode_batch(Tensor(features.data[None]), params)
    return Tensor(logits.data[0])


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def read_logits(logits: np.ndarray) -> tuple[str, list[float]]:
    """Greedy reading of [max_len, A] logits; PAD positions are dropped."""
    probs = probabilities(np.asarray(logits, dtype=np.float64))
    idx = probs.argmax(axis=-1)  # first maximum wins ties
    text, conf = [], []
    for pos, i in enumerate(idx):
        if i == alphabet.PAD_INDEX:
            continue
        text.append(alphabet.CHARS[i])
        conf.append(float(probs[pos, i]))
    return "".join(text), conf


def predict(image: GrayImage, params: ModelParams) -> tuple[str, list[float]]:
    return read_logits(forward(image, params).data[0])


def predict_batch(images, params: ModelParams, batch_size: int = 64) -> list[tuple[str, list[float]]]:
    images = np.asarray(images)
    out = []
    for start in range(0, len(images), batch_size):
        logits = forward(images[start : start + batch_size], params).data
        out.extend(read_logits(row) for row in logits)
    return out


# -- checkpoints -------------------------------------------------------------------

def checkpoint_bytes(params: ModelParams) -> bytes:
    cfg = json.dumps(params.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(cfg)) + cfg + params.to_bytes()


def params_from_bytes(data: bytes) -> ModelParams:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + cfg_len:
        raise FormatError("checkpoint truncated inside the config block")
    try:
        cfg = ModelConfig.from_dict(json.loads(data[12 : 12 + cfg_len]))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad checkpoint config: {exc}") from exc
    payload = data[12 + cfg_len :]
    expected = 4 * parameter_count(cfg)
    if len(payload) != expected:
        raise FormatError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    arrays, offset = {}, 0
    for name, (shape, _) in param_layout(cfg).items():
        size = math.prod(shape)
        arrays[name] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    return ModelParams(cfg, arrays)


def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
