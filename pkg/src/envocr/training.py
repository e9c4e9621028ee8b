"""Cross-entropy training with Adam, encoder freezing and gradient checks."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import alphabet
from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .imagegen.dataset import Dataset
from .metrics import mean_char_accuracy
from .model import (
    ModelConfig,
    ModelParams,
    decode_batch,
    encode_batch,
    init_params,
    is_encoder,
    predict_batch,
)
from .rng import Rng, splitmix64

log = logging.getLogger(__name__)

FREEZE_POLICIES = ("none", "encoder-frozen")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    iterations: int = 3000
    seed: int = 0
    freeze_policy: str = "none"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 500
    # held-out samples scored at each evaluation
    eval_samples: int = 200

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)
    # loss of every iteration, in order
    losses: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "loss", "char_acc"])
        for it, loss, acc in self.rows:
            writer.writerow([it, repr(loss), repr(acc)])
        return buf.getvalue()


class TrainResult(NamedTuple):
    params: ModelParams
    log: TrainLog


def cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean -log softmax at the target over batch and positions, PAD included."""
    return ad.cross_entropy(logits, targets)


def label_targets(labels: Sequence[str], max_len: int) -> np.ndarray:
    return np.array([alphabet.encode_label(w, max_len) for w in labels], dtype=np.int64)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place, for every name in ``grads``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
    return params, state


def _as_arrays(data, split: str):
    if isinstance(data, Dataset):
        return data.arrays(split)
    images, labels = data[split]
    return np.asarray(images, dtype=np.float32), list(labels)


def batch_order(n: int, seed: int):
    """Endless stream of indices: consecutive SplitMix64-shuffled epochs."""
    rng = Rng(splitmix64(seed))
    while True:
        yield from rng.permutation(n)


def evaluate(params: ModelParams, images: np.ndarray, labels: Sequence[str]) -> float:
    if len(labels) == 0:
        return math.nan
    preds = predict_batch(images, params)
    return mean_char_accuracy((p, t) for (p, _), t in zip(preds, labels))


def train_loop(
    data,
    config: TrainConfig,
    start: int | ModelParams,
    model_config: ModelConfig | None = None,
) -> TrainResult:
    """Train on the ``train`` split of ``data``; score the ``eval`` split.

    ``data`` is a :class:`Dataset` or a mapping ``{"train": (images, labels),
    "eval": (images, labels)}``. ``start`` is an init seed or a base
    checkpoint, which is copied, never modified.
    """
    if isinstance(start, ModelParams):
        params = start.copy()
    else:
        if config.freeze_policy == "encoder-frozen":
            raise ValueError("encoder-frozen fine-tuning needs a base checkpoint")
        params = init_params(model_config or ModelConfig(), start)
    cfg = params.config
    images, labels = _as_arrays(data, "train")
    if len(labels) == 0:
        raise DataError("training split is empty")
    eval_images, eval_labels = _as_arrays(data, "eval")
    eval_images, eval_labels = eval_images[: config.eval_samples], eval_labels[: config.eval_samples]
    targets = label_targets(labels, cfg.max_len)

    frozen = config.freeze_policy == "encoder-frozen"
    trainable = {n: t for n, t in params.trainable().items() if not (frozen and is_encoder(n))}
    for name, tensor in params.tensors.items():
        tensor.requires_grad = name in trainable
    features = None
    if frozen:
        # the frozen encoder is a fixed function; run it once per sample
        features = np.concatenate(
            [encode_batch(images[s : s + 64], params, "infer").data for s in range(0, len(images), 64)]
        )

    state = AdamState()
    train_log = TrainLog()
    order = batch_order(len(labels), config.seed)
    window: list[float] = []
    arrays = {n: t.data for n, t in trainable.items()}
    for it in range(1, config.iterations + 1):
        idx = np.fromiter((next(order) for _ in range(config.batch_size)), dtype=np.int64)
        with ad.Tape() as tape:
            if frozen:
                logits = decode_batch(Tensor(features[idx]), params)
            else:
                logits = decode_batch(encode_batch(images[idx], params, "train"), params)
            loss = cross_entropy_loss(logits, targets[idx])
        grads = ad.backward(loss, tape)
        adam_step(arrays, {n: grads[t] for n, t in trainable.items() if t in grads}, state, config)
        value = loss.item()
        train_log.losses.append(value)
        window.append(value)
        if it % config.eval_every == 0 or it == config.iterations:
            acc = evaluate(params, eval_images, eval_labels)
            train_log.rows.append((it, float(np.mean(window)), acc))
            log.info("iter %d loss %.4f held-out char acc %.4f", it, np.mean(window), acc)
            window = []
    for name, tensor in params.tensors.items():
        tensor.requires_grad = params.kinds[name] not in ("mean", "var")
    return TrainResult(params, train_log)


# -- gradient verification ------------------------------------------------------

TINY_CONFIG = ModelConfig(conv_channels=(2, 3, 3, 4), max_len=3, canvas=(8, 16))


class Probe(NamedTuple):
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


def coordinate_stream(params: ModelParams, seed: int):
    """Endless (tensor, index) draws: tensor uniform over trainables, then index uniform."""
    rng = Rng(splitmix64(seed ^ 0x5052_4F42))
    names = list(params.trainable())
    while True:
        name = names[rng.randint(len(names))]
        shape = params[name].shape
        flat = rng.randint(math.prod(shape))
        yield name, tuple(int(i) for i in np.unravel_index(flat, shape))


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_probes(
    config: ModelConfig | None = None, seed: int = 0, n_probes: int = 10, h: float = 1e-3
) -> list[Probe]:
    """Compare analytic and central-difference gradients at ``n_probes`` coordinates.

    Runs in float64 on a tiny random batch. A coordinate whose +-h
    perturbation flips any ReLU or max-pool branch is not differentiable
    over the stencil, so it is replaced by the next draw.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    cfg = config or TINY_CONFIG
    rng = Rng(seed)
    params = init_params(cfg, rng.next_u64()).copy(np.float64)
    # move biases, BN affine terms and weights off their init values
    for t in params.trainable().values():
        t.data += 0.1 * (2.0 * rng.uniform_array(t.data.size).reshape(t.shape) - 1.0)
    batch = 2
    h_px, w_px = cfg.canvas
    images = rng.uniform_array(batch * h_px * w_px).reshape(batch, 1, h_px, w_px)
    targets = np.array([[rng.randint(cfg.alphabet_size) for _ in range(cfg.max_len)] for _ in range(batch)])

    def evaluate_loss():
        with ad.Tape() as tape:
            loss = cross_entropy_loss(decode_batch(encode_batch(images, params, "train"), params), targets)
        return loss, tape

    loss, tape = evaluate_loss()
    base = tape.branches()
    grads = ad.backward(loss, tape)
    probes: list[Probe] = []
    for name, index in coordinate_stream(params, seed):
        tensor = params[name]
        original = tensor.data[index]
        tensor.data[index] = original + h
        up, up_tape = evaluate_loss()
        tensor.data[index] = original - h
        down, down_tape = evaluate_loss()
        tensor.data[index] = original
        if not (_same_branches(base, up_tape.branches()) and _same_branches(base, down_tape.branches())):
            continue
        analytic = float(grads[tensor][index])
        numeric = (up.item() - down.item()) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        probes.append(Probe(name, index, analytic, numeric, rel))
        if len(probes) == n_probes:
            return probes


def gradient_check(config: ModelConfig | None = None, seed: int = 0, n_probes: int = 10) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    return max(p.rel_error for p in gradient_probes(config, seed, n_probes))
