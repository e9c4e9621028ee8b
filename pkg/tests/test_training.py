import math

import numpy as np
import pytest

from envocr import autodiff as ad
from envocr.imagegen import render_text
from envocr.model import ModelConfig, init_params, is_encoder
from envocr.training import (
    TINY_CONFIG,
    AdamState,
    DataError,
    TrainConfig,
    TrainLog,
    adam_step,
    batch_order,
    cross_entropy_loss,
    gradient_check,
    gradient_probes,
    label_targets,
    train_loop,
)

# narrow model on the standard canvas keeps these runs fast
SMALL = ModelConfig(conv_channels=(4, 8, 8, 8), attn_dim=16, max_len=4, canvas=(32, 160))


def word_data(words, n_eval=0):
    imgs = np.stack([render_text(w, 160, 32).pixels for w in words]).astype(np.float32)[:, None]
    return {"train": (imgs, list(words)), "eval": (imgs[:n_eval], list(words[:n_eval]))}


def test_loss_hand_example():
    logits = np.array([[[1.0, 2.0, 0.5], [0.0, 0.0, 3.0]]])
    targets = np.array([[1, 0]])
    # -log softmax picked at (pos 0, idx 1) and (pos 1, idx 0), averaged
    l0 = -(2.0 - math.log(math.exp(1.0) + math.exp(2.0) + math.exp(0.5)))
    l1 = -(0.0 - math.log(2.0 + math.exp(3.0)))
    assert cross_entropy_loss(ad.Tensor(logits), targets).item() == pytest.approx((l0 + l1) / 2, abs=1e-12)


def test_uniform_loss_is_log_alphabet():
    value = cross_entropy_loss(ad.Tensor(np.zeros((3, 8, 37))), np.full((3, 8), 36)).item()
    assert abs(value - math.log(37)) < 1e-6


def test_label_targets_pad():
    assert label_targets(["AB", ""], 3).tolist() == [[0, 1, 36], [36, 36, 36]]


def hand_adam(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, x=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return x


def test_adam_five_step_trace():
    grads = [0.5, -1.2, 3.0, 0.0, -0.1]
    params = {"x": np.array([0.25])}
    state = AdamState()
    cfg = TrainConfig(learning_rate=0.01)
    for g in grads:
        adam_step(params, {"x": np.array([g])}, state, cfg)
    assert state.t == 5
    assert abs(params["x"][0] - hand_adam(grads, lr=0.01, x=0.25)) < 1e-6


def test_adam_first_step_and_zero_grads():
    params = {"w": np.array([1.0, 1.0])}
    state = AdamState()
    adam_step(params, {"w": np.array([3.0, -0.01])}, state, TrainConfig())
    assert np.allclose(params["w"], [1 - 1e-3, 1 + 1e-3], atol=1e-8)
    frozen = {"w": np.array([2.0])}
    adam_step(frozen, {"w": np.zeros(1)}, AdamState(), TrainConfig())
    assert frozen["w"][0] == 2.0
    with pytest.raises(ad.ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state, TrainConfig())
    assert state.m["w"].shape == params["w"].shape


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(freeze_policy="decoder")
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_batch_order_is_shuffled_epochs():
    gen = batch_order(7, 3)
    first = [next(gen) for _ in range(14)]
    assert sorted(first[:7]) == list(range(7)) and sorted(first[7:]) == list(range(7))
    assert first[:7] != list(range(7))
    again = batch_order(7, 3)
    assert [next(again) for _ in range(14)] == first


def test_tiny_run_lowers_loss_and_is_reproducible():
    words = ["AB", "C", "DE", "F1", "G", "HI", "J2", "K"] * 6 + ["LM", "N"]
    data = word_data(words, n_eval=4)
    cfg = TrainConfig(batch_size=4, iterations=200, eval_every=100, learning_rate=3e-3)
    a = train_loop(data, cfg, 0, SMALL)
    first = np.mean(a.log.losses[:10])
    last = np.mean(a.log.losses[-10:])
    assert last < first
    b = train_loop(data, cfg, 0, SMALL)
    assert a.params.equals(b.params)
    assert a.log.losses == b.log.losses
    its = [row[0] for row in a.log.rows]
    assert its == [100, 200]
    assert a.log.to_csv().splitlines()[0] == "iteration,loss,char_acc"


def test_start_checkpoint_is_not_modified():
    base = init_params(SMALL, 1)
    snapshot = base.to_bytes()
    train_loop(word_data(["AB", "CD"]), TrainConfig(batch_size=2, iterations=3), base)
    assert base.to_bytes() == snapshot


def test_encoder_frozen_keeps_encoder_bytes():
    base = init_params(SMALL, 2)
    data = word_data(["AB", "CD", "EF", "GH"])
    tuned = train_loop(data, TrainConfig(batch_size=2, iterations=5, freeze_policy="encoder-frozen"), base).params
    for name, tensor in base.tensors.items():
        same = tensor.data.tobytes() == tuned[name].data.tobytes()
        assert same == is_encoder(name), name
    with pytest.raises(ValueError):
        train_loop(data, TrainConfig(iterations=1, freeze_policy="encoder-frozen"), 0, SMALL)


def test_empty_training_split():
    data = {"train": (np.zeros((0, 1, 32, 160), np.float32), []), "eval": (np.zeros((0, 1, 32, 160), np.float32), [])}
    with pytest.raises(DataError):
        train_loop(data, TrainConfig(iterations=1), 0, SMALL)


def test_trains_from_a_dataset_directory(tmp_path):
    from envocr.imagegen import DatasetConfig, generate_dataset, load_dataset

    generate_dataset(DatasetConfig(["AB", "CD", "EF"], 12, 0.5, seed=1), tmp_path)
    result = train_loop(load_dataset(tmp_path), TrainConfig(batch_size=2, iterations=2, eval_every=1), 0, SMALL)
    assert len(result.log.rows) == 2


def test_gradient_check_tiny_config():
    for seed in range(3):
        assert gradient_check(TINY_CONFIG, seed, 10) < 1e-3


def test_gradient_probes_deterministic_and_counted():
    a = gradient_probes(seed=4, n_probes=5)
    b = gradient_probes(seed=4, n_probes=5)
    assert len(a) == 5
    assert [(p.name, p.index) for p in a] == [(p.name, p.index) for p in b]
    with pytest.raises(ValueError):
        gradient_probes(n_probes=0)


def test_train_log_csv_round_trip():
    log = TrainLog([(1, 0.5, 0.25), (2, 0.125, 1.0)])
    lines = log.to_csv().splitlines()
    assert lines[1:] == ["1,0.5,0.25", "2,0.125,1.0"]
