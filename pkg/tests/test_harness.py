import csv
import io
import xml.etree.ElementTree as ET
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from envocr.autodiff import ContractError
from envocr.harness import (
    GAP,
    REPORT_HEADER,
    ConfigError,
    EvalReport,
    ExperimentConfig,
    ReportRow,
    align,
    confusion_counts,
    correction_study,
    corrupt,
    derive_seed,
    desk_wordlist,
    emit_report,
    gate_study,
    parse_report_csv,
    report_csv,
    run_experiment,
)
from envocr.imagegen import StorageError
from envocr.lexicon import build_lexicon, bundled, edit_distance
from envocr.metrics import char_accuracy, mean_char_accuracy, word_accuracy
from envocr.model import ModelConfig
from envocr.rng import Rng
from envocr.training import TrainConfig

word = st.text(alphabet="ABCDE", max_size=7)


def quick_config(**kw):
    base = dict(
        wordlist=("CAT", "DOG", "W2", "MAIL", "BANK", "TAX"),
        n_pretrain=24,
        n_finetune=12,
        n_test=6,
        model=ModelConfig(conv_channels=(2, 4, 4, 4), attn_dim=8, max_len=6),
        pretrain=TrainConfig(batch_size=4, iterations=2, eval_every=1),
        finetune=TrainConfig(batch_size=4, iterations=2, eval_every=1),
    )
    base.update(kw)
    return ExperimentConfig(**base)


# -- metrics -------------------------------------------------------------------------

def test_char_accuracy_examples():
    assert char_accuracy("HELLO", "HELLO") == 1.0
    assert char_accuracy("", "HELLO") == 0.0
    assert char_accuracy("HELO", "HELLO") == pytest.approx(0.8)
    with pytest.raises(ContractError):
        char_accuracy("A", "")


@given(word, st.text(alphabet="ABCDE", min_size=1, max_size=7))
def test_char_accuracy_range_and_symmetry(a, b):
    acc = char_accuracy(a, b)
    assert 0.0 <= acc <= 1.0
    if a:
        assert acc == char_accuracy(b, a)


def test_word_accuracy_examples():
    assert word_accuracy([("A", "A"), ("B", "B")]) == 1.0
    assert word_accuracy([("A", "B"), ("B", "C")]) == 0.0
    assert word_accuracy([("A", "A"), ("B", "B"), ("C", "C"), ("D", "X")]) == 0.75
    with pytest.raises(ContractError):
        word_accuracy([])
    with pytest.raises(ContractError):
        mean_char_accuracy([])


@given(word, word)
def test_alignment_cost_is_edit_distance(pred, truth):
    pairs = align(pred, truth)
    assert "".join(t for t, _ in pairs if t != GAP) == truth
    assert "".join(p for _, p in pairs if p != GAP) == pred
    assert sum(t != p for t, p in pairs) == edit_distance(pred, truth)


def test_confusion_counts():
    counts = confusion_counts([("HELO", "HELLO"), ("CAT", "CUT")])
    assert counts[("L", GAP)] == 1
    assert counts[("U", "A")] == 1
    assert counts[("C", "C")] == 1


# -- config ------------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        quick_config(test_patterns=())
    with pytest.raises(ConfigError):
        quick_config(test_patterns=(4,))
    with pytest.raises(ConfigError):
        quick_config(corrections=("spell",))
    with pytest.raises(ConfigError):
        quick_config(countermeasure=("on",))
    with pytest.raises(ConfigError):
        quick_config(freeze_policies=("decoder",))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seeds": 1})


def test_config_dict_round_trip():
    cfg = quick_config(countermeasure=("off", 2), baseline=True, freeze_policies=("none", "encoder-frozen"))
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    # partial train configs fill in from the defaults
    partial = ExperimentConfig.from_dict({"finetune": {"iterations": 10}})
    assert partial.finetune.batch_size == ExperimentConfig().finetune.batch_size


def test_derived_seeds_differ():
    seeds = {derive_seed(0, tag) for tag in ("init", "pretrain-data", "finetune-data", "test-data-1")}
    assert len(seeds) == 4
    assert derive_seed(1, "init") != derive_seed(0, "init")


def test_desk_wordlist():
    words = desk_wordlist()
    assert words == desk_wordlist()
    assert all(1 <= len(w) <= 6 for w in words)
    assert any(ch.isdigit() for w in words for ch in w)
    assert "REFUND" in words and "THE" in words
    assert len(set(words)) == len(words)


def test_missing_base_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment(quick_config(base_checkpoint=str(tmp_path / "nope.ckpt")))


# -- running -------------------------------------------------------------------------------

def test_three_by_three_matrix_and_determinism():
    cfg = quick_config()
    a = run_experiment(cfg)
    assert len(a.rows) == 9
    assert [(r.test_pattern, r.correction) for r in a.rows[:3]] == [("1", "none"), ("1", "general"), ("1", "domain")]
    assert all(0.0 <= r.char_acc <= 1.0 and 0.0 <= r.word_acc <= 1.0 and r.n == 6 for r in a.rows)
    b = run_experiment(cfg)
    assert report_csv(a) == report_csv(b)


def test_full_matrix_shape(tmp_path):
    cfg = quick_config(
        countermeasure=("off", 0, 4),
        baseline=True,
        freeze_policies=("none", "encoder-frozen"),
        out_dir=str(tmp_path),
    )
    report = run_experiment(cfg)
    # 2 policies x 3 patterns x 3 corrections x 3 countermeasure settings + 3 baseline rows
    assert len(report.rows) == 2 * 3 * 3 * 3 + 3
    assert {r.train_pattern for r in report.rows} == {"1", "1/frozen", "none"}
    assert {r.countermeasure for r in report.rows} == {"off", "jitter0", "jitter4"}
    for name in ("report.csv", "confusion.csv", "report.svg", "base.ckpt", "tuned.ckpt", "tuned_frozen.ckpt", "experiment.json"):
        assert (tmp_path / name).exists(), name
    # reuse the saved clean model
    again = run_experiment(quick_config(base_checkpoint=str(tmp_path / "base.ckpt")))
    assert len(again.rows) == 9


def sample_report():
    report = EvalReport()
    report.rows = [
        ReportRow("1", "1", "none", "off", 0.1 + 0.2, 1 / 3, 200, 7),
        ReportRow("1", "2", "domain", "jitter2", 0.0, 0.0, 200, 7),
        ReportRow("none", "3", "none", "off", 1.0, 1.0, 200, 7),
    ]
    report.confusion = {r[:4]: Counter({("A", "B"): 2, ("C", GAP): 1}) for r in report.rows}
    return report


def test_emit_report_files(tmp_path):
    report = sample_report()
    emit_report(report, tmp_path)
    text = (tmp_path / "report.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines) == len(report.rows) + 1
    assert parse_report_csv(text) == report.rows
    conf = list(csv.reader(io.StringIO((tmp_path / "confusion.csv").read_text())))
    assert conf[0][-3:] == ["truth", "pred", "count"]
    assert len(conf) == 1 + 2 * 3
    svg = (tmp_path / "report.svg").read_text()
    assert svg.startswith("<svg")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("rect")]) >= 3


def test_emit_report_storage_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StorageError):
        emit_report(sample_report(), blocker / "sub")


# -- correction studies ------------------------------------------------------------------------

def test_corrupt_channel():
    rng = Rng(1)
    words = ["REFUND"] * 2000
    out = [corrupt(w, 0.6, rng) for w in words]
    kept = sum(a == b for w, (p, _) in zip(words, out) for a, b in zip(w, p)) / (6 * 2000)
    assert abs(kept - 0.6) < 0.02
    for w, (p, c) in zip(words, out):
        assert len(p) == len(c) == len(w)
        for a, b, conf in zip(w, p, c):
            assert (0.6 <= conf < 1.0) if a == b else (0.05 <= conf < 0.45)


def test_correction_study_small():
    domain = build_lexicon(["REFUND", "CHECK", "TAXES", "SMITH", "JONES"])
    study = correction_study(domain, bundled("general"), n=200, seed=3)
    assert 0.5 < study.char_acc < 0.7
    assert study.word_acc["domain"] > study.word_acc["none"]
    assert 0.0 <= study.gated <= 1.0


def test_gate_study_is_total():
    assert gate_study(build_lexicon(["REFUND", "CHECK"]), n=100) == 1.0
