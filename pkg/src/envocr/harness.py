"""Experiment matrix: generate, pretrain clean, fine-tune on one pattern,
then score every (test pattern, correction, countermeasure) cell."""
from __future__ import annotations

import csv
import io
import logging
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import alphabet
from .countermeasure import ShaderParams, shaded_samples
from .imagegen.compose import ComposeParams
from .imagegen.dataset import DatasetConfig, canonical_json, fnv1a64, generate_samples
from .imagegen.image import StorageError
from .imagegen.patterns import STANDARD_PATTERNS
from .imagegen.render import max_chars
from .lexicon import CorrectionConfig, Lexicon, build_lexicon, bundled, correct_domain, correct_general
from .metrics import char_accuracy, mean_char_accuracy, word_accuracy
from .model import ModelConfig, ModelParams, load_checkpoint, predict_batch, save_checkpoint
from .rng import Rng, splitmix64
from .training import FREEZE_POLICIES, TrainConfig, TrainLog, train_loop

log = logging.getLogger(__name__)

CORRECTIONS = ("none", "general", "domain")
REPORT_HEADER = ["train_pattern", "test_pattern", "correction", "countermeasure", "char_acc", "word_acc", "n", "seed"]
CONFUSION_HEADER = ["train_pattern", "test_pattern", "correction", "countermeasure", "truth", "pred", "count"]
# alignment placeholder for an inserted or deleted character
GAP = "-"


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, tag: str) -> int:
    """Independent 64-bit seed for the named step of an experiment."""
    return splitmix64(seed ^ fnv1a64(tag.encode("utf-8")))


def desk_wordlist(n_words: int = 1200, n_codes: int = 300, seed: int = 0, limit: int = 6) -> tuple[str, ...]:
    """Most frequent general words of at most ``limit`` characters, the
    domain labels, and random alphanumeric codes so digits are seen in
    training."""
    general = bundled("general")
    ranked = sorted((w for w in general if len(w) <= limit), key=lambda w: (-general.frequency(w), w))
    words = dict.fromkeys(ranked[:n_words])
    words.update(dict.fromkeys(w for w in bundled("domain") if len(w) <= limit))
    target = len(words) + n_codes
    rng = Rng(splitmix64(seed ^ 0xC0DE))
    while len(words) < target:
        n = 2 + rng.randint(limit - 1)
        words[''.join(alphabet.CHARS[rng.randint(len(alphabet.CHARS))] for _ in range(n))] = None
    return tuple(sorted(words))


def _default_pretrain() -> TrainConfig:
    return TrainConfig(batch_size=8, iterations=500, eval_every=250)


def _default_finetune() -> TrainConfig:
    # at 1e-3 long small-batch runs can spike late and lose cross-pattern transfer
    return TrainConfig(learning_rate=3e-4, batch_size=4, iterations=3000, eval_every=500)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    wordlist: tuple[str, ...] | None = None
    n_pretrain: int = 2000
    n_finetune: int = 1000
    n_test: int = 200
    train_fraction: float = 0.9
    train_pattern: int = 1
    test_patterns: tuple[int, ...] = (1, 2, 3)
    corrections: tuple[str, ...] = CORRECTIONS
    # "off", or a shader jitter in pixels for a countermeasure cell
    countermeasure: tuple = ("off",)
    # also score the clean-only model on every test pattern
    baseline: bool = False
    # one fine-tuned model per policy; encoder-frozen rows are labelled "<pattern>/frozen"
    freeze_policies: tuple[str, ...] = ("none",)
    compose: ComposeParams = ComposeParams()
    model: ModelConfig = ModelConfig()
    pretrain: TrainConfig = field(default_factory=_default_pretrain)
    finetune: TrainConfig = field(default_factory=_default_finetune)
    shader: ShaderParams = ShaderParams()
    correction: CorrectionConfig = CorrectionConfig()
    # reuse this clean checkpoint instead of pretraining
    base_checkpoint: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "test_patterns", tuple(int(p) for p in self.test_patterns))
        object.__setattr__(self, "corrections", tuple(self.corrections))
        object.__setattr__(self, "countermeasure", tuple(self.countermeasure))
        object.__setattr__(self, "freeze_policies", tuple(self.freeze_policies))
        if self.wordlist is not None:
            object.__setattr__(self, "wordlist", tuple(self.wordlist))
        if not self.test_patterns:
            raise ConfigError("test_patterns must be non-empty")
        for pid in (self.train_pattern, *self.test_patterns):
            if pid not in STANDARD_PATTERNS:
                raise ConfigError(f"unknown pattern id {pid}; expected one of {sorted(STANDARD_PATTERNS)}")
        for mode in self.corrections:
            if mode not in CORRECTIONS:
                raise ConfigError(f"unknown correction {mode!r}; expected one of {CORRECTIONS}")
        if not self.corrections:
            raise ConfigError("corrections must be non-empty")
        for cm in self.countermeasure:
            if cm != "off" and not (isinstance(cm, int) and cm >= 0):
                raise ConfigError(f"countermeasure entries are 'off' or a jitter >= 0, got {cm!r}")
        if not self.countermeasure:
            raise ConfigError("countermeasure must be non-empty")
        if not self.freeze_policies or any(f not in FREEZE_POLICIES for f in self.freeze_policies):
            raise ConfigError(f"freeze_policies must be a non-empty subset of {FREEZE_POLICIES}")
        if min(self.n_pretrain, self.n_finetune, self.n_test) < 1:
            raise ConfigError("dataset sizes must be >= 1")

    def words(self) -> tuple[str, ...]:
        if self.wordlist is not None:
            return self.wordlist
        return desk_wordlist(limit=min(self.model.max_len, max_chars(self.model.canvas[1])))

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "wordlist": list(self.wordlist) if self.wordlist is not None else None,
            "n_pretrain": self.n_pretrain,
            "n_finetune": self.n_finetune,
            "n_test": self.n_test,
            "train_fraction": self.train_fraction,
            "train_pattern": self.train_pattern,
            "test_patterns": list(self.test_patterns),
            "corrections": list(self.corrections),
            "countermeasure": list(self.countermeasure),
            "baseline": self.baseline,
            "freeze_policies": list(self.freeze_policies),
            "compose": self.compose.to_dict(),
            "model": self.model.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "finetune": self.finetune.to_dict(),
            "shader": self.shader.to_dict(),
            "correction": asdict(self.correction),
            "base_checkpoint": self.base_checkpoint,
            "out_dir": self.out_dir,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        nested = {
            "compose": lambda v: ComposeParams(**v),
            "model": ModelConfig.from_dict,
            "pretrain": lambda v: TrainConfig.from_dict({**_default_pretrain().to_dict(), **v}),
            "finetune": lambda v: TrainConfig.from_dict({**_default_finetune().to_dict(), **v}),
            "shader": ShaderParams.from_dict,
            "correction": lambda v: CorrectionConfig(**v),
        }
        for key, build in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = build(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


class ReportRow(NamedTuple):
    train_pattern: str
    test_pattern: str
    correction: str
    countermeasure: str
    char_acc: float
    word_acc: float
    n: int
    seed: int


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    # (train, test, correction, countermeasure) -> Counter of (truth, pred) character pairs
    confusion: dict[tuple[str, str, str, str], Counter] = field(default_factory=dict)

    def cell(self, test_pattern, correction="none", countermeasure="off", train_pattern=None) -> ReportRow:
        for row in self.rows:
            if (
                row.test_pattern == str(test_pattern)
                and row.correction == correction
                and row.countermeasure == str(countermeasure)
                and (train_pattern is None or row.train_pattern == str(train_pattern))
            ):
                return row
        raise KeyError((train_pattern, test_pattern, correction, countermeasure))


class TrainedModels(NamedTuple):
    base: ModelParams
    # freeze policy -> fine-tuned model
    tuned: dict[str, ModelParams]
    pretrain_log: TrainLog | None
    finetune_logs: dict[str, TrainLog]


def train_label(train_pattern: int, policy: str) -> str:
    return str(train_pattern) if policy == "none" else f"{train_pattern}/frozen"


# -- metrics helpers ---------------------------------------------------------------

def align(pred: str, truth: str) -> list[tuple[str, str]]:
    """Character pairs (truth, pred) of one minimum-cost Levenshtein alignment.

    Insertions and deletions pair a character with ``GAP``. Ties prefer a
    diagonal step, then a deletion from the prediction.
    """
    n, m = len(truth), len(pred)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (truth[i - 1] != pred[j - 1]))
    pairs = []
    i, j = n, m
    while i or j:
        if i and j and d[i, j] == d[i - 1, j - 1] + (truth[i - 1] != pred[j - 1]):
            pairs.append((truth[i - 1], pred[j - 1]))
            i, j = i - 1, j - 1
        elif j and d[i, j] == d[i, j - 1] + 1:
            pairs.append((GAP, pred[j - 1]))
            j -= 1
        else:
            pairs.append((truth[i - 1], GAP))
            i -= 1
    return pairs[::-1]


def confusion_counts(pairs: Sequence[tuple[str, str]]) -> Counter:
    counts: Counter = Counter()
    for pred, truth in pairs:
        counts.update(align(pred, truth))
    return counts


def apply_correction(
    predictions: Sequence[tuple[str, Sequence[float]]],
    mode: str,
    general: Lexicon | None = None,
    domain: Lexicon | None = None,
    cfg: CorrectionConfig = CorrectionConfig(),
) -> list[str]:
    if mode == "none":
        return [w for w, _ in predictions]
    if mode == "general":
        return [correct_general(w, general, cfg) for w, _ in predictions]
    if mode == "domain":
        return [correct_domain(w, c, domain, cfg) for w, c in predictions]
    raise ConfigError(f"unknown correction {mode!r}")


# -- pipeline ----------------------------------------------------------------------

def _split_arrays(samples) -> dict:
    out = {}
    for split in ("train", "eval"):
        chosen = [(rec, img) for rec, img, *_ in samples if rec.split == split]
        images = np.stack([img.pixels for _, img in chosen]).astype(np.float32)[:, None] if chosen else None
        out[split] = (images if images is not None else np.zeros((0, 1, 1, 1), np.float32), [r.label for r, _ in chosen])
    return out


def _all_arrays(samples) -> tuple[np.ndarray, list[str]]:
    images = np.stack([s[1].pixels for s in samples]).astype(np.float32)[:, None]
    return images, [s[0].label for s in samples]


def _dataset_config(cfg: ExperimentConfig, words, n: int, patterns, tag: str, fraction: float) -> DatasetConfig:
    h, w = cfg.model.canvas
    return DatasetConfig(
        list(words),
        n,
        fraction,
        canvas=(w, h),
        patterns=tuple(STANDARD_PATTERNS[p] for p in patterns),
        compose=cfg.compose,
        seed=derive_seed(cfg.seed, tag),
    )


def train_models(cfg: ExperimentConfig) -> TrainedModels:
    """Clean pretrain (or load ``base_checkpoint``), then fine-tune on the train pattern."""
    words = cfg.words()
    pretrain_log = None
    if cfg.base_checkpoint is not None:
        if not os.path.exists(cfg.base_checkpoint):
            raise ConfigError(f"base checkpoint {cfg.base_checkpoint} does not exist")
        base = load_checkpoint(cfg.base_checkpoint)
        if base.config != cfg.model:
            raise ConfigError("base checkpoint was trained with a different model config")
    else:
        clean = _dataset_config(cfg, words, cfg.n_pretrain, (), "pretrain-data", cfg.train_fraction)
        train_cfg = replace(cfg.pretrain, seed=derive_seed(cfg.seed, "pretrain-order"))
        base, pretrain_log = train_loop(
            _split_arrays(generate_samples(clean)), train_cfg, derive_seed(cfg.seed, "init"), cfg.model
        )
    obfuscated = _dataset_config(cfg, words, cfg.n_finetune, (cfg.train_pattern,), "finetune-data", cfg.train_fraction)
    data = _split_arrays(generate_samples(obfuscated))
    tuned, logs = {}, {}
    for policy in cfg.freeze_policies:
        tune_cfg = replace(cfg.finetune, seed=derive_seed(cfg.seed, "finetune-order"), freeze_policy=policy)
        tuned[policy], logs[policy] = train_loop(data, tune_cfg, base)
    return TrainedModels(base, tuned, pretrain_log, logs)


def build_test_sets(cfg: ExperimentConfig) -> dict[tuple[int, str], tuple[np.ndarray, list[str], list[float]]]:
    """Images, labels and density gaps for every (test pattern, countermeasure) pair.

    The shader-augmented set of a pattern mirrors its plain test set sample
    for sample; only the shader differs.
    """
    words = cfg.words()
    out = {}
    for pid in cfg.test_patterns:
        data_cfg = _dataset_config(cfg, words, cfg.n_test, (pid,), f"test-data-{pid}", 0.5)
        for cm in cfg.countermeasure:
            if cm == "off":
                images, labels = _all_arrays(generate_samples(data_cfg))
                gaps: list[float] = []
            else:
                shader = replace(cfg.shader, jitter=(cm, cm), seed=derive_seed(cfg.seed, f"shader-{pid}"))
                samples = shaded_samples(data_cfg, shader)
                images, labels = _all_arrays(samples)
                gaps = [s[2] for s in samples]
            out[(pid, str(cm))] = (images, labels, gaps)
    return out


def evaluate_cells(
    cfg: ExperimentConfig,
    models: TrainedModels,
    sets: dict | None = None,
    general: Lexicon | None = None,
    domain: Lexicon | None = None,
) -> EvalReport:
    """Score every configured cell; rows come out in configuration order."""
    sets = sets if sets is not None else build_test_sets(cfg)
    general = general if general is not None else bundled("general")
    domain = domain if domain is not None else build_lexicon(cfg.words())
    report = EvalReport()

    def score(params, train_label, pid, cm, corrections):
        images, labels, _ = sets[(pid, cm)]
        preds = predict_batch(images, params)
        for mode in corrections:
            words = apply_correction(preds, mode, general, domain, cfg.correction)
            pairs = list(zip(words, labels))
            cm_label = "off" if cm == "off" else f"jitter{cm}"
            key = (train_label, str(pid), mode, cm_label)
            report.rows.append(
                ReportRow(*key, mean_char_accuracy(pairs), word_accuracy(pairs), len(pairs), cfg.seed)
            )
            report.confusion[key] = confusion_counts(pairs)

    for policy in cfg.freeze_policies:
        for pid in cfg.test_patterns:
            for cm in cfg.countermeasure:
                score(models.tuned[policy], train_label(cfg.train_pattern, policy), pid, str(cm), cfg.corrections)
    if cfg.baseline:
        for pid in cfg.test_patterns:
            score(models.base, "none", pid, "off", ("none",))
    return report


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    if cfg.baseline and "off" not in cfg.countermeasure:
        raise ConfigError("the clean-only baseline is scored on the plain test sets; include 'off'")
    models = train_models(cfg)
    report = evaluate_cells(cfg, models)
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        emit_report(report, out)
        try:
            save_checkpoint(models.base, out / "base.ckpt")
            for policy, params in models.tuned.items():
                suffix = "" if policy == "none" else "_frozen"
                save_checkpoint(params, out / f"tuned{suffix}.ckpt")
                (out / f"finetune{suffix}_log.csv").write_text(models.finetune_logs[policy].to_csv(), encoding="utf-8")
            if models.pretrain_log is not None:
                (out / "pretrain_log.csv").write_text(models.pretrain_log.to_csv(), encoding="utf-8")
            (out / "experiment.json").write_text(canonical_json(cfg.to_dict()) + "\n", encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write experiment outputs to {out}: {exc}") from exc
    return report


# -- report emission ---------------------------------------------------------------

def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for row in report.rows:
        writer.writerow([*row[:4], repr(row.char_acc), repr(row.word_acc), row.n, row.seed])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != REPORT_HEADER:
        raise ValueError(f"unexpected report header {header}")
    return [ReportRow(a, b, c, d, float(e), float(f), int(g), int(h)) for a, b, c, d, e, f, g, h in reader]


def confusion_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONFUSION_HEADER)
    for key, counts in report.confusion.items():
        for (truth, pred), n in sorted(counts.items()):
            writer.writerow([*key, truth, pred, n])
    return buf.getvalue()


PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2")


def report_svg(report: EvalReport, width: int = 720, height: int = 360) -> str:
    """Grouped bars of character accuracy: one group per (train, test,
    countermeasure), one bar per correction mode."""
    groups: dict[tuple[str, str, str], dict[str, float]] = {}
    modes: list[str] = []
    for row in report.rows:
        groups.setdefault((row.train_pattern, row.test_pattern, row.countermeasure), {})[row.correction] = row.char_acc
        if row.correction not in modes:
            modes.append(row.correction)
    left, right, top, bottom = 50, 20, 30, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="18" font-family="sans-serif" font-size="13">character accuracy by cell</text>',
    ]
    for k in range(6):
        v = k / 5
        y = top + plot_h * (1 - v)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.1f}</text>')
    slot = plot_w / max(len(groups), 1)
    bar = slot * 0.8 / max(len(modes), 1)
    for g, ((train, test, cm), values) in enumerate(groups.items()):
        x0 = left + g * slot + slot * 0.1
        for b, mode in enumerate(modes):
            if mode not in values:
                continue
            v = values[mode]
            parts.append(
                f'<rect x="{x0 + b * bar:.1f}" y="{top + plot_h * (1 - v):.1f}" width="{bar:.1f}" '
                f'height="{plot_h * v:.1f}" fill="{PALETTE[b % len(PALETTE)]}"><title>{escape(mode)}: {v:.3f}</title></rect>'
            )
        label = escape(f"{train} to {test} {cm}")
        parts.append(
            f'<text x="{x0 + slot * 0.4:.1f}" y="{top + plot_h + 16}" font-family="sans-serif" '
            f'font-size="10" text-anchor="middle">{label}</text>'
        )
    for b, mode in enumerate(modes):
        x = left + b * 90
        parts.append(f'<rect x="{x}" y="{height - 22}" width="10" height="10" fill="{PALETTE[b % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{height - 13}" font-family="sans-serif" font-size="11">{escape(mode)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, out_dir: str | os.PathLike) -> list[Path]:
    out = Path(out_dir)
    files = {"report.csv": report_csv(report), "confusion.csv": confusion_csv(report), "report.svg": report_svg(report)}
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            written.append(out / name)
    except OSError as exc:
        raise StorageError(f"cannot write report to {out}: {exc}") from exc
    return written


# -- correction study ----------------------------------------------------------------

def corrupt(word: str, accuracy: float, rng: Rng) -> tuple[str, list[float]]:
    """Noisy recognizer stand-in: each character survives with probability
    ``accuracy``; otherwise it becomes a different random symbol. Kept
    characters report confidence in [0.6, 1), replaced ones in [0.05, 0.45)."""
    chars, conf = [], []
    for ch in word:
        if rng.uniform() < accuracy:
            chars.append(ch)
            conf.append(0.6 + 0.4 * rng.uniform())
        else:
            other = alphabet.CHARS[rng.randint(len(alphabet.CHARS) - 1)]
            chars.append(other if other != ch else alphabet.CHARS[-1])
            conf.append(0.05 + 0.4 * rng.uniform())
    return "".join(chars), conf


class CorrectionStudy(NamedTuple):
    char_acc: float
    word_acc: dict[str, float]
    gated: float


def correction_study(
    domain: Lexicon,
    general: Lexicon,
    n: int = 500,
    accuracy: float = 0.6,
    seed: int = 0,
    cfg: CorrectionConfig = CorrectionConfig(),
) -> CorrectionStudy:
    """Word accuracy of each correction mode on corrupted domain labels.

    ``gated`` is the fraction of words whose mean confidence fell below the
    gate, i.e. that domain correction left untouched.
    """
    rng = Rng(splitmix64(seed))
    labels = list(domain)
    truths = [labels[rng.randint(len(labels))] for _ in range(n)]
    preds = [corrupt(w, accuracy, rng) for w in truths]
    char_acc = sum(char_accuracy(p, t) for (p, _), t in zip(preds, truths)) / n
    word_acc = {
        mode: word_accuracy(zip(apply_correction(preds, mode, general, domain, cfg), truths)) for mode in CORRECTIONS
    }
    gated = sum(sum(c) / len(c) < cfg.gate for _, c in preds) / n
    return CorrectionStudy(char_acc, word_acc, gated)


def gate_study(domain: Lexicon, n: int = 500, seed: int = 0, cfg: CorrectionConfig = CorrectionConfig()) -> float:
    """Fraction of inputs returned unchanged when mean confidence is forced
    below the gate."""
    rng = Rng(splitmix64(seed ^ 0x6A7E))
    labels = list(domain)
    unchanged = 0
    for _ in range(n):
        word, _ = corrupt(labels[rng.randint(len(labels))], 0.6, rng)
        conf = [cfg.gate * rng.uniform() for _ in word]
        unchanged += correct_domain(word, conf, domain, cfg) == word
    return unchanged / n


__all__ = [
    "CORRECTIONS",
    "ConfigError",
    "CorrectionStudy",
    "EvalReport",
    "ExperimentConfig",
    "REPORT_HEADER",
    "ReportRow",
    "TrainedModels",
    "align",
    "apply_correction",
    "confusion_counts",
    "correction_study",
    "corrupt",
    "derive_seed",
    "desk_wordlist",
    "emit_report",
    "evaluate_cells",
    "gate_study",
    "parse_report_csv",
    "report_csv",
    "report_svg",
    "run_experiment",
    "build_test_sets",
    "train_label",
    "train_models",
]
