"""Command line entry point: ``envocr <command> ...``."""
from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click

from .countermeasure import ShaderParams, countermeasure_dataset
from .harness import ExperimentConfig, confusion_counts, desk_wordlist, run_experiment
from .imagegen.dataset import DatasetConfig, generate_dataset, load_dataset
from .imagegen.patterns import STANDARD_PATTERNS
from .lexicon import CorrectionConfig, bundled, correct_domain, correct_general, load_lexicon
from .metrics import mean_char_accuracy, word_accuracy
from .model import ModelConfig, load_checkpoint, predict_batch, save_checkpoint
from .training import TrainConfig, gradient_probes, train_loop


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _wordlist(value) -> list[str]:
    if isinstance(value, list):
        return value
    if value == "desk":
        return list(desk_wordlist())
    if value in ("general", "domain"):
        return list(bundled(value))
    return [line.split("\t")[0].strip() for line in Path(value).read_text(encoding="utf-8").splitlines() if line.strip()]


def dataset_config(d: dict) -> DatasetConfig:
    """DatasetConfig from JSON; ``wordlist`` may also be "desk", "general",
    "domain" or a file path, and patterns may be given by id."""
    d = dict(d)
    d["wordlist"] = _wordlist(d.get("wordlist", "desk"))
    d["patterns"] = [STANDARD_PATTERNS[p].to_dict() if isinstance(p, int) else p for p in d.get("patterns", [])]
    return DatasetConfig.from_dict(d)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log training progress.")
def main(verbose: bool):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--workers", default=1, show_default=True)
def gen(config_path, out, workers):
    """Render a dataset of composed word images."""
    config = dataset_config(_read_json(config_path))
    records = generate_dataset(config, out, workers)
    click.echo(f"wrote {len(records)} samples to {out} (config {config.config_hash()})")


def _train_config(d: dict) -> tuple[TrainConfig, ModelConfig, int]:
    d = dict(d)
    model = ModelConfig.from_dict(d.pop("model")) if "model" in d else ModelConfig()
    init_seed = int(d.pop("init_seed", d.get("seed", 0)))
    return TrainConfig.from_dict(d), model, init_seed


def _write_log(result, out: str):
    log_path = Path(out).with_suffix(".csv")
    log_path.write_text(result.log.to_csv(), encoding="utf-8")
    click.echo(result.log.to_csv(), nl=False)


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def pretrain(data, config_path, out):
    """Train from scratch on a (clean) dataset."""
    cfg, model, init_seed = _train_config(_read_json(config_path))
    result = train_loop(load_dataset(data), cfg, init_seed, model)
    save_checkpoint(result.params, out)
    _write_log(result, out)


@main.command()
@click.option("--base", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def finetune(base, data, config_path, out):
    """Continue training a checkpoint on an obfuscated dataset."""
    cfg, _, _ = _train_config(_read_json(config_path))
    result = train_loop(load_dataset(data), cfg, load_checkpoint(base))
    save_checkpoint(result.params, out)
    _write_log(result, out)


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--probes", default=10, show_default=True)
def gradcheck(seed, probes):
    """Compare analytic and numeric gradients on a tiny model."""
    found = gradient_probes(seed=seed, n_probes=probes)
    for p in found:
        click.echo(f"{p.name}{list(p.index)} analytic={p.analytic:.6e} numeric={p.numeric:.6e} rel={p.rel_error:.2e}")
    worst = max(p.rel_error for p in found)
    click.echo(f"max relative error {worst:.3e}")
    sys.exit(0 if worst < 1e-3 else 1)


@main.command()
@click.option("--lexicon", "lexicon_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--domain", is_flag=True, help="Confidence-weighted domain correction.")
@click.option("--gate", default=0.3, show_default=True)
@click.option("--max-dist", default=2, show_default=True)
@click.argument("predictions", type=click.File("r"), default="-")
def correct(lexicon_path, domain, gate, max_dist, predictions):
    """Correct a CSV of (word, "c1,c2,...") predictions; prints word,corrected."""
    lex = load_lexicon(lexicon_path)
    cfg = CorrectionConfig(max_dist=max_dist, gate=gate)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    for row in csv.reader(predictions):
        if not row or row[0] == "word":
            continue
        word = row[0].strip().upper()
        conf = [float(c) for c in row[1].split(",")] if len(row) > 1 and row[1].strip() else []
        fixed = correct_domain(word, conf, lex, cfg) if domain else correct_general(word, lex, cfg)
        writer.writerow([word, fixed])


@main.command("countermeasure")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
def countermeasure_cmd(in_dir, out, params_path):
    """Write the shader-augmented mirror of a dataset."""
    shader = ShaderParams.from_dict(_read_json(params_path)) if params_path else ShaderParams()
    gaps = countermeasure_dataset(in_dir, out, shader)
    click.echo(f"wrote {len(gaps)} samples to {out}; max density gap {max(gaps):.4f}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def experiment(config_path, out):
    """Run the full train/test matrix and write report.csv, confusion.csv and report.svg."""
    cfg = ExperimentConfig.from_dict({**_read_json(config_path), "out_dir": out})
    report = run_experiment(cfg)
    for row in report.rows:
        click.echo(
            f"{row.train_pattern}->{row.test_pattern} {row.correction:7s} {row.countermeasure:8s} "
            f"char {row.char_acc:.4f} word {row.word_acc:.4f}"
        )


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--lexicon", "lexicon_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--domain", is_flag=True)
@click.option("--gate", default=0.3, show_default=True)
@click.option("--max-dist", default=2, show_default=True)
@click.option("--split", type=click.Choice(["train", "eval", "all"]), default="all", show_default=True)
@click.option("--report", "report_dir", type=click.Path(file_okay=False), help="Also write confusion counts here.")
def eval_cmd(ckpt, data, lexicon_path, domain, gate, max_dist, split, report_dir):
    """Score a checkpoint on a dataset, optionally with correction."""
    params = load_checkpoint(ckpt)
    images, labels = load_dataset(data).arrays(None if split == "all" else split)
    if not labels:
        raise click.UsageError("no samples in the selected split")
    preds = predict_batch(images, params)
    words = [w for w, _ in preds]
    if lexicon_path:
        lex = load_lexicon(lexicon_path)
        cfg = CorrectionConfig(max_dist=max_dist, gate=gate)
        words = [correct_domain(w, c, lex, cfg) if domain else correct_general(w, lex, cfg) for w, c in preds]
    pairs = list(zip(words, labels))
    click.echo(f"n={len(pairs)} char_acc={mean_char_accuracy(pairs):.4f} word_acc={word_accuracy(pairs):.4f}")
    if report_dir:
        out = Path(report_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "confusion.csv", "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["truth", "pred", "count"])
            for (t, p), n in sorted(confusion_counts(pairs).items()):
                writer.writerow([t, p, n])


if __name__ == "__main__":
    main()
