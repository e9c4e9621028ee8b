from __future__ import annotations

from typing import Iterable

from .autodiff import ContractError
from .lexicon import edit_distance


def char_accuracy(pred: str, truth: str) -> float:
    """1 - Levenshtein(pred, truth) / max(len(pred), len(truth))."""
    if not truth:
        raise ContractError("character accuracy needs a non-empty truth")
    return 1.0 - edit_distance(pred, truth) / max(len(pred), len(truth))


def word_accuracy(pairs: Iterable[tuple[str, str]]) -> float:
    pairs = list(pairs)
    if not pairs:
        raise ContractError("word accuracy needs at least one pair")
    return sum(p == t for p, t in pairs) / len(pairs)


def mean_char_accuracy(pairs: Iterable[tuple[str, str]]) -> float:
    pairs = list(pairs)
    if not pairs:
        raise ContractError("character accuracy needs at least one pair")
    return sum(char_accuracy(p, t) for p, t in pairs) / len(pairs)
