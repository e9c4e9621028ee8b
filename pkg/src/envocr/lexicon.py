"""Word-level correction against a general dictionary or a domain lexicon."""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from .alphabet import AlphabetError, check_word
from .autodiff import ContractError


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def weighted_distance(word: str, confidences: Sequence[float], target: str) -> float:
    """Cost of editing ``word`` into ``target`` when character i of ``word``
    is only as trustworthy as ``confidences[i]``.

    Substituting or deleting predicted character i costs ``confidences[i]``;
    inserting a missing character costs 1; keeping a match is free.
    """
    n, m = len(word), len(target)
    prev = [float(j) for j in range(m + 1)]
    for i in range(1, n + 1):
        c = confidences[i - 1]
        cur = [prev[0] + c]
        for j in range(1, m + 1):
            keep = prev[j - 1] + (0.0 if word[i - 1] == target[j - 1] else c)
            cur.append(min(keep, prev[j] + c, cur[j - 1] + 1.0))
        prev = cur
    return prev[m]


@dataclass(frozen=True)
class CorrectionConfig:
    max_dist: int = 2
    gate: float = 0.3

    def __post_init__(self):
        if self.max_dist < 0:
            raise ValueError("max_dist must be >= 0")
        if not 0.0 <= self.gate <= 1.0:
            raise ValueError("gate must lie in [0, 1]")


class Lexicon:
    """Immutable word -> frequency table over the alphabet."""

    def __init__(self, entries: dict[str, int]):
        self._entries = dict(entries)
        self._by_length: dict[int, list[str]] = {}
        for word in sorted(self._entries):
            self._by_length.setdefault(len(word), []).append(word)

    def __contains__(self, word: str) -> bool:
        return word in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries))

    def frequency(self, word: str) -> int:
        return self._entries.get(word, 0)

    def items(self):
        return sorted(self._entries.items())

    def near_length(self, n: int, slack: int) -> Iterable[str]:
        for length in range(max(0, n - slack), n + slack + 1):
            yield from self._by_length.get(length, ())


def build_lexicon(words: Iterable[str | tuple[str, int]]) -> Lexicon:
    """Uppercase, validate and merge ``words``; a bare word counts once."""
    entries: dict[str, int] = {}
    for item in words:
        word, freq = (item, 1) if isinstance(item, str) else item
        word = word.strip().upper()
        check_word(word)
        if freq < 0:
            raise ValueError(f"negative frequency for {word!r}")
        entries[word] = entries.get(word, 0) + int(freq)
    return Lexicon(entries)


def parse_lexicon(text: str) -> list[tuple[str, int]]:
    entries = []
    for line in text.splitlines():
        if not line.strip():
            continue
        word, _, freq = line.partition("\t")
        entries.append((word, int(freq) if freq.strip() else 1))
    return entries


def load_lexicon(path: str | os.PathLike) -> Lexicon:
    """Read ``WORD[<TAB>frequency]`` lines."""
    with open(path, encoding="utf-8") as fh:
        return build_lexicon(parse_lexicon(fh.read()))


def save_lexicon(lex: Lexicon, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word, freq in lex.items():
            fh.write(f"{word}\t{freq}\n")


def bundled(name: str) -> Lexicon:
    """Packaged word lists: ``general`` or ``domain``."""
    text = resources.files("envocr.data").joinpath(f"{name}_words.txt").read_text(encoding="utf-8")
    return build_lexicon(parse_lexicon(text))


def _pick(candidates: list[tuple[float, str]], lex: Lexicon) -> str:
    # lowest cost, then highest frequency, then alphabetical
    return min(candidates, key=lambda c: (c[0], -lex.frequency(c[1]), c[1]))[1]


def correct_general(word: str, lex: Lexicon, cfg: CorrectionConfig = CorrectionConfig()) -> str:
    if word in lex:
        return word
    candidates = []
    for entry in lex.near_length(len(word), cfg.max_dist):
        d = edit_distance(word, entry)
        if d <= cfg.max_dist:
            candidates.append((d, entry))
    return _pick(candidates, lex) if candidates else word


def correct_domain(
    word: str,
    confidences: Sequence[float],
    lex: Lexicon,
    cfg: CorrectionConfig = CorrectionConfig(),
) -> str:
    """Nearest domain label under confidence-weighted distance.

    Below the confidence gate the prediction is returned untouched. There is
    no distance cap: the domain lexicon is treated as exhaustive.
    """
    if len(confidences) != len(word):
        raise ContractError(f"{len(confidences)} confidences for a {len(word)}-character word")
    if not word or sum(confidences) / len(confidences) < cfg.gate:
        return word
    if word in lex or len(lex) == 0:
        return word
    candidates = [(weighted_distance(word, confidences, entry), entry) for entry in lex]
    return _pick(candidates, lex)


__all__ = [
    "AlphabetError",
    "CorrectionConfig",
    "Lexicon",
    "build_lexicon",
    "bundled",
    "correct_domain",
    "correct_general",
    "edit_distance",
    "load_lexicon",
    "save_lexicon",
    "weighted_distance",
]
