"""Symbol inventory: 26 letters, 10 digits and the PAD symbol."""
from __future__ import annotations

import string

CHARS = string.ascii_uppercase + string.digits
PAD = "<PAD>"
PAD_INDEX = len(CHARS)
SYMBOLS = tuple(CHARS) + (PAD,)
SIZE = len(SYMBOLS)
CHAR_TO_INDEX = {c: i for i, c in enumerate(CHARS)}


class AlphabetError(ValueError):
    """A character has no slot in the alphabet."""


def check_word(word: str) -> str:
    for ch in word:
        if ch not in CHAR_TO_INDEX:
            raise AlphabetError(f"character {ch!r} is outside the alphabet")
    return word


def encode_label(word: str, max_len: int) -> list[int]:
    """Indices of ``word`` padded with PAD to ``max_len``."""
    check_word(word)
    if len(word) > max_len:
        raise AlphabetError(f"label {word!r} longer than max_len={max_len}")
    return [CHAR_TO_INDEX[c] for c in word] + [PAD_INDEX] * (max_len - len(word))


def decode_indices(indices) -> str:
    return "".join(CHARS[i] for i in indices if i != PAD_INDEX)
