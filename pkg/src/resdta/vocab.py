"""Character vocabularies and fixed-length integer encoding for SMILES and protein sequences.

Label 0 is reserved for padding and is never assigned to a symbol. The shipped
tables live in ``resdta/data/`` as plain text, one symbol per line; the 1-based
line number is the label. The SMILES table pins C=1, H=2, N=3, O=5 and '='=63.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

PAD_LABEL = 0
SMILES_MAX_LEN = 100
PROTEIN_MAX_LEN = 1000


class UnknownSymbolError(ValueError):
    """Raised in strict mode when a character is not in the vocabulary."""

    def __init__(self, position: int, character: str):
        self.position = position
        self.character = character
        super().__init__(f"unknown symbol {character!r} at position {position}")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered character set mapping each symbol to a label in [1, size]."""

    symbols: tuple[str, ...]
    label_of: dict[str, int] = field(repr=False)
    pad_label: int = PAD_LABEL

    @property
    def size(self) -> int:
        return len(self.symbols)

    @classmethod
    def from_symbols(cls, symbols) -> "Vocabulary":
        symbols = tuple(symbols)
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary symbols must be unique")
        if any(len(s) != 1 for s in symbols):
            raise ValueError("vocabulary symbols must be single characters")
        return cls(symbols=symbols, label_of={s: i + 1 for i, s in enumerate(symbols)})

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        # One symbol per line; line number (1-based) is the label. Lines are
        # stripped of the newline only, so ' ' could in principle be a symbol.
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_symbols(lines)

    def __contains__(self, char: str) -> bool:
        return char in self.label_of

    def decode(self, tokens) -> str:
        """Map the non-pad prefix of a token vector back to a string."""
        chars = []
        for t in np.asarray(tokens).ravel().tolist():
            if t == self.pad_label:
                break
            chars.append(self.symbols[int(t) - 1])
        return "".join(chars)


@dataclass(frozen=True)
class EncodedSequence:
    """Fixed-length token vector plus the count of real (non-pad) tokens."""

    tokens: np.ndarray
    true_length: int


def _load_builtin(name: str) -> Vocabulary:
    text = resources.files("resdta.data").joinpath(name).read_text(encoding="utf-8")
    return Vocabulary.from_symbols(text.splitlines())


def smiles_vocabulary() -> Vocabulary:
    """The 64-symbol SMILES character table."""
    vocab = _load_builtin("smiles_vocab.txt")
    assert vocab.size == 64
    return vocab


def protein_vocabulary() -> Vocabulary:
    """The 25-symbol amino-acid character table (A-Z without J)."""
    vocab = _load_builtin("protein_vocab.txt")
    assert vocab.size == 25
    return vocab


def encode(text: str, vocab: Vocabulary, max_len: int, on_unknown: int | None = None) -> EncodedSequence:
    """Encode a string into exactly ``max_len`` integer labels.

    Characters beyond ``max_len`` are truncated; shorter strings are
    zero-padded. With the default ``on_unknown=None`` an out-of-vocabulary
    character raises UnknownSymbolError; passing a label in [1, vocab.size]
    maps unknowns to that label instead.
    """
    if max_len <= 0:
        raise ValueError(f"max_len must be positive, got {max_len}")
    if on_unknown is not None and not 1 <= on_unknown <= vocab.size:
        raise ValueError(f"on_unknown label {on_unknown} outside [1, {vocab.size}]")

    true_length = min(len(text), max_len)
    tokens = np.zeros(max_len, dtype=np.int64)
    table = vocab.label_of
    for i in range(true_length):
        char = text[i]
        label = table.get(char)
        if label is None:
            if on_unknown is None:
                raise UnknownSymbolError(i, char)
            label = on_unknown
        tokens[i] = label
    return EncodedSequence(tokens=tokens, true_length=true_length)


def encode_many(texts, vocab: Vocabulary, max_len: int, on_unknown: int | None = None) -> np.ndarray:
    """Encode a sequence of strings into an (n, max_len) int64 matrix."""
    out = np.zeros((len(texts), max_len), dtype=np.int64)
    for i, text in enumerate(texts):
        out[i] = encode(text, vocab, max_len, on_unknown=on_unknown).tokens
    return out
