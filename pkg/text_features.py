#!/usr/bin/env python3
"""
Tokenization and lexical statistics.

The same tokenizer is applied to LM text, reference transcripts and ASR
hypotheses: NFC normalization, lowercasing, whitespace split, and removal
of tokens made only of punctuation. Tokens that merely contain punctuation
(orthographic apostrophes, hyphens) are kept as they are.
"""

import unicodedata
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

from errors import DataError


@dataclass(frozen=True)
class LexicalProfile:
    """Token/type counts and OOV rate of one utterance."""

    n_tokens: int
    n_types: int
    oov_rate: float


@dataclass(frozen=True)
class TextStats:
    """Word and type counts of a text collection."""

    n_sentences: int
    n_words: int
    n_types: int


def _is_punctuation(token: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in token)


def tokenize(text: str, allow_empty: bool = False) -> list[str]:
    """
    Split a transcript into normalized tokens.

    Args:
        text: Transcript string.
        allow_empty: Return [] instead of raising when nothing survives
            filtering (hypotheses may legitimately be empty).

    Raises:
        DataError: If no token survives and allow_empty is False.
    """
    normalized = unicodedata.normalize("NFC", text.lower())
    tokens = [tok for tok in normalized.split() if not _is_punctuation(tok)]
    if not tokens and not allow_empty:
        raise DataError(f"no tokens left after tokenizing {text!r}")
    return tokens


def lexical_profile(tokens: list[str], vocab: set[str] | frozenset[str]) -> LexicalProfile:
    """Count tokens/types and the fraction of tokens outside vocab."""
    if not tokens:
        raise DataError("lexical_profile needs at least one token")
    oov = sum(1 for tok in tokens if tok not in vocab)
    return LexicalProfile(
        n_tokens=len(tokens),
        n_types=len(set(tokens)),
        oov_rate=oov / len(tokens),
    )


def read_sentences(path: Path) -> Iterator[list[str]]:
    """Yield tokenized sentences from a one-sentence-per-line text file."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            tokens = tokenize(line, allow_empty=True)
            if tokens:
                yield tokens


def text_stats(sentences: Iterable[list[str]]) -> TextStats:
    """Count sentences, running words and distinct types."""
    n_sentences = 0
    n_words = 0
    types: set[str] = set()
    for sentence in sentences:
        n_sentences += 1
        n_words += len(sentence)
        types.update(sentence)
    return TextStats(n_sentences=n_sentences, n_words=n_words, n_types=len(types))
