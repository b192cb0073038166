#!/usr/bin/env python3
"""
Trigram language model with Witten-Bell discounting.

    P(w | h) = (c(h, w) + T(h) * P(w | h')) / (c(h) + T(h))

where c(h) counts events after context h, T(h) is the number of distinct
word types seen after h, and h' drops the oldest word of h. The recursion
ends in a uniform distribution over the vocabulary (training types plus
</s> and <unk>). Contexts never seen in training back off unchanged.

Sentences are padded with two <s> markers, which are context only and are
never predicted. Tokens outside the vocabulary are skipped when computing
perplexity and enter later contexts as <unk>.

Models serialize to a sorted tab-separated count file:

    order <TAB> context <TAB> word <TAB> count

with order-0 lines listing the vocabulary, so retraining on the same text
reproduces the file byte for byte.
"""

import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from errors import DataError

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
ORDER = 3

Context = tuple[str, ...]


@dataclass(frozen=True)
class SentenceScore:
    """Log10 probability mass of one sentence and what was scored."""

    log10_prob: float
    n_events: int
    n_oov: int
    n_word_events: int


class TrigramLM:
    """Immutable Witten-Bell trigram model."""

    def __init__(self, counts: dict[Context, Counter], vocab: Iterable[str]):
        self._counts = {ctx: Counter(dist) for ctx, dist in counts.items()}
        self._vocab = frozenset(vocab) | {EOS, UNK}
        self._totals = {ctx: sum(dist.values()) for ctx, dist in self._counts.items()}
        self._types = {ctx: len(dist) for ctx, dist in self._counts.items()}
        self._base = 1.0 / len(self._vocab)

    @classmethod
    def uniform(cls, types: Iterable[str]) -> "TrigramLM":
        """Count-free model: every word gets 1/|V|."""
        return cls({}, types)

    @property
    def vocab(self) -> frozenset[str]:
        return self._vocab

    @property
    def contexts(self) -> list[Context]:
        """Observed contexts, sorted."""
        return sorted(self._counts)

    def count(self, context: Context, word: str) -> int:
        return self._counts.get(tuple(context), Counter())[word]

    def continuation_types(self, context: Context) -> int:
        """T(h): distinct types observed after context h."""
        return self._types.get(tuple(context), 0)

    def prob(self, word: str, context: Iterable[str] = ()) -> float:
        """P(word | context); only the last ORDER-1 context words matter."""
        if word not in self._vocab:
            word = UNK
        context = tuple(context)[-(ORDER - 1):] if ORDER > 1 else ()
        p = self._base
        for k in range(len(context) + 1):
            h = context[len(context) - k:]
            dist = self._counts.get(h)
            if dist is None:
                continue
            types = self._types[h]
            p = (dist[word] + types * p) / (self._totals[h] + types)
        return p

    def score(self, tokens: list[str]) -> SentenceScore:
        """Sum log10 P over in-vocabulary tokens and </s>."""
        history = [BOS] * (ORDER - 1)
        log10_prob = 0.0
        n_events = 0
        n_oov = 0
        for tok in list(tokens) + [EOS]:
            if tok not in self._vocab or tok == UNK:
                n_oov += 1
                history.append(UNK)
                continue
            log10_prob += math.log10(self.prob(tok, history))
            n_events += 1
            history.append(tok)
        return SentenceScore(
            log10_prob=log10_prob,
            n_events=n_events,
            n_oov=n_oov,
            n_word_events=n_events - 1,
        )

    def save(self, path: Path):
        """Write the sorted count file."""
        lines = [f"0\t\t{word}\t0" for word in sorted(self._vocab)]
        for ctx in sorted(self._counts, key=lambda c: (len(c), c)):
            for word, n in sorted(self._counts[ctx].items()):
                lines.append(f"{len(ctx) + 1}\t{' '.join(ctx)}\t{word}\t{n}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: Path) -> "TrigramLM":
        """Read a count file written by save()."""
        vocab: set[str] = set()
        counts: dict[Context, Counter] = defaultdict(Counter)
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise DataError(f"{path}:{line_no}: expected 4 tab-separated fields")
                order, ctx, word, n = int(parts[0]), parts[1], parts[2], int(parts[3])
                if order == 0:
                    vocab.add(word)
                else:
                    counts[tuple(ctx.split(" ")) if ctx else ()][word] = n
        return cls(counts, vocab)


def train_trigram(sentences: Iterable[list[str]]) -> TrigramLM:
    """
    Count trigram events over tokenized sentences.

    Raises:
        DataError: If the stream holds no sentence.
    """
    counts: dict[Context, Counter] = defaultdict(Counter)
    types: set[str] = set()
    n_sentences = 0
    for sentence in sentences:
        if not sentence:
            continue
        n_sentences += 1
        types.update(sentence)
        padded = [BOS] * (ORDER - 1) + list(sentence) + [EOS]
        for i in range(ORDER - 1, len(padded)):
            word = padded[i]
            for k in range(ORDER):
                counts[tuple(padded[i - k:i])][word] += 1
    if n_sentences == 0:
        raise DataError("cannot train a language model on an empty text stream")
    logger.info("trained trigram LM on %d sentences, %d types", n_sentences, len(types))
    return TrigramLM(counts, types)


def vocab(lm: TrigramLM) -> frozenset[str]:
    """Closed vocabulary used for OOV rates (training types, </s>, <unk>)."""
    return lm.vocab


def perplexity(lm: TrigramLM, tokens: list[str]) -> float | None:
    """
    Per-event perplexity 10^(-sum log10 P / N).

    Returns None when every word token is out of vocabulary, so that the
    score would rest on </s> alone.
    """
    if not tokens:
        raise DataError("perplexity needs at least one token")
    result = lm.score(tokens)
    if result.n_word_events == 0:
        return None
    return 10.0 ** (-result.log10_prob / result.n_events)
