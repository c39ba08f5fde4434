"""Phrase-pair extraction from aligned sentence pairs.

A span pair (x[i:j], y[u:v]) is extracted when at least one link connects
the two spans and no link crosses either span's boundary; unaligned words
inside a span are allowed.  All qualifying pairs are emitted, overlaps
included.  ``strict_all_aligned`` additionally requires every token of
both spans to carry a link.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .aligner import Alignment
from .corpus import Sentence, SentencePair, Vocabulary, is_numeric_or_punct


@dataclass(frozen=True)
class PhraseSpan:
    """A contextualized phrase: (context sentence, start, end), 0-indexed
    inclusive, so (s, e) directly name the boundary tokens."""

    sentence: Sentence
    s: int
    e: int

    def __post_init__(self) -> None:
        if not (0 <= self.s <= self.e < len(self.sentence)):
            raise ValueError(
                f"span ({self.s},{self.e}) outside sentence of "
                f"{len(self.sentence)} tokens"
            )

    def __len__(self) -> int:
        return self.e - self.s + 1

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.sentence.tokens[self.s : self.e + 1]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class PhrasePair:
    src: PhraseSpan
    tgt: PhraseSpan
    pair_id: int


@dataclass(frozen=True)
class ExtractionConfig:
    max_phrase_len: int = 8
    # Absolute occurrence count; 30k matches a ~10M-pair corpus and should
    # be scaled down proportionally for smaller corpora.
    boundary_freq_threshold: int = 30_000
    drop_numeric_punct: bool = True
    strict_all_aligned: bool = False

    def __post_init__(self) -> None:
        if self.max_phrase_len < 1:
            raise ValueError("max_phrase_len must be >= 1")
        if self.boundary_freq_threshold < 0:
            raise ValueError("boundary_freq_threshold must be >= 0")


def enumerate_consistent(
    pair: SentencePair,
    align: Alignment,
    max_len: int = 8,
    strict_all_aligned: bool = False,
    start_pair_id: int = 0,
) -> list[PhrasePair]:
    """All consistently aligned span pairs with both sides <= ``max_len``.

    Returned in lexicographic (i, j, u, v) order with sequential pair ids
    starting at ``start_pair_id``.  An empty alignment yields nothing.
    """
    nx, ny = len(pair.x), len(pair.y)
    if (align.src_len, align.tgt_len) != (nx, ny):
        raise ValueError("alignment does not refer to this sentence pair")
    by_src: list[list[int]] = [[] for _ in range(nx)]
    by_tgt: list[list[int]] = [[] for _ in range(ny)]
    for i, j in align.links:
        by_src[i].append(j)
        by_tgt[j].append(i)

    out: list[PhrasePair] = []
    next_id = start_pair_id
    for i in range(nx):
        tgt_min, tgt_max = ny, -1
        for j in range(i, min(nx, i + max_len)):
            for t in by_src[j]:
                tgt_min = min(tgt_min, t)
                tgt_max = max(tgt_max, t)
            if tgt_max < 0:
                continue  # no link touches x[i:j] yet
            if tgt_max - tgt_min + 1 > max_len:
                continue
            # every link out of the projected target block must come back
            # into [i, j]; otherwise no target span works for this (i, j)
            if any(
                s < i or s > j
                for t in range(tgt_min, tgt_max + 1)
                for s in by_tgt[t]
            ):
                continue
            if strict_all_aligned and any(not by_src[t] for t in range(i, j + 1)):
                continue
            # extend over unaligned target boundary words
            u = tgt_min
            while True:
                v = tgt_max
                while True:
                    if v - u + 1 <= max_len and not (
                        strict_all_aligned
                        and any(not by_tgt[t] for t in range(u, v + 1))
                    ):
                        out.append(
                            PhrasePair(
                                PhraseSpan(pair.x, i, j),
                                PhraseSpan(pair.y, u, v),
                                next_id,
                            )
                        )
                        next_id += 1
                    v += 1
                    if v >= ny or by_tgt[v]:
                        break
                u -= 1
                if u < 0 or by_tgt[u]:
                    break
    out.sort(key=lambda p: (p.src.s, p.src.e, p.tgt.s, p.tgt.e))
    return [
        PhrasePair(p.src, p.tgt, start_pair_id + k) for k, p in enumerate(out)
    ]


def apply_filters(
    pairs: Sequence[PhrasePair],
    vocab_x: Vocabulary,
    vocab_y: Vocabulary,
    cfg: ExtractionConfig = ExtractionConfig(),
) -> list[PhrasePair]:
    """Drop pairs failing the boundary-frequency or numeric/punct rules.

    Survivor order is preserved; spans are never modified.
    """
    kept = []
    for pair in pairs:
        if _boundary_too_frequent(pair.src, vocab_x, cfg.boundary_freq_threshold):
            continue
        if _boundary_too_frequent(pair.tgt, vocab_y, cfg.boundary_freq_threshold):
            continue
        if cfg.drop_numeric_punct and (
            _all_numeric_punct(pair.src) or _all_numeric_punct(pair.tgt)
        ):
            continue
        kept.append(pair)
    return kept


def _boundary_too_frequent(span: PhraseSpan, vocab: Vocabulary, threshold: int) -> bool:
    tokens = span.tokens
    return vocab.freq(tokens[0]) > threshold or vocab.freq(tokens[-1]) > threshold


def _all_numeric_punct(span: PhraseSpan) -> bool:
    return all(is_numeric_or_punct(t) for t in span.tokens)


def all_spans(n: int, max_len: int) -> list[tuple[int, int]]:
    """Every (s, e) span of a length-``n`` sentence with length <= max_len."""
    return [
        (s, e)
        for s in range(n)
        for e in range(s, min(n, s + max_len))
    ]


def segmentation_examples(
    pair_spans: Iterable[PhraseSpan],
    sentence: Sentence,
    rng: random.Random,
    max_len: int = 8,
) -> list[tuple[PhraseSpan, int]]:
    """Balanced labeled spans for segmentation training.

    All phrase spans are returned with label 1, plus an equal-size uniform
    sample (without replacement) of the sentence's other spans of length
    <= ``max_len`` with label 0.  When fewer negatives exist, all of them
    are used.
    """
    positives = sorted({(sp.s, sp.e) for sp in pair_spans})
    pos_set = set(positives)
    universe = [se for se in all_spans(len(sentence), max_len) if se not in pos_set]
    n_neg = min(len(positives), len(universe))
    negatives = sorted(rng.sample(universe, n_neg))
    out = [(PhraseSpan(sentence, s, e), 1) for s, e in positives]
    out.extend((PhraseSpan(sentence, s, e), 0) for s, e in negatives)
    return out


def phrase_pair_rows(pairs: Iterable[PhrasePair], sent_id: int) -> Iterable[dict]:
    """JSONL rows for the phrase-pair dump format."""
    for p in pairs:
        yield {
            "pair_id": p.pair_id,
            "sent_id": sent_id,
            "src": {"s": p.src.s, "e": p.src.e, "text": p.src.text},
            "tgt": {"s": p.tgt.s, "e": p.tgt.e, "text": p.tgt.text},
        }
