"""Inference-time phrase segmentation.

Every span of a sentence up to a length cap is scored with the
segmentation head on a single dropout-free forward pass of the trunk;
spans whose probability clears the threshold are kept, overlaps allowed.
Two thresholds are conventional: a looser one when populating an index
and a stricter one when segmenting queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import Sentence, Vocabulary
from .encoder import DropoutMask, PhraseEncoder, token_ids
from .extract import PhraseSpan, all_spans


@dataclass(frozen=True)
class SegmentConfig:
    index_threshold: float = 0.7
    query_threshold: float = 0.9
    max_span_len: int = 8

    def __post_init__(self) -> None:
        for name in ("index_threshold", "query_threshold"):
            t = getattr(self, name)
            if not (0.0 < t < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {t}")
        if self.max_span_len < 1:
            raise ValueError("max_span_len must be >= 1")


def segment(
    sentence: Sentence,
    model: PhraseEncoder,
    vocab: Vocabulary,
    threshold: float,
    max_len: int = 8,
) -> list[tuple[PhraseSpan, float]]:
    """Spans scoring above ``threshold``, sorted by (start, end).

    Scores come from one dropout-free trunk pass shared by all spans, so
    the cost is one encode plus a single batched head evaluation.
    """
    if len(sentence) == 0:
        raise ValueError("cannot segment an empty sentence")
    spans = all_spans(len(sentence), max_len)
    with torch.no_grad():
        hidden = model.encode(
            token_ids(sentence.tokens, vocab), DropoutMask.inference()
        )
        probs = model.span_probs(hidden, spans).tolist()
    return [
        (PhraseSpan(sentence, s, e), p)
        for (s, e), p in zip(spans, probs)
        if p > threshold
    ]


def segment_rows(
    sentence: Sentence,
    scored: list[tuple[PhraseSpan, float]],
) -> list[dict]:
    """JSONL rows for the segment dump format."""
    return [
        {"sent_id": sentence.id, "s": sp.s, "e": sp.e, "score": score, "text": sp.text}
        for sp, score in scored
    ]
