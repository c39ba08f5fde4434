"""End-to-end inference: segment, encode, search, prompt, evaluate.

``retrieve`` turns a sentence into per-span retrieval results.
``build_prompt`` renders them as a translation instruction: one block per
retrieved phrase (source phrase, its potential translation, and a marked,
truncated context window), fenced by divider lines, followed by the
instruction naming both languages and the source sentence.
``eval_acc_at_1`` scores gold query spans against an index by strict
occurrence identity (context string + positions); a lenient string-match
mode exists behind a flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import torch

from . import index as index_mod
from .corpus import Sentence, Vocabulary, tokenize
from .encoder import DropoutMask, PhraseEncoder, token_ids
from .extract import PhraseSpan
from .index import IndexEntry, PhraseIndex
from .segmenter import SegmentConfig, segment

_DIVIDER = "-" * 36


@dataclass(frozen=True)
class ResolvedHit:
    entry: IndexEntry
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    query_span: PhraseSpan
    hits: tuple[ResolvedHit, ...]


@dataclass(frozen=True)
class PromptConfig:
    """Rendering knobs for translation prompts.

    ``max_context_chars`` bounds the visible context window (the marked
    phrase itself is never truncated; markers and ellipses are not counted).
    """

    src_display: str
    tgt_display: str
    max_context_chars: int = 100
    max_phrases: int = 8
    marker_open: str = "[["
    marker_close: str = "]]"
    mark_source_phrases: bool = False


@dataclass(frozen=True)
class GoldItem:
    """One gold retrieval judgment: an annotated query span and the
    identity of its target occurrence."""

    query: PhraseSpan
    gold_context: str
    gold_s: int
    gold_e: int

    @property
    def gold_identity(self) -> tuple[str, int, int]:
        return (self.gold_context, self.gold_s, self.gold_e)

    @property
    def gold_phrase_text(self) -> str:
        return " ".join(self.gold_context.split(" ")[self.gold_s : self.gold_e + 1])


def encode_phrases(
    model: PhraseEncoder,
    vocab: Vocabulary,
    sentence: Sentence,
    spans: Sequence[tuple[int, int]],
) -> np.ndarray:
    """Dropout-free phrase vectors for spans of one sentence: (n, o)."""
    with torch.no_grad():
        hidden = model.encode(
            token_ids(sentence.tokens, vocab), DropoutMask.inference()
        )
        reps = model.phrase_reps(hidden, spans)
    return reps.to(torch.float32).numpy()


def retrieve(
    sentence: Sentence,
    model: PhraseEncoder,
    vocab: Vocabulary,
    idx: PhraseIndex,
    seg_cfg: SegmentConfig = SegmentConfig(),
    k: int = 8,
) -> list[RetrievalResult]:
    """Segment with the query threshold, encode spans, search top-k.

    Results come back in (start, end) span order; identical spans are
    deduplicated keeping the higher segmentation score.  An empty index
    yields results with empty hit lists.
    """
    if idx.dim and idx.dim != model.config.o:
        raise ValueError(
            f"index dimension {idx.dim} does not match encoder output "
            f"{model.config.o}"
        )
    scored = segment(
        sentence, model, vocab, seg_cfg.query_threshold, seg_cfg.max_span_len
    )
    best: dict[tuple[int, int], float] = {}
    for span, score in scored:
        key = (span.s, span.e)
        if key not in best or score > best[key]:
            best[key] = score
    spans = sorted(best)
    if not spans:
        return []
    vectors = encode_phrases(model, vocab, sentence, spans)
    if len(idx) == 0:
        return [
            RetrievalResult(PhraseSpan(sentence, s, e), ())
            for s, e in spans
        ]
    hit_lists = index_mod.search(idx, vectors, k)
    results = []
    for (s, e), hits in zip(spans, hit_lists):
        resolved = tuple(
            ResolvedHit(idx.entry(h.entry_id), h.score) for h in hits
        )
        results.append(RetrievalResult(PhraseSpan(sentence, s, e), resolved))
    return results


def _marked_context(entry: IndexEntry, cfg: PromptConfig) -> str:
    tokens = entry.context_text.split(" ")
    phrase = " ".join(tokens[entry.s : entry.e + 1])
    prefix = " ".join(tokens[: entry.s])
    suffix = " ".join(tokens[entry.e + 1 :])
    if prefix:
        prefix += " "
    if suffix:
        suffix = " " + suffix
    budget = max(0, cfg.max_context_chars - len(phrase))
    lav, rav = len(prefix), len(suffix)
    half = budget // 2
    if lav <= half:
        left = lav
        right = min(rav, budget - left)
    elif rav <= budget - half:
        right = rav
        left = min(lav, budget - right)
    else:
        left = half
        right = budget - half
    left_txt = prefix[lav - left :]
    right_txt = suffix[:right]
    left_cut = left < lav
    right_cut = right < rav
    # drop the partial word at a mid-word cut
    if left_cut and left > 0 and prefix[lav - left - 1] != " ":
        pos = left_txt.find(" ")
        left_txt = left_txt[pos + 1 :] if pos >= 0 else ""
    if right_cut and right < rav and suffix[right] != " ":
        pos = right_txt.rfind(" ")
        right_txt = right_txt[:pos] if pos >= 0 else ""
    marked = f"{cfg.marker_open}{phrase}{cfg.marker_close}"
    head = "... " if left_cut else ""
    tail = " ..." if right_cut else ""
    return f"{head}{left_txt}{marked}{right_txt}{tail}"


def build_prompt(
    sentence: Sentence,
    results: Sequence[RetrievalResult],
    cfg: PromptConfig,
) -> str:
    """Render the retrieval-augmented translation instruction.

    With no usable results this degrades to the plain instruction plus the
    source sentence.  Output is deterministic, ends with a single newline.
    """
    candidates = [r for r in results if r.hits]
    chosen = sorted(
        candidates, key=lambda r: -r.hits[0].score
    )[: cfg.max_phrases]
    chosen.sort(key=lambda r: (r.query_span.s, r.query_span.e))

    source_text = sentence.text
    if cfg.mark_source_phrases and chosen:
        source_text = _mark_source(sentence, chosen, cfg)

    lines: list[str] = []
    if chosen:
        lines.append(_DIVIDER)
        for pos, result in enumerate(chosen):
            top = result.hits[0]
            lines.append(f"{cfg.src_display} Phrase: {result.query_span.text}")
            lines.append(f"Potential Translation: {top.entry.phrase_text}")
            lines.append(f"Context: {_marked_context(top.entry, cfg)}")
            if pos != len(chosen) - 1:
                lines.append("")
        lines.append(_DIVIDER)
        lines.append(
            "Based on the provided information of phrase translation, "
            "please faithfully translate the following sentence from "
            f"{cfg.src_display} into {cfg.tgt_display}:"
        )
    else:
        lines.append(
            "Please faithfully translate the following sentence from "
            f"{cfg.src_display} into {cfg.tgt_display}, and do not alter "
            "its meaning:"
        )
    lines.append("")
    lines.append(f"{cfg.src_display}: {source_text}")
    lines.append("")
    lines.append(f"{cfg.tgt_display}:")
    return "\n".join(lines) + "\n"


def _mark_source(
    sentence: Sentence,
    chosen: Sequence[RetrievalResult],
    cfg: PromptConfig,
) -> str:
    opens: dict[int, int] = {}
    closes: dict[int, int] = {}
    for r in chosen:
        opens[r.query_span.s] = opens.get(r.query_span.s, 0) + 1
        closes[r.query_span.e] = closes.get(r.query_span.e, 0) + 1
    parts = []
    for t, token in enumerate(sentence.tokens):
        piece = cfg.marker_open * opens.get(t, 0) + token
        piece += cfg.marker_close * closes.get(t, 0)
        parts.append(piece)
    return " ".join(parts)


class GoldResolutionError(ValueError):
    pass


def load_gold(path: str, lowercase: bool = False) -> list[GoldItem]:
    """Parse the gold JSONL format; spans are validated against the
    tokenized query context."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            q = row["query"]
            tokens = tokenize(q["text_context"], lowercase)
            sentence = Sentence(tuple(tokens), q.get("lang", "und"), line_no - 1)
            span = PhraseSpan(sentence, int(q["s"]), int(q["e"]))
            g = row["gold"]
            items.append(
                GoldItem(span, g["context"], int(g["s"]), int(g["e"]))
            )
    return items


def validate_gold(items: Sequence[GoldItem], idx: PhraseIndex) -> None:
    """Raise when any gold identity is missing from the index."""
    known = {entry.identity() for entry in idx.entries}
    missing = [it.gold_identity for it in items if it.gold_identity not in known]
    if missing:
        raise GoldResolutionError(
            f"{len(missing)} gold identities not in the index; "
            f"first: {missing[0]!r}"
        )


def eval_acc_at_1(
    items: Sequence[GoldItem],
    model: PhraseEncoder,
    vocab: Vocabulary,
    idx: PhraseIndex,
    lenient: bool = False,
) -> float:
    """Fraction of gold queries whose rank-1 hit is the gold occurrence.

    Gold spans are encoded directly (the segmenter is bypassed) and
    searched at k=1.  ``lenient`` counts any entry with the same surface
    string as the gold phrase.  Absent gold targets count as misses.
    """
    if not items:
        raise ValueError("empty gold set")
    if len(idx) == 0:
        return 0.0
    hits = 0
    for item in items:
        vec = encode_phrases(
            model, vocab, item.query.sentence, [(item.query.s, item.query.e)]
        )
        top = index_mod.search(idx, vec, k=1)[0]
        if not top:
            continue
        entry = idx.entry(top[0].entry_id)
        if lenient:
            hits += entry.phrase_text == item.gold_phrase_text
        else:
            hits += entry.identity() == item.gold_identity
    return hits / len(items)


def gold_target_entries(
    items: Sequence[GoldItem],
    model: PhraseEncoder,
    vocab: Vocabulary,
    lowercase: bool = False,
) -> Iterator[IndexEntry]:
    """Encode each gold target occurrence from its own context."""
    for doc_id, item in enumerate(items):
        tokens = tokenize(item.gold_context, lowercase)
        sentence = Sentence(tuple(tokens), "und", doc_id)
        vec = encode_phrases(
            model, vocab, sentence, [(item.gold_s, item.gold_e)]
        )[0]
        yield IndexEntry(
            id=-1,
            vector=vec,
            phrase_text=" ".join(tokens[item.gold_s : item.gold_e + 1]),
            context_text=" ".join(tokens),
            s=item.gold_s,
            e=item.gold_e,
            doc_id=doc_id,
        )


def span_entries(
    spans: Iterable[PhraseSpan],
    model: PhraseEncoder,
    vocab: Vocabulary,
) -> Iterator[IndexEntry]:
    """Encode arbitrary phrase spans into index entries, one forward pass
    per distinct sentence."""
    grouped: dict[Sentence, list[PhraseSpan]] = {}
    for span in spans:
        grouped.setdefault(span.sentence, []).append(span)
    for sentence, group in grouped.items():
        vecs = encode_phrases(
            model, vocab, sentence, [(sp.s, sp.e) for sp in group]
        )
        for sp, vec in zip(group, vecs):
            yield IndexEntry(
                id=-1,
                vector=vec,
                phrase_text=sp.text,
                context_text=sentence.text,
                s=sp.s,
                e=sp.e,
                doc_id=sentence.id,
            )


def eval_with_distractors(
    items: Sequence[GoldItem],
    distractors: Iterable[PhraseSpan],
    model: PhraseEncoder,
    vocab: Vocabulary,
    lenient: bool = False,
) -> tuple[float, PhraseIndex]:
    """Index gold targets plus distractors, then score acc@1.

    Gold entries come first, so a distractor colliding with a gold
    identity is dropped by the index's dedup rule.
    """
    entries = list(gold_target_entries(items, model, vocab))
    entries.extend(span_entries(distractors, model, vocab))
    idx = index_mod.build(entries)
    return eval_acc_at_1(items, model, vocab, idx, lenient=lenient), idx


def ngram_spans(sentence: Sentence, n: int = 5) -> list[PhraseSpan]:
    """All length-n spans (the whole sentence when shorter): the blunt
    segmentation mode of the eval harness."""
    length = len(sentence)
    if length <= n:
        return [PhraseSpan(sentence, 0, length - 1)]
    return [PhraseSpan(sentence, s, s + n - 1) for s in range(length - n + 1)]


def index_sentences(
    sentences: Iterable[Sentence],
    model: PhraseEncoder,
    vocab: Vocabulary,
    seg_cfg: SegmentConfig = SegmentConfig(),
    ngram: int | None = None,
) -> Iterator[IndexEntry]:
    """Segment-and-encode monolingual sentences into index entries.

    ``ngram`` switches from learned segmentation to all n-grams.
    """
    for sentence in sentences:
        if ngram is not None:
            spans = ngram_spans(sentence, ngram)
        else:
            spans = [
                sp
                for sp, _ in segment(
                    sentence, model, vocab,
                    seg_cfg.index_threshold, seg_cfg.max_span_len,
                )
            ]
        if spans:
            yield from span_entries(spans, model, vocab)


def result_to_json(result: RetrievalResult) -> dict:
    """Wire format shared by the search subcommand and the HTTP service."""
    return {
        "query_span": {
            "s": result.query_span.s,
            "e": result.query_span.e,
            "text": result.query_span.text,
        },
        "hits": [
            {
                "phrase": h.entry.phrase_text,
                "context": h.entry.context_text,
                "s": h.entry.s,
                "e": h.entry.e,
                "score": h.score,
            }
            for h in result.hits
        ],
    }
