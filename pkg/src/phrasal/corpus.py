"""Corpus ingestion: tokenization, parallel/monolingual loaders, vocabularies.

Tokenization is deliberately simple and deterministic: split on whitespace,
peel leading/trailing punctuation into their own tokens, and detach
apostrophe clitics ("minute's" -> "minute", "'s").  Joining a token list
with single spaces and re-tokenizing reproduces the same list, which keeps
span indices stable across dump/reload cycles.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from itertools import zip_longest
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

#: Sentences longer than this are truncated before training/indexing.
MAX_SENTENCE_TOKENS = 128

# Apostrophes stay attached to their chunk so clitics survive as "'s".
_APOSTROPHES = frozenset({"'", "’"})
_CLITIC = re.compile(r"^(.+)(['’][A-Za-z]+)$")


class CorpusFormatError(ValueError):
    """Raised when an input file is unusable (too many malformed lines,
    mismatched two-file lengths, bad monolingual payloads)."""


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence: the context unit for phrases and alignment.

    Attributes:
        tokens: Surface token strings, no internal whitespace.
        language: Language tag, e.g. "de".
        id: Stable integer identifier within its corpus.
    """

    tokens: tuple[str, ...]
    language: str
    id: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class SentencePair:
    """A parallel sentence pair; the unit of alignment and extraction."""

    x: Sentence
    y: Sentence
    id: int

    def __post_init__(self) -> None:
        if self.x.language == self.y.language:
            raise ValueError(
                f"pair {self.id}: both sides tagged {self.x.language!r}"
            )


def _is_boundary_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P") and ch not in _APOSTROPHES


def _split_chunk(chunk: str) -> list[str]:
    lead: list[str] = []
    i, j = 0, len(chunk)
    while i < j and _is_boundary_punct(chunk[i]):
        lead.append(chunk[i])
        i += 1
    trail: list[str] = []
    while j > i and _is_boundary_punct(chunk[j - 1]):
        trail.append(chunk[j - 1])
        j -= 1
    trail.reverse()
    core = chunk[i:j]
    if not core:
        return lead + trail
    m = _CLITIC.match(core)
    if m:
        # the clitic base may itself end in punctuation: re-split it
        parts = _split_chunk(m.group(1)) + [m.group(2)]
    else:
        parts = [core]
    return lead + parts + trail


def tokenize(text: str, lowercase: bool = False) -> list[str]:
    """Split ``text`` into tokens.

    Whitespace separates chunks; leading/trailing punctuation characters of
    each chunk become separate tokens; a trailing apostrophe clitic is
    detached as its own token.  Lowercasing, when requested, is applied
    after splitting.  Empty or whitespace-only input yields ``[]``.
    """
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_split_chunk(chunk))
    if lowercase:
        tokens = [t.lower() for t in tokens]
    return tokens


def is_numeric_or_punct(token: str) -> bool:
    """True when every character is a digit, punctuation, or symbol."""
    return all(
        ch.isdigit() or unicodedata.category(ch)[0] in ("P", "S")
        for ch in token
    )


@dataclass
class LoadStats:
    """Counters produced while streaming a corpus file."""

    lines_read: int = 0
    yielded: int = 0
    skipped: int = 0
    truncated: int = 0
    bad_line_numbers: list[int] = field(default_factory=list)

    def _record_bad(self, line_no: int) -> None:
        self.skipped += 1
        self.bad_line_numbers.append(line_no)


def _truncate(tokens: list[str], stats: LoadStats, line_no: int) -> list[str]:
    if len(tokens) > MAX_SENTENCE_TOKENS:
        stats.truncated += 1
        log.warning("line %d: truncated to %d tokens", line_no, MAX_SENTENCE_TOKENS)
        return tokens[:MAX_SENTENCE_TOKENS]
    return tokens


def _check_malformed_ratio(stats: LoadStats, path: str) -> None:
    if stats.lines_read and stats.skipped / stats.lines_read > 0.10:
        shown = ", ".join(str(n) for n in stats.bad_line_numbers[:20])
        raise CorpusFormatError(
            f"{path}: {stats.skipped}/{stats.lines_read} malformed lines "
            f"(>10%); first bad lines: {shown}"
        )


def load_parallel(
    path: str,
    lowercase: bool = False,
    stats: LoadStats | None = None,
) -> Iterator[SentencePair]:
    """Stream sentence pairs from a parallel JSONL file.

    Each line is an object with ``src``, ``tgt``, ``src_lang``, ``tgt_lang``
    (optional ``id`` is accepted and ignored; pair ids are assigned
    0, 1, 2, ... in yield order).  Malformed lines are counted and skipped;
    more than 10% malformed lines raises :class:`CorpusFormatError` once the
    stream is exhausted.
    """
    stats = stats if stats is not None else LoadStats()
    next_id = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            stats.lines_read += 1
            line = line.strip()
            if not line:
                stats._record_bad(line_no)
                continue
            try:
                row = json.loads(line)
                src, tgt = row["src"], row["tgt"]
                src_lang, tgt_lang = row["src_lang"], row["tgt_lang"]
                if not all(isinstance(v, str) for v in (src, tgt, src_lang, tgt_lang)):
                    raise TypeError("non-string field")
                if src_lang == tgt_lang:
                    raise ValueError("identical language tags")
            except (KeyError, TypeError, ValueError, json.JSONDecodeError):
                stats._record_bad(line_no)
                continue
            x_toks = _truncate(tokenize(src, lowercase), stats, line_no)
            y_toks = _truncate(tokenize(tgt, lowercase), stats, line_no)
            if not x_toks or not y_toks:
                stats._record_bad(line_no)
                continue
            yield SentencePair(
                x=Sentence(tuple(x_toks), src_lang, next_id),
                y=Sentence(tuple(y_toks), tgt_lang, next_id),
                id=next_id,
            )
            stats.yielded += 1
            next_id += 1
    _check_malformed_ratio(stats, path)


def load_parallel_two_file(
    src_path: str,
    tgt_path: str,
    src_lang: str,
    tgt_lang: str,
    lowercase: bool = False,
    stats: LoadStats | None = None,
) -> Iterator[SentencePair]:
    """Stream sentence pairs from a line-aligned Moses-style file pair."""
    stats = stats if stats is not None else LoadStats()
    next_id = 0
    with open(src_path, encoding="utf-8") as fs, open(tgt_path, encoding="utf-8") as ft:
        for line_no, (src, tgt) in enumerate(zip_longest(fs, ft), 1):
            if src is None or tgt is None:
                raise CorpusFormatError(
                    f"{src_path} / {tgt_path}: sides have different line counts"
                )
            stats.lines_read += 1
            x_toks = _truncate(tokenize(src, lowercase), stats, line_no)
            y_toks = _truncate(tokenize(tgt, lowercase), stats, line_no)
            if not x_toks or not y_toks:
                stats._record_bad(line_no)
                continue
            yield SentencePair(
                x=Sentence(tuple(x_toks), src_lang, next_id),
                y=Sentence(tuple(y_toks), tgt_lang, next_id),
                id=next_id,
            )
            stats.yielded += 1
            next_id += 1
    _check_malformed_ratio(stats, f"{src_path}/{tgt_path}")


def load_monolingual(
    path: str,
    language: str,
    lowercase: bool = False,
    stats: LoadStats | None = None,
) -> Iterator[Sentence]:
    """Stream sentences from a one-sentence-per-line UTF-8 file."""
    stats = stats if stats is not None else LoadStats()
    next_id = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            stats.lines_read += 1
            tokens = _truncate(tokenize(line, lowercase), stats, line_no)
            if not tokens:
                stats._record_bad(line_no)
                continue
            yield Sentence(tuple(tokens), language, next_id)
            stats.yielded += 1
            next_id += 1


class Vocabulary:
    """Token ids plus occurrence counts.

    Ids are dense ``0..V-1`` in first-seen order; the sum of per-token
    frequencies equals the total token count (special tokens are admitted
    with frequency 0 and do not disturb that identity).
    """

    def __init__(self) -> None:
        self._token_to_id: dict[str, int] = {}
        self._tokens: list[str] = []
        self._freqs: list[int] = []
        self.total = 0

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def add(self, token: str, count: int = 1) -> int:
        idx = self._token_to_id.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._token_to_id[token] = idx
            self._tokens.append(token)
            self._freqs.append(0)
        self._freqs[idx] += count
        self.total += count
        return idx

    def id(self, token: str) -> int | None:
        return self._token_to_id.get(token)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def freq(self, token: str) -> int:
        idx = self._token_to_id.get(token)
        return 0 if idx is None else self._freqs[idx]

    def items(self) -> Iterator[tuple[str, int]]:
        return iter(zip(self._tokens, self._freqs))

    def to_json(self) -> dict:
        return {"tokens": self._tokens, "freqs": self._freqs}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        vocab = cls()
        for token, freq in zip(obj["tokens"], obj["freqs"]):
            idx = len(vocab._tokens)
            vocab._token_to_id[token] = idx
            vocab._tokens.append(token)
            vocab._freqs.append(int(freq))
            vocab.total += int(freq)
        return vocab


def build_vocab(
    sentences: Iterable[Sentence],
    specials: tuple[str, ...] = (),
) -> Vocabulary:
    """Count token occurrences over a sentence stream.

    ``specials`` are inserted first with frequency 0 (reserved ids for the
    encoder, e.g. an unknown-token slot).
    """
    vocab = Vocabulary()
    for token in specials:
        vocab.add(token, count=0)
    for sentence in sentences:
        for token in sentence.tokens:
            vocab.add(token)
    return vocab
