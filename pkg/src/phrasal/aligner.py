"""Word alignment: IBM Model 1 EM training, Viterbi decoding, symmetrization.

The translation table t(f|e) is trained by plain EM from a uniform
initialization over co-occurring pairs, which keeps corpus log-likelihood
exactly non-decreasing.  The smoothing epsilon is applied only as a floor
for unseen (e, f) events at decode time, never mixed into the M-step, so
the monotonicity guarantee is not perturbed.

Directional Viterbi alignments are merged by intersection, union, or
grow-diag-final-and.  Pharaoh-format files are both emitted and accepted,
so alignments from external tools can be dropped into the extraction step.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .corpus import SentencePair

#: Distinguished NULL source token; never appears in emitted alignments.
NULL = None


@dataclass(frozen=True)
class Alignment:
    """Word-level links between a source and a target sentence.

    Links are (i, j) with ``0 <= i < src_len`` and ``0 <= j < tgt_len``,
    in source-major order regardless of which direction produced them.
    """

    links: frozenset[tuple[int, int]]
    src_len: int
    tgt_len: int

    def __post_init__(self) -> None:
        for i, j in self.links:
            if not (0 <= i < self.src_len and 0 <= j < self.tgt_len):
                raise ValueError(
                    f"link ({i},{j}) outside {self.src_len}x{self.tgt_len}"
                )


@dataclass(frozen=True)
class EMConfig:
    iterations: int = 5
    epsilon: float = 1e-6
    use_null: bool = True

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


class TranslationTable:
    """Sparse conditional probabilities t(f | e).

    Rows are keyed by the conditioning source token (``None`` is the NULL
    token); each stored row sums to 1.  Lookups of never-seen (e, f) pairs
    return the epsilon floor.
    """

    def __init__(self, epsilon: float = 1e-6) -> None:
        self.rows: dict[str | None, dict[str, float]] = {}
        self.epsilon = epsilon

    def prob(self, e: str | None, f: str) -> float:
        row = self.rows.get(e)
        if row is None:
            return self.epsilon
        return row.get(f, self.epsilon)

    def dump_rows(self) -> Iterator[dict]:
        """JSONL-ready rows ``{"e": ..., "f": ..., "p": ...}``."""
        for e, row in self.rows.items():
            for f, p in row.items():
                yield {"e": e, "f": f, "p": p}


class EmptyCorpusError(ValueError):
    pass


def _source_tokens(pair: SentencePair, reverse: bool) -> Sequence[str]:
    return pair.y.tokens if reverse else pair.x.tokens


def _target_tokens(pair: SentencePair, reverse: bool) -> Sequence[str]:
    return pair.x.tokens if reverse else pair.y.tokens


def corpus_log_likelihood(
    pairs: Sequence[SentencePair],
    table: TranslationTable,
    use_null: bool = True,
    reverse: bool = False,
) -> float:
    """Model 1 log-likelihood of the corpus under ``table`` (64-bit sums).

    Per target token: log of the mean of t(f|e) over the source tokens
    (plus NULL when enabled).  The constant sentence-length prior is
    omitted; it does not affect monotonicity comparisons.
    """
    total = 0.0
    for pair in pairs:
        src: list[str | None] = list(_source_tokens(pair, reverse))
        if use_null:
            src.append(NULL)
        if not src:
            continue
        for f in _target_tokens(pair, reverse):
            mass = sum(table.prob(e, f) for e in src)
            total += math.log(mass / len(src))
    return total


def train_model1(
    corpus: Iterable[SentencePair],
    cfg: EMConfig = EMConfig(),
    reverse: bool = False,
    log_likelihoods: list[float] | None = None,
) -> TranslationTable:
    """Train a Model 1 table with ``cfg.iterations`` EM passes.

    ``reverse=True`` swaps the roles of the pair's sides, i.e. trains
    t(x-token | y-token).  Pairs with an empty side are skipped (counted,
    not fatal); an entirely empty corpus raises :class:`EmptyCorpusError`.
    When ``log_likelihoods`` is given, the corpus log-likelihood under the
    table *after* each iteration is appended to it.
    """
    pairs = [
        p for p in corpus
        if len(_source_tokens(p, reverse)) and len(_target_tokens(p, reverse))
    ]
    if not pairs:
        raise EmptyCorpusError("no usable sentence pairs")

    # Uniform init over co-occurring (e, f); rows normalized from the start.
    cooc: dict[str | None, set[str]] = defaultdict(set)
    for pair in pairs:
        src: list[str | None] = list(_source_tokens(pair, reverse))
        if cfg.use_null:
            src.append(NULL)
        tgt = _target_tokens(pair, reverse)
        for e in src:
            cooc[e].update(tgt)
    table = TranslationTable(epsilon=cfg.epsilon)
    for e, fs in cooc.items():
        u = 1.0 / len(fs)
        table.rows[e] = {f: u for f in fs}

    for _ in range(cfg.iterations):
        counts: dict[str | None, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        row_totals: dict[str | None, float] = defaultdict(float)
        for pair in pairs:
            src = list(_source_tokens(pair, reverse))
            if cfg.use_null:
                src.append(NULL)
            for f in _target_tokens(pair, reverse):
                probs = [table.rows[e].get(f, 0.0) for e in src]
                denom = sum(probs)
                if denom <= 0.0:
                    continue
                for e, p in zip(src, probs):
                    delta = p / denom
                    counts[e][f] += delta
                    row_totals[e] += delta
        new_rows: dict[str | None, dict[str, float]] = {}
        for e, row in counts.items():
            total = row_totals[e]
            new_rows[e] = {f: c / total for f, c in row.items()}
        table.rows = new_rows
        if log_likelihoods is not None:
            log_likelihoods.append(
                corpus_log_likelihood(pairs, table, cfg.use_null, reverse)
            )
    return table


def viterbi_align(
    pair: SentencePair,
    table: TranslationTable,
    direction: str = "fwd",
) -> Alignment:
    """Greedy Model 1 decoding: each generated token links to its best
    conditioning token.

    ``fwd`` expects a table trained on the pair's natural orientation
    (t(y|x)); ``rev`` expects ``reverse``-trained t(x|y).  Either way the
    returned links are (x-index, y-index).  Ties keep the smallest source
    index; NULL wins only on strict improvement and its links are dropped.
    """
    if direction not in ("fwd", "rev"):
        raise ValueError(f"direction must be fwd or rev, got {direction!r}")
    reverse = direction == "rev"
    src = _source_tokens(pair, reverse)
    tgt = _target_tokens(pair, reverse)
    links: set[tuple[int, int]] = set()
    for j, f in enumerate(tgt):
        best_i, best_p = None, -1.0
        for i, e in enumerate(src):
            p = table.prob(e, f)
            if p > best_p:
                best_i, best_p = i, p
        if table.prob(NULL, f) > best_p:
            best_i = None
        if best_i is not None:
            links.add((j, best_i) if reverse else (best_i, j))
    return Alignment(frozenset(links), src_len=len(pair.x), tgt_len=len(pair.y))


_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def _grow_diag_final_and(
    fwd: frozenset[tuple[int, int]],
    rev: frozenset[tuple[int, int]],
    src_len: int,
    tgt_len: int,
) -> set[tuple[int, int]]:
    union = fwd | rev
    result = set(fwd & rev)
    src_aligned = {i for i, _ in result}
    tgt_aligned = {j for _, j in result}

    # grow-diag: sweep the grid in row-major order against the live set,
    # attaching union neighbors with an unaligned endpoint, until fixpoint
    added = True
    while added:
        added = False
        for i in range(src_len):
            for j in range(tgt_len):
                if (i, j) not in result:
                    continue
                for di, dj in _NEIGHBORS:
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < src_len and 0 <= nj < tgt_len):
                        continue
                    if (ni, nj) not in union or (ni, nj) in result:
                        continue
                    if ni not in src_aligned or nj not in tgt_aligned:
                        result.add((ni, nj))
                        src_aligned.add(ni)
                        tgt_aligned.add(nj)
                        added = True

    # final-and over each directional alignment: both endpoints unaligned
    for cand in (fwd, rev):
        for i, j in sorted(cand):
            if i not in src_aligned and j not in tgt_aligned:
                result.add((i, j))
                src_aligned.add(i)
                tgt_aligned.add(j)
    return result


def symmetrize(fwd: Alignment, rev: Alignment, heuristic: str = "grow-diag-final-and") -> Alignment:
    """Merge two directional alignments over the same sentence pair."""
    if (fwd.src_len, fwd.tgt_len) != (rev.src_len, rev.tgt_len):
        raise ValueError(
            f"mismatched sentence lengths: {fwd.src_len}x{fwd.tgt_len} vs "
            f"{rev.src_len}x{rev.tgt_len}"
        )
    if heuristic == "intersection":
        links = fwd.links & rev.links
    elif heuristic == "union":
        links = fwd.links | rev.links
    elif heuristic == "grow-diag-final-and":
        links = _grow_diag_final_and(fwd.links, rev.links, fwd.src_len, fwd.tgt_len)
    else:
        raise ValueError(f"unknown heuristic {heuristic!r}")
    return Alignment(frozenset(links), fwd.src_len, fwd.tgt_len)


def align_corpus(
    pairs: Sequence[SentencePair],
    cfg: EMConfig = EMConfig(),
    heuristic: str = "grow-diag-final-and",
    log_likelihoods: list[float] | None = None,
) -> list[Alignment]:
    """Train both directions, decode, and symmetrize every pair."""
    fwd_table = train_model1(pairs, cfg, reverse=False, log_likelihoods=log_likelihoods)
    rev_table = train_model1(pairs, cfg, reverse=True)
    out = []
    for pair in pairs:
        fwd = viterbi_align(pair, fwd_table, "fwd")
        rev = viterbi_align(pair, rev_table, "rev")
        out.append(symmetrize(fwd, rev, heuristic))
    return out


def format_pharaoh(alignment: Alignment) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(alignment.links))


def write_pharaoh(alignments: Iterable[Alignment], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in alignments:
            fh.write(format_pharaoh(a))
            fh.write("\n")


def read_pharaoh(path: str, pairs: Sequence[SentencePair]) -> list[Alignment]:
    """Parse a Pharaoh file against the sentence pairs it refers to.

    One line per pair, space-separated ``i-j`` tokens, 0-indexed.  The
    sentence pairs supply the lengths used for bounds validation.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) != len(pairs):
        raise ValueError(
            f"{path}: {len(lines)} alignment lines for {len(pairs)} pairs"
        )
    out = []
    for line, pair in zip(lines, pairs):
        links = set()
        for tok in line.split():
            i_str, _, j_str = tok.partition("-")
            links.add((int(i_str), int(j_str)))
        out.append(Alignment(frozenset(links), len(pair.x), len(pair.y)))
    return out
