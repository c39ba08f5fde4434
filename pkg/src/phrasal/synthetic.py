"""Synthetic cipher bitext for end-to-end verification.

A deterministic word cipher maps a 200-type source vocabulary onto a
200-type target vocabulary.  Sentences are random token sequences; the
target side is the word-by-word image with two noise processes: local
reordering (adjacent swap) and 2->1 merges (two source tokens emit one
target token).  Both are lexically triggered: fixed subsets of the
vocabulary (~10% swap triggers, ~5% merge triggers) deterministically
fire the rewrite whenever they occur, so which spans are consistent is a
function of the visible token sequence.  That keeps the by-construction
span labels learnable by a segmentation head, while true word alignments
are recorded for gold phrase pairs.

``end_to_end`` drives the whole pipeline on such a corpus: align (Model 1
both ways + grow-diag-final-and), extract, train, index gold targets with
distractors, and report retrieval accuracy plus segmentation quality.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aligner import Alignment, EMConfig, align_corpus
from .corpus import Sentence, SentencePair, build_vocab
from .encoder import EncoderConfig, PhraseEncoder, UNK_TOKEN
from .extract import (
    ExtractionConfig,
    PhraseSpan,
    apply_filters,
    enumerate_consistent,
)
from .pipeline import GoldItem, eval_with_distractors
from .segmenter import segment
from .trainer import TrainConfig, train
from .util import stable_hash64


@dataclass(frozen=True)
class CipherConfig:
    vocab_size: int = 200
    n_train: int = 2000
    n_gold: int = 200
    n_distractors: int = 10_000
    min_len: int = 4
    max_len: int = 12
    p_reorder: float = 0.10
    p_merge: float = 0.05
    seed: int = 0
    src_lang: str = "xx"
    tgt_lang: str = "yy"


class CipherCorpus:
    """Deterministic generator; every draw flows from ``cfg.seed``.

    Trigger sets are carved out of the source vocabulary: a token from
    ``swap_triggers`` swaps its image with the next token's, a token from
    ``merge_triggers`` absorbs the next token into a single target token.
    Rewrites consume two source positions and never overlap.
    """

    def __init__(self, cfg: CipherConfig = CipherConfig()) -> None:
        self.cfg = cfg
        rng = random.Random(stable_hash64("cipher-map", cfg.seed))
        self.src_words = [f"sw{i:03d}" for i in range(cfg.vocab_size)]
        targets = [f"tw{i:03d}" for i in range(cfg.vocab_size)]
        rng.shuffle(targets)
        self.mapping = dict(zip(self.src_words, targets))
        shuffled = list(self.src_words)
        rng.shuffle(shuffled)
        n_swap = round(cfg.p_reorder * cfg.vocab_size)
        n_merge = round(cfg.p_merge * cfg.vocab_size)
        self.swap_triggers = frozenset(shuffled[:n_swap])
        self.merge_triggers = frozenset(shuffled[n_swap : n_swap + n_merge])

    def generate_pair(self, rng: random.Random, pair_id: int) -> tuple[SentencePair, Alignment]:
        cfg = self.cfg
        n = rng.randint(cfg.min_len, cfg.max_len)
        xs = rng.choices(self.src_words, k=n)
        ys: list[str] = []
        links: set[tuple[int, int]] = set()
        i = 0
        while i < n:
            j = len(ys)
            if xs[i] in self.merge_triggers and i + 1 < n:
                # two source tokens emit one target token
                ys.append(self.mapping[xs[i]])
                links.add((i, j))
                links.add((i + 1, j))
                i += 2
            elif xs[i] in self.swap_triggers and i + 1 < n:
                # images emitted in reversed order
                ys.append(self.mapping[xs[i + 1]])
                ys.append(self.mapping[xs[i]])
                links.add((i, j + 1))
                links.add((i + 1, j))
                i += 2
            else:
                ys.append(self.mapping[xs[i]])
                links.add((i, j))
                i += 1
        pair = SentencePair(
            Sentence(tuple(xs), cfg.src_lang, pair_id),
            Sentence(tuple(ys), cfg.tgt_lang, pair_id),
            pair_id,
        )
        return pair, Alignment(frozenset(links), n, len(ys))

    def generate(
        self, count: int, stream: str, start_id: int = 0
    ) -> tuple[list[SentencePair], list[Alignment]]:
        rng = random.Random(stable_hash64("cipher-gen", self.cfg.seed, stream))
        pairs, aligns = [], []
        for k in range(count):
            pair, align = self.generate_pair(rng, start_id + k)
            pairs.append(pair)
            aligns.append(align)
        return pairs, aligns

    def gold_items(
        self, pairs: Sequence[SentencePair], aligns: Sequence[Alignment]
    ) -> list[GoldItem]:
        """One consistent (by the true alignment) span pair per sentence."""
        rng = random.Random(stable_hash64("cipher-gold", self.cfg.seed))
        items = []
        for pair, align in zip(pairs, aligns):
            candidates = enumerate_consistent(pair, align, max_len=3)
            if not candidates:
                continue
            chosen = rng.choice(candidates)
            items.append(
                GoldItem(
                    query=chosen.src,
                    gold_context=chosen.tgt.sentence.text,
                    gold_s=chosen.tgt.s,
                    gold_e=chosen.tgt.e,
                )
            )
        return items

    def distractor_spans(self, count: int, max_len: int = 4) -> list[PhraseSpan]:
        """Random spans over fresh monolingual target sentences."""
        rng = random.Random(stable_hash64("cipher-distract", self.cfg.seed))
        n_sentences = max(1, count // 6)
        pairs, _ = self.generate(n_sentences, "distractor-src", start_id=10_000_000)
        sentences = [p.y for p in pairs]
        spans = []
        while len(spans) < count:
            sent = sentences[rng.randrange(len(sentences))]
            s = rng.randrange(len(sent))
            e = min(len(sent) - 1, s + rng.randint(0, max_len - 1))
            spans.append(PhraseSpan(sent, s, e))
        return spans


def true_phrase_labels(
    pair: SentencePair, align: Alignment, max_len: int = 8
) -> dict[tuple[int, int], int]:
    """Target-side span labels by construction: 1 iff the span belongs to
    some consistent pair under the true alignment."""
    positives = {
        (pp.tgt.s, pp.tgt.e)
        for pp in enumerate_consistent(pair, align, max_len)
    }
    n = len(pair.y)
    return {
        (s, e): int((s, e) in positives)
        for s in range(n)
        for e in range(s, min(n, s + max_len))
    }


def ranking_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(scores)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class DeskRunConfig:
    """Desk-scale end-to-end settings (model sizes, training recipe)."""

    cipher: CipherConfig = field(default_factory=CipherConfig)
    d: int = 64
    layers: int = 2
    heads: int = 4
    o: int = 32
    dropout: float = 0.2
    steps: int = 2000
    batch_size: int = 24
    learning_rate: float = 3e-3
    temperature: float = 0.2
    beta: float = 3.0
    max_pairs_per_sentence: int = 8
    max_phrase_len: int = 8
    em_iterations: int = 5
    n_auc_sentences: int = 1000


def end_to_end(cfg: DeskRunConfig = DeskRunConfig(), log: bool = False) -> dict:
    """Full pipeline on the cipher corpus; returns a metrics dict.

    Keys: acc_trained, acc_untrained, seg_auc, subset_violations,
    n_gold, index_size, and per-stage wall-clock seconds.
    """
    timings: dict[str, float] = {}

    def tick(name, t0):
        timings[name] = round(time.perf_counter() - t0, 3)
        if log:
            print(f"[{name}] {timings[name]:.1f}s")
        return time.perf_counter()

    t0 = time.perf_counter()
    corpus = CipherCorpus(cfg.cipher)
    train_pairs, _ = corpus.generate(cfg.cipher.n_train, "train")
    gold_pairs, gold_aligns = corpus.generate(
        cfg.cipher.n_gold, "gold", start_id=1_000_000
    )
    gold = corpus.gold_items(gold_pairs, gold_aligns)
    distractors = corpus.distractor_spans(cfg.cipher.n_distractors)
    t0 = tick("generate", t0)

    alignments = align_corpus(train_pairs, EMConfig(iterations=cfg.em_iterations))
    t0 = tick("align", t0)

    vocab_x = build_vocab(p.x for p in train_pairs)
    vocab_y = build_vocab(p.y for p in train_pairs)
    ext_cfg = ExtractionConfig(max_phrase_len=cfg.max_phrase_len)
    extracted = {}
    for pair, align in zip(train_pairs, alignments):
        pairs_for = enumerate_consistent(pair, align, cfg.max_phrase_len)
        extracted[pair.id] = apply_filters(pairs_for, vocab_x, vocab_y, ext_cfg)
    t0 = tick("extract", t0)

    vocab = build_vocab(
        [p.x for p in train_pairs] + [p.y for p in train_pairs],
        specials=(UNK_TOKEN,),
    )
    enc_cfg = EncoderConfig(
        vocab_size=len(vocab), d=cfg.d, layers=cfg.layers, heads=cfg.heads,
        o=cfg.o, dropout=cfg.dropout,
    )
    model = PhraseEncoder(enc_cfg, seed=cfg.cipher.seed)
    untrained = PhraseEncoder(enc_cfg, seed=cfg.cipher.seed + 1)
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate, dropout=cfg.dropout,
        batch_size=cfg.batch_size, steps=cfg.steps, seed=cfg.cipher.seed,
        temperature=cfg.temperature, beta=cfg.beta,
        max_pairs_per_sentence=cfg.max_pairs_per_sentence,
    )
    metrics = train(
        train_pairs, extracted, vocab, model, train_cfg,
        max_phrase_len=cfg.max_phrase_len,
        log_every=200 if log else 0,
    )
    t0 = tick("train", t0)

    acc_trained, idx = eval_with_distractors(gold, distractors, model, vocab)
    acc_untrained, _ = eval_with_distractors(gold, distractors, untrained, vocab)
    t0 = tick("eval", t0)

    auc, violations = segmentation_quality(corpus, model, vocab, cfg)
    t0 = tick("segmentation", t0)

    return {
        "acc_trained": acc_trained,
        "acc_untrained": acc_untrained,
        "seg_auc": auc,
        "subset_violations": violations,
        "n_gold": len(gold),
        "index_size": len(idx),
        "final_l_align": metrics[-1]["l_align"] if metrics else None,
        "final_l_seg": metrics[-1]["l_seg"] if metrics else None,
        "timings": timings,
    }


def segmentation_quality(
    corpus: CipherCorpus,
    model: PhraseEncoder,
    vocab,
    cfg: DeskRunConfig,
) -> tuple[float, int]:
    """Span-ranking AUC against by-construction labels, plus the count of
    0.9-threshold spans missing from the 0.7-threshold output."""
    pairs, aligns = corpus.generate(
        cfg.n_auc_sentences, "seg-eval", start_id=2_000_000
    )
    scores: list[float] = []
    labels: list[int] = []
    violations = 0
    for pair, align in zip(pairs, aligns):
        labelled = true_phrase_labels(pair, align, cfg.max_phrase_len)
        scored = segment(pair.y, model, vocab, threshold=0.0 + 1e-12,
                         max_len=cfg.max_phrase_len)
        for span, score in scored:
            scores.append(score)
            labels.append(labelled[(span.s, span.e)])
        strict = {(sp.s, sp.e) for sp, _ in segment(
            pair.y, model, vocab, 0.9, cfg.max_phrase_len)}
        loose = {(sp.s, sp.e) for sp, _ in segment(
            pair.y, model, vocab, 0.7, cfg.max_phrase_len)}
        violations += len(strict - loose)
    return ranking_auc(np.array(scores), np.array(labels)), violations
