"""Training: contrastive phrase alignment, segmentation BCE, batching.

The alignment objective is a bidirectional in-batch softmax over phrase
vectors: source phrases are encoded under dropout mask z, target phrases
under an independently sampled mask z', and each direction's denominator
ranges over all K target (resp. source) phrases of the batch.  The
segmentation objective is mean binary cross-entropy over balanced labeled
spans.  The combined loss is ``l_align + beta * l_seg``.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import torch

from .corpus import Sentence, SentencePair, Vocabulary
from .encoder import DropoutMask, PhraseEncoder, token_ids
from .extract import PhrasePair, PhraseSpan, segmentation_examples
from .util import stable_hash64


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults follow the reference recipe (lr 5e-5,
    dropout 0.2, per-device batch 64, beta 1) with a desk-scale step count."""

    learning_rate: float = 5e-5
    dropout: float = 0.2
    batch_size: int = 64
    steps: int = 2000
    beta: float = 1.0
    max_pairs_per_sentence: int = 4
    temperature: float = 1.0
    seed: int = 0
    # Alternative reading of the in-batch denominator: candidate phrases
    # re-encoded under the query-side mask instead of their own.
    shared_mask_negatives: bool = False

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size >= 1 and steps >= 0 required")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "TrainConfig":
        return cls(**dict(obj))


@dataclass
class TrainingBatch:
    """One optimization step's worth of data.

    ``phrase_pairs`` (size K) drive the contrastive loss; ``seg_examples``
    are (span, label) pairs over the batch's sentences, both sides mixed.
    """

    pairs: list[SentencePair]
    phrase_pairs: list[PhrasePair]
    seg_examples: list[tuple[PhraseSpan, int]] = field(default_factory=list)


class _EncodingCache:
    """Per-(sentence, mask) hidden states, reused across heads in a step."""

    def __init__(self, model: PhraseEncoder, vocab: Vocabulary) -> None:
        self.model = model
        self.vocab = vocab
        self._hidden: dict[tuple, torch.Tensor] = {}

    def hidden(self, sentence: Sentence, mask: DropoutMask) -> torch.Tensor:
        key = (sentence, mask.seed, mask.rate)
        h = self._hidden.get(key)
        if h is None:
            h = self.model.encode(token_ids(sentence.tokens, self.vocab), mask)
            self._hidden[key] = h
        return h


def _phrase_matrix(
    cache: _EncodingCache,
    spans: Sequence[PhraseSpan],
    mask: DropoutMask,
) -> torch.Tensor:
    rows = [
        cache.model.phrase_rep(cache.hidden(sp.sentence, mask), sp.s, sp.e)
        for sp in spans
    ]
    return torch.stack(rows)


def alignment_loss(
    batch: TrainingBatch,
    model: PhraseEncoder,
    vocab: Vocabulary,
    z: DropoutMask,
    z_prime: DropoutMask,
    temperature: float = 1.0,
    shared_mask_negatives: bool = False,
    cache: _EncodingCache | None = None,
) -> torch.Tensor:
    """Bidirectional in-batch contrastive loss over the K phrase pairs.

    K = 1 gives exactly 0; K = 0 returns a parameter-free 0.  Scores are
    dot products divided by ``temperature``; each direction is computed
    with log-sum-exp stabilization.
    """
    k = len(batch.phrase_pairs)
    if k == 0:
        return torch.zeros((), dtype=model.param_dtype)
    cache = cache if cache is not None else _EncodingCache(model, vocab)
    src_spans = [p.src for p in batch.phrase_pairs]
    tgt_spans = [p.tgt for p in batch.phrase_pairs]
    hx = _phrase_matrix(cache, src_spans, z)
    hy = _phrase_matrix(cache, tgt_spans, z_prime)
    targets = torch.arange(k)
    scores = hx @ hy.T / temperature
    if not bool(torch.isfinite(scores).all()):
        raise FloatingPointError("non-finite phrase similarity scores")
    if not shared_mask_negatives:
        l_xy = torch.nn.functional.cross_entropy(scores, targets)
        l_yx = torch.nn.functional.cross_entropy(scores.T, targets)
        return l_xy + l_yx
    # Alternative denominator: candidates carry the query side's mask.
    hy_z = _phrase_matrix(cache, tgt_spans, z)
    hx_zp = _phrase_matrix(cache, src_spans, z_prime)
    num_xy = (hx * hy).sum(dim=1) / temperature
    den_xy = torch.logsumexp(hx @ hy_z.T / temperature, dim=1)
    num_yx = (hy * hx).sum(dim=1) / temperature
    den_yx = torch.logsumexp(hy @ hx_zp.T / temperature, dim=1)
    return (den_xy - num_xy).mean() + (den_yx - num_yx).mean()


def segmentation_loss(
    batch: TrainingBatch,
    model: PhraseEncoder,
    vocab: Vocabulary,
    z: DropoutMask,
    cache: _EncodingCache | None = None,
) -> torch.Tensor:
    """Mean BCE over the batch's labeled spans (probabilities clamped)."""
    if not batch.seg_examples:
        raise ValueError("segmentation loss needs a non-empty span set")
    cache = cache if cache is not None else _EncodingCache(model, vocab)
    by_sentence: dict[Sentence, list[tuple[int, int, int]]] = {}
    for span, label in batch.seg_examples:
        by_sentence.setdefault(span.sentence, []).append((span.s, span.e, label))
    probs, labels = [], []
    for sentence, rows in by_sentence.items():
        h = cache.hidden(sentence, z)
        probs.append(model.span_probs(h, [(s, e) for s, e, _ in rows]))
        labels.extend(label for _, _, label in rows)
    p = torch.cat(probs)
    t = torch.as_tensor(labels, dtype=p.dtype)
    return -(t * torch.log(p) + (1 - t) * torch.log(1 - p)).mean()


def step_masks(cfg: TrainConfig, step: int) -> tuple[DropoutMask, DropoutMask]:
    """The two independently seeded dropout masks for one step."""
    z = DropoutMask(stable_hash64("mask-z", cfg.seed, step), cfg.dropout)
    z_prime = DropoutMask(stable_hash64("mask-zp", cfg.seed, step), cfg.dropout)
    return z, z_prime


def make_optimizer(model: PhraseEncoder, cfg: TrainConfig) -> torch.optim.Adam:
    """Adam state (first/second moments + step counter) at the config lr."""
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def train_step(
    batch: TrainingBatch,
    model: PhraseEncoder,
    vocab: Vocabulary,
    opt: torch.optim.Optimizer,
    cfg: TrainConfig,
    step: int = 0,
) -> dict:
    """One combined-loss update; returns the step's loss components.

    With beta = 0 the autograd graph contains only the alignment loss, so
    the parameter update is bit-identical to alignment-only training; the
    segmentation component is still evaluated (without graph) for metrics.
    Non-finite gradients reject the step (no update is applied).
    """
    z, z_prime = step_masks(cfg, step)
    cache = _EncodingCache(model, vocab)
    l_align = alignment_loss(
        batch, model, vocab, z, z_prime,
        temperature=cfg.temperature,
        shared_mask_negatives=cfg.shared_mask_negatives,
        cache=cache,
    )
    if batch.seg_examples:
        if cfg.beta > 0:
            l_seg = segmentation_loss(batch, model, vocab, z, cache=cache)
            total = l_align + cfg.beta * l_seg
        else:
            with torch.no_grad():
                l_seg = segmentation_loss(
                    batch, model, vocab, z, cache=_EncodingCache(model, vocab)
                )
            total = l_align
    else:
        l_seg = torch.zeros(())
        total = l_align
    if not bool(torch.isfinite(total)):
        raise FloatingPointError(f"non-finite loss at step {step}")
    opt.zero_grad(set_to_none=True)
    if total.requires_grad:
        total.backward()
        for name, param in model.named_parameters():
            if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
                opt.zero_grad(set_to_none=True)
                raise FloatingPointError(
                    f"non-finite gradient in {name} at step {step}; step rejected"
                )
        opt.step()
    return {
        "step": step,
        "l_align": float(l_align.detach()),
        "l_seg": float(l_seg.detach()),
        "l_total": float(total.detach()),
    }


def make_batches(
    pairs: Sequence[SentencePair],
    extracted: Mapping[int, Sequence[PhrasePair]],
    cfg: TrainConfig,
    max_phrase_len: int = 8,
) -> Iterator[TrainingBatch]:
    """Endless stream of shuffled mixed-language batches.

    Sentence pairs from all configured corpora are shuffled together each
    epoch, so one batch's source contexts can span several languages.  At
    most ``cfg.max_pairs_per_sentence`` phrase pairs are drawn per sentence
    pair; segmentation examples are sampled per sentence with their own
    deterministic seeds.  The whole stream is a pure function of cfg.seed.
    """
    order_rng = random.Random(stable_hash64("batch-order", cfg.seed))
    epoch = 0
    while True:
        shuffled = list(pairs)
        order_rng.shuffle(shuffled)
        for lo in range(0, len(shuffled), cfg.batch_size):
            group = shuffled[lo : lo + cfg.batch_size]
            phrase_pairs: list[PhrasePair] = []
            seg: list[tuple[PhraseSpan, int]] = []
            for pair in group:
                available = list(extracted.get(pair.id, ()))
                if not available:
                    continue
                if len(available) > cfg.max_pairs_per_sentence:
                    draw_rng = random.Random(
                        stable_hash64("pair-draw", cfg.seed, epoch, pair.id)
                    )
                    chosen = draw_rng.sample(available, cfg.max_pairs_per_sentence)
                else:
                    chosen = available
                phrase_pairs.extend(chosen)
                for side, sentence in (("x", pair.x), ("y", pair.y)):
                    spans = [
                        p.src if side == "x" else p.tgt for p in available
                    ]
                    seg_rng = random.Random(
                        stable_hash64("seg-draw", cfg.seed, epoch, pair.id, side)
                    )
                    seg.extend(
                        segmentation_examples(spans, sentence, seg_rng, max_phrase_len)
                    )
            yield TrainingBatch(group, phrase_pairs, seg)
        epoch += 1


def train(
    pairs: Sequence[SentencePair],
    extracted: Mapping[int, Sequence[PhrasePair]],
    vocab: Vocabulary,
    model: PhraseEncoder,
    cfg: TrainConfig,
    metrics_path: str | None = None,
    max_phrase_len: int = 8,
    log_every: int = 0,
) -> list[dict]:
    """Run ``cfg.steps`` updates; returns (and optionally logs) per-step
    metrics as ``{"step", "l_align", "l_seg", "l_total"}`` rows."""
    opt = make_optimizer(model, cfg)
    batches = make_batches(pairs, extracted, cfg, max_phrase_len)
    metrics: list[dict] = []
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for step in range(cfg.steps):
            row = train_step(next(batches), model, vocab, opt, cfg, step)
            metrics.append(row)
            if sink is not None:
                sink.write(json.dumps(row) + "\n")
            if log_every and (step + 1) % log_every == 0:
                print(
                    f"step {step + 1}/{cfg.steps} "
                    f"l_align={row['l_align']:.4f} l_seg={row['l_seg']:.4f}"
                )
    finally:
        if sink is not None:
            sink.close()
    return metrics
