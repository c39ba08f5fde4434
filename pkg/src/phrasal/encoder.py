"""Contextual phrase encoder with an alignment head and a segmentation head.

A small bidirectional self-attention trunk (learned token + position
embeddings) produces one hidden state per token.  A phrase (s, e) is
represented by the concatenation [H_s; H_e]: the alignment head maps it
through one hidden layer to an o-dimensional vector used for indexing and
search, and the segmentation head maps it linearly to a single logit whose
sigmoid is the probability that the span is a meaningful phrase.  Both
heads share the trunk.

Dropout is applied through explicit mask objects so a forward pass is a
pure function of (input, params, mask): the same mask replays bitwise
identically, and two independently seeded masks give the two views needed
for contrastive training.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import Vocabulary
from .util import stable_hash64

UNK_TOKEN = "<unk>"

_CKPT_MAGIC = b"PHRZ"
_CKPT_VERSION = 1

# span_prob outputs are clamped into this open interval so downstream logs
# are always finite
_PROB_EPS = 1e-7


@dataclass(frozen=True)
class EncoderConfig:
    """Sizes and rates for the encoder.

    ``d`` is the trunk hidden size and ``o`` the alignment-head output
    size; defaults are desk-scale (the reference setup uses d=768, o=128).
    ``align_hidden=False`` collapses the alignment head to a single linear
    map, which is occasionally useful for tests.
    """

    vocab_size: int
    d: int = 64
    layers: int = 2
    heads: int = 2
    o: int = 32
    dropout: float = 0.2
    max_positions: int = 128
    ffn_multiplier: int = 4
    align_hidden: bool = True

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.o < 1:
            raise ValueError("o must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(**obj)


@dataclass(frozen=True)
class DropoutMask:
    """Seed-determined Bernoulli keep-masks for one forward pass.

    ``apply`` is a pure function of (seed, site, shape): replaying the same
    mask object reproduces identical keep patterns.  Rate 0 is the all-keep
    mask used at inference.
    """

    seed: int
    rate: float

    def apply(self, site: str, x: torch.Tensor) -> torch.Tensor:
        if self.rate == 0.0:
            return x
        gen = torch.Generator().manual_seed(
            stable_hash64("dropout", self.seed, site, tuple(x.shape))
        )
        keep = torch.rand(x.shape, generator=gen) >= self.rate
        return x * keep.to(x.dtype) / (1.0 - self.rate)

    @staticmethod
    def inference() -> "DropoutMask":
        return DropoutMask(seed=0, rate=0.0)


class _Block(nn.Module):
    """Self-attention + feed-forward, post-layer-norm residuals."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.heads = cfg.heads
        self.q = nn.Linear(cfg.d, cfg.d)
        self.k = nn.Linear(cfg.d, cfg.d)
        self.v = nn.Linear(cfg.d, cfg.d)
        self.out = nn.Linear(cfg.d, cfg.d)
        self.ln1 = nn.LayerNorm(cfg.d)
        self.fc1 = nn.Linear(cfg.d, cfg.ffn_multiplier * cfg.d)
        self.fc2 = nn.Linear(cfg.ffn_multiplier * cfg.d, cfg.d)
        self.ln2 = nn.LayerNorm(cfg.d)

    def forward(self, h: torch.Tensor, mask: DropoutMask, site: str) -> torch.Tensor:
        length, d = h.shape
        hd = d // self.heads
        q = self.q(h).view(length, self.heads, hd).transpose(0, 1)
        k = self.k(h).view(length, self.heads, hd).transpose(0, 1)
        v = self.v(h).view(length, self.heads, hd).transpose(0, 1)
        scores = (q @ k.transpose(-1, -2)) / (hd**0.5)
        probs = torch.softmax(scores, dim=-1)
        probs = mask.apply(f"{site}.attn", probs)
        ctx = (probs @ v).transpose(0, 1).reshape(length, d)
        h = self.ln1(h + self.out(ctx))
        f = self.fc2(torch.nn.functional.gelu(self.fc1(h)))
        f = mask.apply(f"{site}.ffn", f)
        return self.ln2(h + f)


class PhraseEncoder(nn.Module):
    """Trunk plus the two heads; all trainable weights live here."""

    def __init__(self, config: EncoderConfig, seed: int | None = None) -> None:
        super().__init__()
        self.config = config
        self.token_emb = nn.Embedding(config.vocab_size, config.d)
        self.pos_emb = nn.Embedding(config.max_positions, config.d)
        self.emb_norm = nn.LayerNorm(config.d)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.layers))
        two_d = 2 * config.d
        self.align_hidden_layer = nn.Linear(two_d, two_d) if config.align_hidden else None
        self.align_out = nn.Linear(two_d, config.o)
        self.seg_head = nn.Linear(two_d, 1)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init: N(0, 0.02) weights, zero biases, unit norms."""
        gen = torch.Generator().manual_seed(stable_hash64("init", seed))
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, (nn.Linear, nn.Embedding)):
                    module.weight.normal_(0.0, 0.02, generator=gen)
                    if isinstance(module, nn.Linear) and module.bias is not None:
                        module.bias.zero_()
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()

    @property
    def param_dtype(self) -> torch.dtype:
        return self.token_emb.weight.dtype

    def encode(self, token_ids: Sequence[int], mask: DropoutMask) -> torch.Tensor:
        """Contextual hidden states, one row per token: shape (len, d)."""
        ids = torch.as_tensor(list(token_ids), dtype=torch.long)
        if ids.ndim != 1 or ids.numel() == 0:
            raise ValueError("token_ids must be a non-empty 1-D sequence")
        if ids.numel() > self.config.max_positions:
            raise ValueError(
                f"sequence of {ids.numel()} tokens exceeds "
                f"max_positions={self.config.max_positions}; truncate first"
            )
        if int(ids.min()) < 0 or int(ids.max()) >= self.config.vocab_size:
            raise ValueError("token id outside [0, vocab_size)")
        h = self.token_emb(ids) + self.pos_emb(torch.arange(ids.numel()))
        h = self.emb_norm(h)
        h = mask.apply("emb", h)
        for idx, block in enumerate(self.blocks):
            h = block(h, mask, f"layer{idx}")
        return h

    def _check_span(self, hidden: torch.Tensor, s: int, e: int) -> None:
        if not (0 <= s <= e < hidden.shape[0]):
            raise ValueError(
                f"span ({s},{e}) out of range for {hidden.shape[0]} rows"
            )

    def phrase_rep(self, hidden: torch.Tensor, s: int, e: int) -> torch.Tensor:
        """Alignment-head vector for span (s, e): shape (o,)."""
        self._check_span(hidden, s, e)
        x = torch.cat([hidden[s], hidden[e]])
        if self.align_hidden_layer is not None:
            x = torch.tanh(self.align_hidden_layer(x))
        return self.align_out(x)

    def phrase_reps(self, hidden: torch.Tensor, spans: Sequence[tuple[int, int]]) -> torch.Tensor:
        """Batched :meth:`phrase_rep` over spans of one sentence: (n, o)."""
        for s, e in spans:
            self._check_span(hidden, s, e)
        s_idx = torch.as_tensor([s for s, _ in spans], dtype=torch.long)
        e_idx = torch.as_tensor([e for _, e in spans], dtype=torch.long)
        x = torch.cat([hidden[s_idx], hidden[e_idx]], dim=1)
        if self.align_hidden_layer is not None:
            x = torch.tanh(self.align_hidden_layer(x))
        return self.align_out(x)

    def span_prob(self, hidden: torch.Tensor, i: int, j: int) -> torch.Tensor:
        """P(span (i, j) is a phrase): sigmoid of the segmentation logit,
        clamped into (0, 1) so downstream logs stay finite."""
        self._check_span(hidden, i, j)
        logit = self.seg_head(torch.cat([hidden[i], hidden[j]]))
        return torch.sigmoid(logit).squeeze(-1).clamp(_PROB_EPS, 1.0 - _PROB_EPS)

    def span_probs(self, hidden: torch.Tensor, spans: Sequence[tuple[int, int]]) -> torch.Tensor:
        """Batched :meth:`span_prob`: shape (n,)."""
        for i, j in spans:
            self._check_span(hidden, i, j)
        i_idx = torch.as_tensor([i for i, _ in spans], dtype=torch.long)
        j_idx = torch.as_tensor([j for _, j in spans], dtype=torch.long)
        logits = self.seg_head(torch.cat([hidden[i_idx], hidden[j_idx]], dim=1))
        return torch.sigmoid(logits).squeeze(-1).clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def gradients(loss: torch.Tensor, model: PhraseEncoder) -> dict[str, torch.Tensor]:
    """d(loss)/d(theta) for every named parameter.

    A loss with no dependence on the parameters yields all-zero gradients;
    a non-finite loss is an error.
    """
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    if not bool(torch.isfinite(loss)):
        raise ValueError("non-finite loss")
    named = list(model.named_parameters())
    if not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in named}
    grads = torch.autograd.grad(
        loss, [p for _, p in named], allow_unused=True
    )
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }


def token_ids(tokens: Iterable[str], vocab: Vocabulary) -> list[int]:
    """Map surface tokens to encoder ids, falling back to the UNK slot."""
    unk = vocab.id(UNK_TOKEN)
    out = []
    for tok in tokens:
        idx = vocab.id(tok)
        if idx is None:
            if unk is None:
                raise KeyError(
                    f"token {tok!r} not in vocabulary and no {UNK_TOKEN!r} slot"
                )
            idx = unk
        out.append(idx)
    return out


def save_checkpoint(model: PhraseEncoder, path: str) -> None:
    """Single-file binary checkpoint: JSON header + raw float32 payload.

    Round-trips bit-exactly; the payload is checksummed so truncation or
    corruption fails loudly at load time.
    """
    tensors = []
    chunks = []
    offset = 0
    for name, param in model.named_parameters():
        data = param.detach().to(torch.float32).contiguous().numpy().astype("<f4")
        raw = data.tobytes()
        tensors.append(
            {"name": name, "shape": list(param.shape), "offset": offset}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": _CKPT_VERSION,
        "config": model.config.to_json(),
        "tensors": tensors,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(_CKPT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str) -> PhraseEncoder:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int.from_bytes(blob[4:8], "little")
    if version != _CKPT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {_CKPT_VERSION}"
        )
    header_len = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    payload = blob[16 + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    config = EncoderConfig.from_json(header["config"])
    model = PhraseEncoder(config)
    expected = dict(model.named_parameters())
    if {t["name"] for t in header["tensors"]} != set(expected):
        raise CheckpointError(f"{path}: tensor names do not match config")
    with torch.no_grad():
        for entry in header["tensors"]:
            param = expected[entry["name"]]
            shape = tuple(entry["shape"])
            if tuple(param.shape) != shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {entry['name']}"
                )
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            data = np.frombuffer(
                payload, dtype="<f4", count=count, offset=start
            ).reshape(shape)
            param.copy_(torch.from_numpy(data.copy()))
    return model
