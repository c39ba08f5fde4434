"""Exact maximum-inner-product index over phrase vectors.

Storage is a flat float32 matrix plus per-entry metadata (phrase text,
context sentence, token positions, source line).  Search is exact: a fast
float32 scoring pass proposes candidates with a rigorous rounding-error
margin, and candidates are rescored in float64, so results — including
tie order (descending score, then ascending id) — always equal a 64-bit
brute-force scan.

On disk an index is a directory of three files: ``manifest.json``
(dimension, count, checksums, format version), ``vectors.bin`` (row-major
little-endian float32), and ``entries.jsonl`` (metadata, line number =
entry id).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch

from .util import sha256_file

FORMAT_VERSION = 1

# Forward-error slack for a float32 dot product of length n: the classic
# n*u/(1-n*u) bound with a little headroom, u = 2^-24.
_GAMMA_SLACK = 2.0


class IndexError_(ValueError):
    """Index construction/load failure (dimension, version, checksum)."""


@dataclass(frozen=True, eq=False)
class IndexEntry:
    """One indexed phrase occurrence.

    ``context_text`` is the full (tokenized, space-joined) context sentence
    and (s, e) are inclusive token positions of the phrase within it.
    Compared by identity (the vector field makes value equality awkward);
    the logical key is :meth:`identity`.
    """

    id: int
    vector: np.ndarray
    phrase_text: str
    context_text: str
    s: int
    e: int
    doc_id: int

    def identity(self) -> tuple[str, int, int]:
        return (self.context_text, self.s, self.e)


@dataclass(frozen=True)
class SearchHit:
    entry_id: int
    score: float


class PhraseIndex:
    """Immutable flat index; concurrent searches are safe."""

    def __init__(self, vectors: np.ndarray, entries: list[IndexEntry]) -> None:
        if vectors.ndim != 2:
            raise IndexError_("vectors must be a 2-D matrix")
        if vectors.shape[0] != len(entries):
            raise IndexError_("vector count does not match entry count")
        self._vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self._vectors64 = self._vectors.astype(np.float64)
        norms = np.linalg.norm(self._vectors64, axis=1)
        self._max_norm = float(norms.max()) if len(entries) else 0.0
        self.entries = entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def vector(self, entry_id: int) -> np.ndarray:
        return self._vectors[entry_id]

    def entry(self, entry_id: int) -> IndexEntry:
        return self.entries[entry_id]


def build(entries: Iterable[IndexEntry | tuple]) -> PhraseIndex:
    """Build an index, deduplicating (context, s, e) triples (first wins).

    Input entry ids are ignored; ids are reassigned densely in input order
    after deduplication.  All vectors must share one dimension.
    """
    seen: set[tuple[str, int, int]] = set()
    kept: list[IndexEntry] = []
    dim: int | None = None
    for entry in entries:
        vec = np.asarray(entry.vector, dtype=np.float32).ravel()
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise IndexError_(
                f"vector of dimension {vec.shape[0]} in a {dim}-d index"
            )
        identity = (entry.context_text, entry.s, entry.e)
        if identity in seen:
            continue
        seen.add(identity)
        kept.append(
            IndexEntry(
                id=len(kept),
                vector=vec,
                phrase_text=entry.phrase_text,
                context_text=entry.context_text,
                s=entry.s,
                e=entry.e,
                doc_id=entry.doc_id,
            )
        )
    if dim is None:
        dim = 0
    matrix = (
        np.stack([e.vector for e in kept])
        if kept
        else np.zeros((0, dim), dtype=np.float32)
    )
    return PhraseIndex(matrix, kept)


def search(
    index: PhraseIndex,
    queries: Sequence[np.ndarray] | np.ndarray,
    k: int,
) -> list[list[SearchHit]]:
    """Exact top-k by inner product for each query.

    Ties break by ascending entry id; fewer than k entries returns all of
    them.  Scores are reported from the float64 rescoring pass.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(queries, dtype=np.float32)
    if q.ndim == 1:
        if q.size == 0:
            return []
        q = q[None, :]
    if len(index) == 0:
        return [[] for _ in range(q.shape[0])]
    if q.shape[1] != index.dim:
        raise IndexError_(
            f"query dimension {q.shape[1]} does not match index dim {index.dim}"
        )
    k_eff = min(k, len(index))
    vectors = index._vectors
    vectors64 = index._vectors64
    q64 = q.astype(np.float64)
    # per-query float32 rounding bound: gamma_n * ||q|| * max ||v||
    gamma = _GAMMA_SLACK * (index.dim + 2) * 2.0**-24
    bounds = gamma * np.linalg.norm(q64, axis=1) * index._max_norm

    out: list[list[SearchHit]] = []
    pad = min(len(index) - k_eff, max(16, k_eff // 2))
    chunk = max(1, int(64 * 1024 * 1024 / (8 * max(1, len(index)))))
    for lo in range(0, q.shape[0], chunk):
        scores32 = q[lo : lo + chunk] @ vectors.T
        top_vals, top_idx = torch.topk(
            torch.from_numpy(scores32), k_eff + pad, dim=1
        )
        top_vals = top_vals.numpy()
        top_idx = top_idx.numpy()
        for r in range(scores32.shape[0]):
            thr = top_vals[r, k_eff - 1] - bounds[lo + r]
            if top_vals[r, -1] >= thr and (k_eff + pad) < len(index):
                # mass ties: fall back to scanning the whole row
                cand = np.nonzero(scores32[r] >= thr)[0]
            else:
                cand = top_idx[r][top_vals[r] >= thr]
            # row-wise product+sum keeps float64 scores independent of the
            # candidate-set shape (BLAS GEMV rounding varies with shape)
            s64 = (vectors64[cand] * q64[lo + r]).sum(axis=1)
            order = np.lexsort((cand, -s64))[:k_eff]
            out.append(
                [SearchHit(int(cand[t]), float(s64[t])) for t in order]
            )
    return out


def brute_force_search(
    index: PhraseIndex, queries: Sequence[np.ndarray] | np.ndarray, k: int
) -> list[list[SearchHit]]:
    """Straight-line float64 oracle: full scores, full sort.  Used by the
    verification suite; O(N log N) per query."""
    q = np.asarray(queries, dtype=np.float32)
    if q.ndim == 1:
        q = q[None, :]
    out = []
    ids = np.arange(len(index))
    for row in q.astype(np.float64):
        scores = (index._vectors64 * row).sum(axis=1)
        order = np.lexsort((ids, -scores))[: min(k, len(index))]
        out.append([SearchHit(int(i), float(scores[i])) for i in order])
    return out


def save(index: PhraseIndex, path: str) -> None:
    """Write ``manifest.json`` + ``vectors.bin`` + ``entries.jsonl``."""
    os.makedirs(path, exist_ok=True)
    vec_path = os.path.join(path, "vectors.bin")
    with open(vec_path, "wb") as fh:
        fh.write(index._vectors.astype("<f4").tobytes())
    ent_path = os.path.join(path, "entries.jsonl")
    with open(ent_path, "w", encoding="utf-8") as fh:
        for entry in index.entries:
            fh.write(
                json.dumps(
                    {
                        "phrase_text": entry.phrase_text,
                        "context_text": entry.context_text,
                        "s": entry.s,
                        "e": entry.e,
                        "doc_id": entry.doc_id,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
    manifest = {
        "format_version": FORMAT_VERSION,
        "dim": index.dim,
        "count": len(index),
        "vectors_sha256": sha256_file(vec_path),
        "entries_sha256": sha256_file(ent_path),
    }
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load(path: str) -> PhraseIndex:
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IndexError_(
            f"{path}: unsupported index format version "
            f"{manifest.get('format_version')}"
        )
    vec_path = os.path.join(path, "vectors.bin")
    ent_path = os.path.join(path, "entries.jsonl")
    if sha256_file(vec_path) != manifest["vectors_sha256"]:
        raise IndexError_(f"{path}: vectors.bin checksum mismatch")
    if sha256_file(ent_path) != manifest["entries_sha256"]:
        raise IndexError_(f"{path}: entries.jsonl checksum mismatch")
    dim, count = int(manifest["dim"]), int(manifest["count"])
    raw = np.fromfile(vec_path, dtype="<f4")
    if raw.size != dim * count:
        raise IndexError_(f"{path}: vectors.bin has wrong size")
    vectors = raw.reshape(count, dim)
    entries = []
    with open(ent_path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            row = json.loads(line)
            entries.append(
                IndexEntry(
                    id=i,
                    vector=vectors[i],
                    phrase_text=row["phrase_text"],
                    context_text=row["context_text"],
                    s=int(row["s"]),
                    e=int(row["e"]),
                    doc_id=int(row["doc_id"]),
                )
            )
    if len(entries) != count:
        raise IndexError_(f"{path}: entries.jsonl has wrong line count")
    return PhraseIndex(vectors, entries)
