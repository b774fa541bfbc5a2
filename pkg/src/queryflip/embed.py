"""Static unit-norm token vectors trained from corpus co-occurrence.

The vectors stand in for contextual embeddings: the masker's max-pooled
token scores and the greedy-matching similarity metric only need one
vector per token and rely on the unit-norm invariant (dot product equals
cosine). Training factors a PPMI co-occurrence matrix over a symmetric
window through a truncated SVD; it is fully deterministic for a given
corpus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .text import FIRST_CONTENT_ID, UNK_ID, Vocabulary
from .corpus import Corpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingTable:
    """Token id -> unit-norm vector, for every id in the vocabulary."""

    dim: int
    vectors: np.ndarray  # shape (vocab size, dim), float64, rows unit-norm
    provenance: str      # "trained-on-corpus" | "loaded-from-file"

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.vectors.shape[1] != self.dim:
            raise ValueError("vector width does not match dim")
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.all(np.abs(norms - 1.0) < 1e-6):
            raise ValueError("all stored vectors must be unit-norm")

    def vector(self, token_id: int) -> np.ndarray:
        return self.vectors[token_id]

    def vectors_for(self, token_ids: Sequence[int]) -> np.ndarray:
        return self.vectors[np.asarray(token_ids, dtype=np.intp)]


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return rows / norms


def _fix_signs(columns: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    Removes the sign ambiguity of SVD factors so the table does not
    depend on LAPACK internals.
    """
    out = columns.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        pivot = int(np.argmax(np.abs(col)))
        if col[pivot] < 0:
            out[:, j] = -col
    return out


def train_embeddings(
    corpus: Corpus,
    vocab: Vocabulary,
    dim: int = 64,
    window: int = 5,
    seed: int = 0,
    clamp_to_rank: bool = False,
) -> EmbeddingTable:
    """Train token vectors: PPMI co-occurrence + truncated SVD + row norm.

    Co-occurrence is counted between content tokens within a symmetric
    ``window`` inside each document. The computation has no random
    component; ``seed`` is accepted so all artifact builds flow from one
    seed, and is recorded by the callers that persist the table.

    Raises ValueError when ``dim`` exceeds the vocabulary size or the
    available PPMI rank (unless ``clamp_to_rank`` is set, in which case
    the dimension is lowered to the rank with a log message).
    """
    n_content = vocab.content_size
    if corpus.n_docs == 0:
        raise ValueError("empty corpus")
    if dim > n_content:
        raise ValueError(f"dim {dim} exceeds vocabulary size {n_content}")
    if window < 1:
        raise ValueError("window must be >= 1")

    cooc = np.zeros((n_content, n_content), dtype=np.float64)
    for doc in corpus.documents():
        ids = [
            t - FIRST_CONTENT_ID
            for t in vocab.encode(doc.tokens)
            if t >= FIRST_CONTENT_ID
        ]
        for i, a in enumerate(ids):
            for j in range(i + 1, min(i + window + 1, len(ids))):
                b = ids[j]
                cooc[a, b] += 1.0
                cooc[b, a] += 1.0

    total = cooc.sum()
    if total == 0.0:
        raise ValueError("no co-occurrence signal in corpus")
    marginals = cooc.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(cooc * total / np.outer(marginals, marginals))
    ppmi = np.where(np.isfinite(pmi) & (pmi > 0.0), pmi, 0.0)

    u, s, _ = np.linalg.svd(ppmi)
    rank = int(np.sum(s > s[0] * 1e-12)) if s[0] > 0 else 0
    if dim > rank:
        if not clamp_to_rank:
            raise ValueError(
                f"dim {dim} exceeds available PPMI rank {rank}; "
                f"use dim <= {rank}"
            )
        logger.info("clamping embedding dim %d to PPMI rank %d", dim, rank)
        dim = max(2, rank)
    factors = _fix_signs(u[:, :dim] * np.sqrt(s[:dim]))

    content = _normalize_rows(factors)
    row_norms = np.linalg.norm(factors, axis=1)
    nonzero = row_norms > 0.0
    if not np.any(nonzero):
        raise ValueError("no co-occurrence signal in corpus")
    fallback = content[nonzero].mean(axis=0)
    fallback /= np.linalg.norm(fallback)
    content[~nonzero] = fallback

    # Specials (MASK/PAD/UNK) share the neutral fallback: the normalized
    # mean of all trained vectors.
    unk = content.mean(axis=0)
    unk /= np.linalg.norm(unk)
    table = np.vstack([np.tile(unk, (FIRST_CONTENT_ID, 1)), content])
    return EmbeddingTable(dim, table, "trained-on-corpus")


def load_embeddings(lines: Iterable[str], vocab: Vocabulary) -> EmbeddingTable:
    """Load word vectors from text lines: ``surface v1 v2 ... vd``.

    Vectors are L2-normalized on load. Surfaces outside the vocabulary
    are ignored; vocabulary tokens missing from the file fall back to
    the UNK vector (the normalized mean of the loaded vectors). A line
    whose width disagrees with the first line raises ValueError naming
    the line.
    """
    dim: int | None = None
    loaded: dict[int, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        surface, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim < 2:
                raise ValueError(f"vector dimension must be >= 2 @ line {lineno}")
        if len(values) != dim:
            raise ValueError(
                f"inconsistent dimensions ({len(values)} != {dim}) @ line {lineno}"
            )
        if surface not in vocab:
            continue
        vec = np.array([float(v) for v in values], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError(f"zero vector @ line {lineno}")
        loaded[vocab.id(surface)] = vec / norm
    if dim is None or not loaded:
        raise ValueError("no vocabulary tokens found in embedding source")
    unk = np.mean([v for v in loaded.values()], axis=0)
    unk /= np.linalg.norm(unk)
    table = np.tile(unk, (len(vocab), 1))
    for token_id, vec in loaded.items():
        table[token_id] = vec
    table[UNK_ID] = unk
    return EmbeddingTable(dim, table, "loaded-from-file")


def load_embeddings_file(path: str, vocab: Vocabulary) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        return load_embeddings(fh, vocab)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """u.v / (|u||v|); zero-norm input yields 0.0 by definition."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        logger.debug("cosine of zero vector flagged as 0.0")
        return 0.0
    return float(np.dot(a, b) / (na * nb))
