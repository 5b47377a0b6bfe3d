"""Embedding tables, cosine similarity, average-pooled text fields and exact kNN."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .jsonl import read_jsonl, write_jsonl

if TYPE_CHECKING:
    from .cbow import WordVectors

log = logging.getLogger(__name__)

EMBEDDING_KINDS = ("prod2vec", "name_text", "description_text", "categories_text", "image")
DEFAULT_IMAGE_DIM = 512


@dataclass
class EmbeddingTable:
    """Per-feature-kind map product_id -> fixed-dimension vector."""

    kind: str
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EMBEDDING_KINDS and self.kind != "word":
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        for pid, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"vector for {pid!r} has dimension {vec.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for {pid!r} has non-finite components")

    def __contains__(self, product_id: str) -> bool:
        return product_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class CandidateList:
    """Top-k retrieval result; similarities are non-increasing, query excluded."""

    query_id: str
    candidates: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(pid for pid, _ in self.candidates)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; errors on zero vectors or dim mismatch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined cosine for zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def knn_candidates(query_id: str, table: EmbeddingTable, k: int = 100) -> CandidateList:
    """Exact top-k by cosine similarity, query excluded, ties by ascending id.

    Exhaustive search over the table; catalogs at the scale this toolkit
    targets do not need an approximate index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if query_id not in table.vectors:
        raise ValueError(f"unknown query id {query_id!r}")
    ids = sorted(table.vectors)
    matrix = np.stack([table.vectors[i] for i in ids]).astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    qpos = ids.index(query_id)
    if norms[qpos] == 0.0:
        raise ValueError("undefined cosine for zero vector")
    safe = np.where(norms == 0.0, 1.0, norms)
    sims = np.clip(matrix @ matrix[qpos] / (safe * norms[qpos]), -1.0, 1.0)
    scored = [
        (ids[i], float(sims[i]))
        for i in range(len(ids))
        if ids[i] != query_id and norms[i] > 0.0  # zero vectors have no direction
    ]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return CandidateList(query_id=query_id, candidates=tuple(scored[:k]))


def pool_text_field(text: str, words: "WordVectors") -> tuple[np.ndarray, int]:
    """Average-pool a text field over in-vocabulary word vectors.

    Returns (vector, n_in_vocab). Fully out-of-vocabulary text yields the
    zero vector with n_in_vocab == 0, which callers treat as a flag.
    """
    from .cbow import tokenize

    hits = [words.vectors[t] for t in tokenize(text) if t in words.vectors]
    if not hits:
        return np.zeros(words.dim, dtype=np.float32), 0
    pooled = np.mean(np.stack(hits), axis=0, dtype=np.float64).astype(np.float32)
    return pooled, len(hits)


def load_image_embeddings(path: str | Path, expected_dim: int = DEFAULT_IMAGE_DIM) -> EmbeddingTable:
    """Load precomputed image vectors, validating every record's dimension."""
    vectors: dict[str, np.ndarray] = {}
    for lineno, rec in read_jsonl(path):
        pid = str(rec["id"])
        vec = np.asarray(rec["vector"], dtype=np.float32)
        if vec.shape != (expected_dim,):
            raise ValueError(
                f"{path}: line {lineno}: image vector for product {pid!r} has "
                f"dimension {vec.shape[0]}, expected {expected_dim}"
            )
        vectors[pid] = vec
    return EmbeddingTable(kind="image", dim=expected_dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Persist a table to embeddings.jsonl ({"id", "kind", "vector"})."""
    write_jsonl(
        path,
        (
            {"id": pid, "kind": table.kind, "vector": [float(x) for x in table.vectors[pid]]}
            for pid in sorted(table.vectors)
        ),
    )


def load_embeddings(path: str | Path, kind: str | None = None) -> EmbeddingTable:
    """Load one table from embeddings.jsonl; the file must hold a single kind."""
    vectors: dict[str, np.ndarray] = {}
    seen_kind: str | None = None
    dim: int | None = None
    for lineno, rec in read_jsonl(path):
        rec_kind = str(rec["kind"])
        if kind is not None and rec_kind != kind:
            raise ValueError(f"{path}: line {lineno}: expected kind {kind!r}, got {rec_kind!r}")
        if seen_kind is None:
            seen_kind = rec_kind
        elif rec_kind != seen_kind:
            raise ValueError(f"{path}: line {lineno}: mixed kinds {seen_kind!r} and {rec_kind!r}")
        vec = np.asarray(rec["vector"], dtype=np.float32)
        if dim is None:
            dim = vec.shape[0]
        vectors[str(rec["id"])] = vec
    if seen_kind is None or dim is None:
        raise ValueError(f"{path}: no embedding records")
    return EmbeddingTable(kind=seen_kind, dim=dim, vectors=vectors)


def save_word_vectors(words: "WordVectors", path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {"id": tok, "kind": "word", "vector": [float(x) for x in words.vectors[tok]]}
            for tok in sorted(words.vectors)
        ),
    )


def load_word_vectors(path: str | Path) -> "WordVectors":
    from .cbow import WordVectors

    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    for _, rec in read_jsonl(path):
        vec = np.asarray(rec["vector"], dtype=np.float32)
        dim = dim or vec.shape[0]
        vectors[str(rec["id"])] = vec
    if dim is None:
        raise ValueError(f"{path}: no word vector records")
    return WordVectors(dim=dim, vectors=vectors)
