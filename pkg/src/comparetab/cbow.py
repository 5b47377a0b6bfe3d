"""CBOW negative-sampling training for product and word embeddings.

Sessions play the role of sentences and products the role of words for the
behavioral space; product descriptions are the corpus for the word space.
Training is deterministic for a fixed seed: session visit order and the
noise-distribution draws are generated up front from one PCG64 stream and
handed to the active kernel backend.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from types import ModuleType

import numpy as np

from . import kernels
from .catalog import Product, Session
from .embeddings import EmbeddingTable

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Learning-rate floor, as a fraction of nothing in particular: the decay is
# linear from ``learning_rate`` down to this absolute value.
MIN_LEARNING_RATE = 1e-4


@dataclass(frozen=True)
class CbowConfig:
    """Hyper-parameters for CBOW training with negative sampling.

    ``window`` is the symmetric context half-width (fixed, not sampled per
    center word). The noise distribution is unigram frequency raised to
    ``ns_exponent``.
    """

    window: int = 5
    iterations: int = 30
    ns_exponent: float = 0.75
    dim: int = 48
    negatives_per_positive: int = 5
    learning_rate: float = 0.025
    min_count: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.min_count < 0:
            raise ValueError("min_count must be >= 0")


# Window 10 per the standard recipe for description corpora; rare words are
# dropped at min_count 2.
TEXT_CONFIG = CbowConfig(window=10, min_count=2)


@dataclass(frozen=True)
class WordVectors:
    """Token -> vector table produced by ``train_text_embeddings``."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, token: str) -> bool:
        return token in self.vectors


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokenization shared by all text consumers."""
    return _TOKEN_RE.findall(text.lower())


def train_cbow(
    sentences: list[list[str]],
    config: CbowConfig,
    kernel: ModuleType | None = None,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Train CBOW vectors over tokenized sentences.

    Returns (vectors, epoch_losses) where epoch_losses[i] is the mean
    negative-sampling objective over center words trained in epoch i.
    Raises ValueError("empty corpus") when no context window exists (e.g.
    only single-token sentences survive the min_count filter).
    """
    kern = kernel if kernel is not None else kernels
    counts: dict[str, int] = {}
    for sent in sentences:
        for tok in sent:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = [t for t, c in counts.items() if c >= max(config.min_count, 1)]
    vocab.sort(key=lambda t: (-counts[t], t))
    if not vocab:
        raise ValueError("empty corpus")
    index = {t: i for i, t in enumerate(vocab)}

    encoded = []
    for sent in sentences:
        ids = [index[t] for t in sent if t in index]
        if ids:
            encoded.append(np.asarray(ids, dtype=np.int32))
    if not any(len(e) >= 2 for e in encoded):
        raise ValueError("empty corpus")

    tokens = np.concatenate(encoded)
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum([len(e) for e in encoded], out=offsets[1:])

    freq = np.asarray([counts[t] for t in vocab], dtype=np.float64)
    noise_cdf = np.cumsum(freq**config.ns_exponent)
    noise_total = noise_cdf[-1]

    rng = np.random.default_rng(config.seed)
    vocab_size = len(vocab)
    syn0 = ((rng.random((vocab_size, config.dim)) - 0.5) / config.dim).astype(np.float32)
    syn1neg = np.zeros((vocab_size, config.dim), dtype=np.float32)

    n_tokens = int(tokens.shape[0])
    total_updates = n_tokens * config.iterations
    done = 0
    losses: list[float] = []
    for _ in range(config.iterations):
        order = rng.permutation(len(encoded)).astype(np.int64)
        draws = rng.random((n_tokens, config.negatives_per_positive))
        negatives = np.searchsorted(noise_cdf, draws * noise_total, side="right").astype(np.int32)
        loss_sum, trained, processed = kern.train_epoch(
            syn0,
            syn1neg,
            tokens,
            offsets,
            order,
            negatives,
            config.window,
            config.learning_rate,
            min(MIN_LEARNING_RATE, config.learning_rate),
            total_updates,
            done,
        )
        done += processed
        losses.append(loss_sum / max(trained, 1))

    vectors = {tok: syn0[i].copy() for tok, i in index.items()}
    return vectors, losses


def train_prod2vec(
    sessions: list[Session],
    config: CbowConfig | None = None,
    kernel: ModuleType | None = None,
) -> EmbeddingTable:
    """Train behavioral product embeddings from browse sessions."""
    config = config or CbowConfig()
    sentences = [list(s.product_ids) for s in sessions if s.kind == "browse"]
    vectors, losses = train_cbow(sentences, config, kernel=kernel)
    log.info(
        "prod2vec trained: %d products, %d epochs, final loss %.4f",
        len(vectors),
        len(losses),
        losses[-1],
    )
    return EmbeddingTable(kind="prod2vec", dim=config.dim, vectors=vectors)


def train_text_embeddings(
    catalog: list[Product],
    config: CbowConfig | None = None,
    kernel: ModuleType | None = None,
) -> WordVectors:
    """Train word vectors over the catalog's product descriptions."""
    config = config if config is not None else TEXT_CONFIG
    sentences = [tokenize(p.description) for p in catalog]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("empty corpus")
    vectors, losses = train_cbow(sentences, config, kernel=kernel)
    log.info(
        "text embeddings trained: %d tokens, %d epochs, final loss %.4f",
        len(vectors),
        len(losses),
        losses[-1],
    )
    return WordVectors(dim=config.dim, vectors=vectors)


def text_config(seed: int = 0, **overrides) -> CbowConfig:
    """TEXT_CONFIG with a seed (and optional field overrides) applied."""
    return replace(TEXT_CONFIG, seed=seed, **overrides)
