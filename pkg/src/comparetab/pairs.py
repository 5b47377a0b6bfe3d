"""Unsupervised training-pair generation for the substitute classifier.

Positives come from consecutive views within a browse session, negatives
from products bought together in a purchase session. The raw sets are
optionally cleaned with image-vector cosine thresholds, stripped of
conflicting labels, clustered (connected components over positive pairs)
and augmented by swapping pair members within their cluster.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import ProductSplit, Session
from .embeddings import EmbeddingTable, cosine
from .jsonl import read_jsonl, write_jsonl

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"
OBSERVED = "observed"
SYNTHETIC = "synthetic"


@dataclass(frozen=True, order=True)
class CountedPair:
    """An unordered product pair with its co-occurrence count; a < b."""

    a: str
    b: str
    count: int


@dataclass(frozen=True, order=True)
class LabeledPair:
    """A classifier training example; a < b canonically."""

    a: str
    b: str
    label: str
    origin: str = OBSERVED

    def __post_init__(self) -> None:
        if self.a >= self.b:
            raise ValueError(f"pair not canonical: ({self.a!r}, {self.b!r})")
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"unknown label {self.label!r}")
        if self.origin not in (OBSERVED, SYNTHETIC):
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass(frozen=True)
class SubstituteCluster:
    cluster_id: int
    members: frozenset[str]


@dataclass(frozen=True)
class CleanResult:
    pairs: tuple[LabeledPair, ...]
    dropped_missing: int
    dropped_threshold: int


def _canonical(a: str, b: str) -> tuple[str, str] | None:
    if a == b:
        return None
    return (a, b) if a < b else (b, a)


def _count_pairs(sessions: list[Session], kind: str, window: int | None) -> Counter:
    """Count unordered pairs of events at distance <= window within a session.

    window=None means every pair in the session. Each occurrence counts.
    """
    counts: Counter = Counter()
    for session in sessions:
        if session.kind != kind:
            continue
        ids = session.product_ids
        n = len(ids)
        for i in range(n):
            stop = n if window is None else min(n, i + window + 1)
            for j in range(i + 1, stop):
                key = _canonical(ids[i], ids[j])
                if key is not None:
                    counts[key] += 1
    return counts


def mine_coview(sessions: list[Session], n_min: int = 10, adjacency: int = 1) -> list[CountedPair]:
    """Mine co-view pairs from browse sessions.

    A pair is counted once per occurrence within ``adjacency`` steps
    (default: strictly consecutive views); pairs with count >= n_min
    survive. These are the positive-label candidates.
    """
    counts = _count_pairs(sessions, "browse", adjacency)
    return sorted(CountedPair(a, b, c) for (a, b), c in counts.items() if c >= n_min)


def mine_copurchase(sessions: list[Session], m_min: int = 1, window: int | None = None) -> list[CountedPair]:
    """Mine co-purchase pairs from purchase sessions (negative-label candidates).

    Purchase sessions are short, so by default any unordered pair within a
    session counts as one co-purchase occurrence.
    """
    counts = _count_pairs(sessions, "purchase", window)
    return sorted(CountedPair(a, b, c) for (a, b), c in counts.items() if c >= m_min)


def to_labeled(pairs: list[CountedPair], label: str) -> list[LabeledPair]:
    return [LabeledPair(p.a, p.b, label, OBSERVED) for p in pairs]


def clean_with_images(
    pairs: list[LabeledPair],
    images: EmbeddingTable,
    pos_min: float = 0.8,
    neg_max: float = 0.5,
) -> CleanResult:
    """Filter pairs by image cosine: positives kept iff cos >= pos_min,
    negatives kept iff cos <= neg_max.

    Pairs with a missing image vector cannot be cleaned and are dropped
    (counted separately from threshold drops).
    """
    kept: list[LabeledPair] = []
    dropped_missing = 0
    dropped_threshold = 0
    for pair in pairs:
        if pair.a not in images.vectors or pair.b not in images.vectors:
            dropped_missing += 1
            continue
        sim = cosine(images.vectors[pair.a], images.vectors[pair.b])
        ok = sim >= pos_min if pair.label == POSITIVE else sim <= neg_max
        if ok:
            kept.append(pair)
        else:
            dropped_threshold += 1
    if dropped_missing:
        log.warning("image cleaning dropped %d pairs with missing image vectors", dropped_missing)
    return CleanResult(tuple(kept), dropped_missing, dropped_threshold)


def remove_conflicts(
    positives: list[LabeledPair], negatives: list[LabeledPair]
) -> tuple[list[LabeledPair], list[LabeledPair]]:
    """Drop pairs that carry both labels; outputs are disjoint."""
    pos_keys = {p.key for p in positives}
    neg_keys = {p.key for p in negatives}
    conflict = pos_keys & neg_keys
    if conflict:
        log.info("removed %d conflicting pairs", len(conflict))
    return (
        [p for p in positives if p.key not in conflict],
        [p for p in negatives if p.key not in conflict],
    )


def build_clusters(positives: list[LabeledPair]) -> list[SubstituteCluster]:
    """Connected components of the graph whose edges are positive pairs.

    Singletons never arise (every node comes from an edge). Clusters are
    numbered by their lexicographically smallest member for determinism.
    """
    adjacency: dict[str, set[str]] = {}
    for pair in positives:
        adjacency.setdefault(pair.a, set()).add(pair.b)
        adjacency.setdefault(pair.b, set()).add(pair.a)
    seen: set[str] = set()
    components: list[frozenset[str]] = []
    for node in sorted(adjacency):
        if node in seen:
            continue
        queue = deque([node])
        component = {node}
        seen.add(node)
        while queue:
            current = queue.popleft()
            for neighbor in adjacency[current]:
                if neighbor not in component:
                    component.add(neighbor)
                    seen.add(neighbor)
                    queue.append(neighbor)
        components.append(frozenset(component))
    components.sort(key=lambda c: min(c))
    return [SubstituteCluster(i, members) for i, members in enumerate(components)]


def augment_synthetic(
    pairs: list[LabeledPair],
    clusters: list[SubstituteCluster],
    z_max: int = 40,
    per_pair_cap: int = 5,
    seed: int = 0,
) -> list[LabeledPair]:
    """Generate synthetic pairs by swapping one member within its cluster.

    Clusters larger than z_max are excluded as swap sources. Synthetic
    pairs are deduplicated against the observed pairs and each other; at
    most ``per_pair_cap`` synthetics per observed pair are kept (seeded
    uniform sample). Returns observed + synthetic pairs.
    """
    cluster_of: dict[str, frozenset[str]] = {}
    for cluster in clusters:
        if len(cluster.members) > z_max:
            continue
        for member in cluster.members:
            cluster_of[member] = cluster.members

    rng = np.random.default_rng(seed)
    taken: set[tuple[str, str]] = {p.key for p in pairs}
    synthetics: list[LabeledPair] = []
    for pair in sorted(pairs):
        candidates: list[tuple[str, str]] = []
        for keep, swap in ((pair.a, pair.b), (pair.b, pair.a)):
            members = cluster_of.get(swap)
            if members is None:
                continue
            for replacement in sorted(members):
                if replacement in (pair.a, pair.b):
                    continue
                key = _canonical(keep, replacement)
                if key is not None and key not in taken and key not in candidates:
                    candidates.append(key)
        if not candidates:
            continue
        if len(candidates) > per_pair_cap:
            picked_idx = rng.choice(len(candidates), size=per_pair_cap, replace=False)
            picked = [candidates[i] for i in sorted(picked_idx)]
        else:
            picked = candidates
        for a, b in picked:
            taken.add((a, b))
            synthetics.append(LabeledPair(a, b, pair.label, SYNTHETIC))
    return list(pairs) + synthetics


def split_pairs(
    pairs: list[LabeledPair], split: ProductSplit
) -> tuple[list[LabeledPair], list[LabeledPair]]:
    """Assign each pair to train or validation.

    A pair belongs to validation iff either endpoint is a validation
    product; pairs are never shared between the sides.
    """
    train: list[LabeledPair] = []
    validation: list[LabeledPair] = []
    for pair in pairs:
        if pair.a in split.validation_ids or pair.b in split.validation_ids:
            validation.append(pair)
        else:
            train.append(pair)
    return train, validation


def pair_stats(train: list[LabeledPair], validation: list[LabeledPair]) -> dict:
    """Counts in the shape of the training-data summary table."""

    def tally(pairs: list[LabeledPair]) -> dict:
        return {
            "positive": sum(1 for p in pairs if p.label == POSITIVE),
            "negative": sum(1 for p in pairs if p.label == NEGATIVE),
            "synthetic": sum(1 for p in pairs if p.origin == SYNTHETIC),
        }

    return {"train": tally(train), "validation": tally(validation)}


def save_pairs(pairs: list[LabeledPair], path: str | Path) -> None:
    write_jsonl(
        path,
        ({"a": p.a, "b": p.b, "label": p.label, "origin": p.origin} for p in sorted(pairs)),
    )


def load_pairs(path: str | Path) -> list[LabeledPair]:
    return [
        LabeledPair(str(r["a"]), str(r["b"]), str(r["label"]), str(r.get("origin", OBSERVED)))
        for _, r in read_jsonl(path)
    ]


def save_clusters(clusters: list[SubstituteCluster], path: str | Path) -> None:
    write_jsonl(
        path,
        ({"cluster_id": c.cluster_id, "members": sorted(c.members)} for c in clusters),
    )


def load_clusters(path: str | Path) -> list[SubstituteCluster]:
    return [
        SubstituteCluster(int(r["cluster_id"]), frozenset(str(m) for m in r["members"]))
        for _, r in read_jsonl(path)
    ]
