"""Comparison-table assembly: property relevance ranking and display selection.

Properties are ranked by a weighted sum of search-query frequency, product
description (PDP) frequency and value entropy over the substitute list.
The displayed substitutes are chosen per price bin (7 log-price bins, the
outermost two discarded) with a greedy selection that maximizes pairwise
entropy-weighted Hamming diversity of the property profiles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .catalog import Product, SearchLogEntry
from .cbow import tokenize

log = logging.getLogger(__name__)

N_BINS = 7
CENTER_BIN = 3
ALLOWED_BINS = (1, 2, 3, 4, 5)  # bins 0 and 6 are discarded as price outliers

# Sentinel category for products that do not carry a property.
ABSENT = None


@dataclass(frozen=True)
class PropertyScore:
    property: str
    query_freq: float
    pdp_freq: float
    entropy: float  # raw, in nats
    total: float


@dataclass(frozen=True)
class PriceBinning:
    """Equal-width binning of log prices.

    Bin 3 is centered on the mean log price with width equal to the log
    price standard deviation; bins are half-open on the right, and prices
    beyond the outermost finite edges land in bins 0/6. A zero standard
    deviation puts everything in bin 3.
    """

    center: float
    width: float
    assignment: dict[str, int]

    def bin_of(self, price: float) -> int:
        if not (price > 0):
            raise ValueError(f"nonpositive price {price}")
        if self.width == 0.0:
            return CENTER_BIN
        idx = math.floor((math.log(price) - self.center) / self.width + 3.5)
        return min(max(idx, 0), N_BINS - 1)


@dataclass(frozen=True)
class ComparisonTable:
    query_id: str
    substitutes: tuple[str, ...]
    displayed_properties: tuple[str, ...]
    property_scores: dict[str, float]
    fallback: bool = False


def property_vocabulary(catalog: list[Product]) -> dict[str, list[str]]:
    """Property name -> sorted list of observed values."""
    vocab: dict[str, set[str]] = {}
    for product in catalog:
        for name, value in product.properties.items():
            vocab.setdefault(name, set()).add(value)
    return {name: sorted(values) for name, values in sorted(vocab.items())}


def _phrase(text: str) -> tuple[str, ...]:
    return tuple(tokenize(text))


def _contains_phrase(tokens: list[str], phrase: tuple[str, ...]) -> bool:
    if not phrase:
        return False
    k = len(phrase)
    return any(tuple(tokens[i : i + k]) == phrase for i in range(len(tokens) - k + 1))


def _mention_counts(texts: list[str], vocabulary: dict[str, list[str]]) -> dict[str, int]:
    """Count texts mentioning each property's name or any of its values.

    Matching is case-insensitive at the token level (multi-token names and
    values must appear as contiguous token runs); each text counts at most
    once per property.
    """
    phrases = {
        name: [_phrase(name)] + [_phrase(v) for v in values]
        for name, values in vocabulary.items()
    }
    counts = {name: 0 for name in vocabulary}
    for text in texts:
        tokens = tokenize(text)
        for name, options in phrases.items():
            if any(_contains_phrase(tokens, ph) for ph in options):
                counts[name] += 1
    return counts


def _max_normalize(counts: dict[str, int]) -> dict[str, float]:
    peak = max(counts.values(), default=0)
    if peak == 0:
        return {name: 0.0 for name in counts}
    return {name: count / peak for name, count in counts.items()}


def query_frequency(
    logs: list[SearchLogEntry], vocabulary: dict[str, list[str]]
) -> dict[str, float]:
    """Share of search queries mentioning each property, max-normalized to [0, 1]."""
    if not vocabulary:
        raise ValueError("empty property vocabulary")
    return _max_normalize(_mention_counts([e.query for e in logs], vocabulary))


def pdp_frequency(catalog: list[Product], vocabulary: dict[str, list[str]]) -> dict[str, float]:
    """Share of product descriptions mentioning each property, max-normalized."""
    if not vocabulary:
        raise ValueError("empty property vocabulary")
    return _max_normalize(_mention_counts([p.description for p in catalog], vocabulary))


def property_entropy(products: list[Product], property_name: str) -> float:
    """Shannon entropy (nats) of the property's value distribution.

    Products without the property form their own "absent" category.
    """
    if not products:
        raise ValueError("empty product list")
    counts: dict[object, int] = {}
    for product in products:
        value = product.properties.get(property_name, ABSENT)
        counts[value] = counts.get(value, 0) + 1
    total = len(products)
    return -sum((c / total) * math.log(c / total) for c in counts.values())


def rank_properties(
    query_freq: dict[str, float],
    pdp_freq: dict[str, float],
    entropy: dict[str, float],
    weights: tuple[float, float, float] = (1.0 / 3, 1.0 / 3, 1.0 / 3),
) -> list[PropertyScore]:
    """Rank properties by the weighted sum of the three components.

    Entropy is normalized by the maximum entropy in the set so that all
    components share the [0, 1] scale. Ties break alphabetically.
    """
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    names = sorted(set(query_freq) | set(pdp_freq) | set(entropy))
    if not names:
        raise ValueError("empty property set")
    max_entropy = max((entropy.get(n, 0.0) for n in names), default=0.0)
    w1, w2, w3 = weights
    scored = []
    for name in names:
        qf = query_freq.get(name, 0.0)
        pf = pdp_freq.get(name, 0.0)
        ent = entropy.get(name, 0.0)
        norm_ent = ent / max_entropy if max_entropy > 0 else 0.0
        scored.append(
            PropertyScore(
                property=name,
                query_freq=qf,
                pdp_freq=pf,
                entropy=ent,
                total=w1 * qf + w2 * pf + w3 * norm_ent,
            )
        )
    scored.sort(key=lambda s: (-s.total, s.property))
    return scored


def bin_by_price(query: Product, candidates: list[Product]) -> PriceBinning:
    """Bin the query and its candidates by log price.

    The center is the mean log price over candidates plus query; the width
    is the population standard deviation of the same values.
    """
    pool = [query] + [c for c in candidates if c.id != query.id]
    logs = [math.log(p.price) for p in pool]
    center = sum(logs) / len(logs)
    width = math.sqrt(sum((x - center) ** 2 for x in logs) / len(logs))
    if width < 1e-12 * max(1.0, abs(center)):  # identical prices up to rounding
        width = 0.0
    binning = PriceBinning(center=center, width=width, assignment={})
    assignment = {p.id: binning.bin_of(p.price) for p in pool}
    return PriceBinning(center=center, width=width, assignment=assignment)


def entropy_weights(products: list[Product], property_names: list[str]) -> dict[str, float]:
    """Per-property Hamming weights: exp(-entropy of the value distribution)."""
    return {name: math.exp(-property_entropy(products, name)) for name in property_names}


def weighted_hamming(a: Product, b: Product, property_weights: dict[str, float]) -> float:
    """Entropy-weighted Hamming distance between property profiles.

    A missing property is a comparable "absent" value, so two products both
    lacking a property agree on it.
    """
    distance = 0.0
    for name, weight in property_weights.items():
        if a.properties.get(name, ABSENT) != b.properties.get(name, ABSENT):
            distance += weight
    return distance


def _total_diversity(products: list[Product], weights: dict[str, float]) -> float:
    return sum(
        weighted_hamming(products[i], products[j], weights)
        for i in range(len(products))
        for j in range(i + 1, len(products))
    )


def _nearest_nonempty_bin(target: int, by_bin: dict[int, list], query_bin: int) -> int | None:
    """Nearest allowed bin with candidates; ties prefer proximity to the query bin."""
    options = [b for b in ALLOWED_BINS if by_bin.get(b)]
    if not options:
        return None
    return min(options, key=lambda b: (abs(b - target), abs(b - query_bin), b))


def select_display(
    query: Product,
    substitutes: list[tuple[Product, float]],
    binning: PriceBinning,
    w: int = 3,
    diversity_weights: dict[str, float] | None = None,
    displayed_properties: tuple[str, ...] = (),
    property_scores: dict[str, float] | None = None,
) -> ComparisonTable:
    """Pick the displayed substitutes: one from the query's price bin, one
    from the lower neighbor and one from the higher neighbor.

    ``substitutes`` carries (product, classifier score) in ranked order.
    The first pick is the best-scoring candidate in the query's bin; the
    remaining picks maximize the total pairwise entropy-weighted Hamming
    diversity of the chosen set (score, then id, break ties). For the
    default w=3 the two non-anchor slots are completed exactly rather than
    by marginal-gain steps, which a one-step-lookahead walk can get wrong.
    An empty target bin falls back to the nearest non-empty allowed bin;
    if fewer than ``w`` candidates exist in the allowed bins, all are
    returned and the table is flagged.
    """
    if not substitutes:
        raise ValueError("empty candidate set")
    if diversity_weights is None:
        pool = [p for p, _ in substitutes]
        names = sorted({n for p in pool for n in p.properties})
        diversity_weights = entropy_weights(pool, names)

    scores = {p.id: s for p, s in substitutes}
    by_bin: dict[int, list[Product]] = {}
    for product, _ in substitutes:
        if product.id == query.id:
            continue
        b = binning.assignment.get(product.id, binning.bin_of(product.price))
        if b in ALLOWED_BINS:
            by_bin.setdefault(b, []).append(product)
    for bucket in by_bin.values():
        bucket.sort(key=lambda p: (-scores[p.id], p.id))

    query_bin = binning.assignment.get(query.id, binning.bin_of(query.price))
    query_bin = min(max(query_bin, ALLOWED_BINS[0]), ALLOWED_BINS[-1])
    targets = [
        query_bin,
        max(query_bin - 1, ALLOWED_BINS[0]),
        min(query_bin + 1, ALLOWED_BINS[-1]),
    ][:w]
    while len(targets) < w:
        targets.append(query_bin)

    fallback = False

    def resolve(target: int, chosen: list[Product]) -> list[Product]:
        nonlocal fallback
        available = {
            b: [p for p in bucket if all(p.id != c.id for c in chosen)]
            for b, bucket in by_bin.items()
        }
        source = target if available.get(target) else _nearest_nonempty_bin(target, available, query_bin)
        if source != target:
            fallback = True
        return available.get(source, []) if source is not None else []

    chosen: list[Product] = []
    anchor_pool = resolve(targets[0], chosen)
    if anchor_pool:
        chosen.append(min(anchor_pool, key=lambda p: (-scores[p.id], p.id)))

    if chosen and w == 3:
        # the two remaining slots are completed jointly: with per-bin pools
        # this small an exact completion is cheap and never worse than a
        # marginal-gain walk
        anchor = chosen[0]
        pool_a = resolve(targets[1], chosen)
        pool_b = resolve(targets[2], chosen)
        best: tuple | None = None
        for pa in pool_a:
            for pb in pool_b:
                if pa.id == pb.id:
                    continue
                total = (
                    weighted_hamming(pa, anchor, diversity_weights)
                    + weighted_hamming(pb, anchor, diversity_weights)
                    + weighted_hamming(pa, pb, diversity_weights)
                )
                key = (-total, -scores[pa.id], pa.id, -scores[pb.id], pb.id)
                if best is None or key < best[0]:
                    best = (key, pa, pb)
        if best is not None:
            chosen.extend([best[1], best[2]])
        else:
            # the two pools collapse onto one candidate; take it, then retry
            # the remaining slot over what is left
            for target in targets[1:]:
                pool = resolve(target, chosen)
                if pool:
                    chosen.append(
                        min(
                            pool,
                            key=lambda p: (
                                -sum(weighted_hamming(p, c, diversity_weights) for c in chosen),
                                -scores[p.id],
                                p.id,
                            ),
                        )
                    )
    else:
        for target in targets[1:]:
            pool = resolve(target, chosen)
            if not pool:
                continue
            chosen.append(
                min(
                    pool,
                    key=lambda p: (
                        -sum(weighted_hamming(p, c, diversity_weights) for c in chosen),
                        -scores[p.id],
                        p.id,
                    ),
                )
            )
    if len(chosen) < w:
        fallback = True
        log.info("query %s: only %d of %d substitutes available", query.id, len(chosen), w)

    return ComparisonTable(
        query_id=query.id,
        substitutes=tuple(p.id for p in chosen),
        displayed_properties=displayed_properties,
        property_scores=dict(property_scores or {}),
        fallback=fallback,
    )


def build_table(
    query: Product,
    substitutes: list[tuple[Product, float]],
    query_freq: dict[str, float],
    pdp_freq: dict[str, float],
    weights: tuple[float, float, float] = (1.0 / 3, 1.0 / 3, 1.0 / 3),
    w: int = 3,
    max_properties: int = 5,
) -> ComparisonTable:
    """Full per-query table: rank properties over the substitute list, bin
    prices, then select the displayed set."""
    pool = [p for p, _ in substitutes]
    names = sorted(set(query_freq) | set(pdp_freq) | {n for p in pool for n in p.properties})
    entropy = {name: property_entropy(pool, name) for name in names}
    ranked = rank_properties(query_freq, pdp_freq, entropy, weights)
    binning = bin_by_price(query, pool)
    diversity = {name: math.exp(-entropy[name]) for name in names}
    return select_display(
        query,
        substitutes,
        binning,
        w=w,
        diversity_weights=diversity,
        displayed_properties=tuple(s.property for s in ranked[:max_properties]),
        property_scores={s.property: s.total for s in ranked},
    )
