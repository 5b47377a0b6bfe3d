"""Synthetic shop generation with ground-truth substitute clusters.

The generator plants everything the benchmarks need to verify: a cluster
partition of the catalog (the golden substitute mapping), per-property
search-query and description-mention frequencies, per-cluster price
distributions, and image vectors whose within/cross-cluster cosine
geometry can be tuned. Browse sessions are random walks biased within a
cluster; noise knobs inject cross-cluster views (diffuse jumps plus
concentrated "trending product" detours) and same-cluster purchases, which
is exactly the label noise the image-cleaning stage is meant to remove.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Product, ProductSplit, SearchLogEntry, Session
from .embeddings import CandidateList, EmbeddingTable
from .jsonl import read_json, write_json, write_jsonl
from .pairs import NEGATIVE, OBSERVED, POSITIVE, LabeledPair, SubstituteCluster

log = logging.getLogger(__name__)

FILLER_TOKENS = ("buy", "best", "cheap", "deal", "sturdy", "classic")

# (property name, value count, chance a product takes its cluster's value)
PROPERTY_SCHEMA = (
    ("material", 4, 1.0),
    ("color", 5, 0.0),
    ("size", 4, 0.3),
    ("weight", 3, 0.8),
    ("warranty", 3, 0.5),
    ("brand", 4, 0.9),
)


@dataclass(frozen=True)
class ShopSpec:
    n_clusters: int = 20
    products_per_cluster: int = 10
    n_browse_sessions: int = 5000
    n_purchase_sessions: int = 500
    n_search_queries: int = 2000
    browse_length: tuple[int, int] = (5, 12)
    purchase_length: tuple[int, int] = (2, 4)
    cross_noise: float = 0.05
    style_jump_bias: float = 0.0
    n_trending: int = 3
    trending_noise: float = 0.08
    purchase_same_cluster_noise: float = 0.15
    image_dim: int = 512
    image_noise_good: float = 0.4
    image_noise_bad: float = 0.95
    bad_photo_rate: float = 0.2
    style_overlap: float = 0.85
    clusters_per_style: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_clusters < 2:
            raise ValueError("need at least 2 clusters")
        if self.products_per_cluster < 2:
            raise ValueError("need at least 2 products per cluster")
        if self.browse_length[0] < 2 or self.browse_length[0] > self.browse_length[1]:
            raise ValueError("invalid browse_length range")
        if self.purchase_length[0] < 2 or self.purchase_length[0] > self.purchase_length[1]:
            raise ValueError("invalid purchase_length range")


@dataclass
class ShopManifest:
    """Ground truth for a generated shop."""

    clusters: list[SubstituteCluster]
    query_weights: dict[str, float]  # planted per-property query frequencies
    pdp_probs: dict[str, float]  # planted per-property description-mention rates
    price_params: dict[int, tuple[float, float]]  # cluster -> (mu, sigma) of log price
    trending_ids: tuple[str, ...]
    counts: dict[str, int] = field(default_factory=dict)

    def cluster_of(self) -> dict[str, int]:
        return {m: c.cluster_id for c in self.clusters for m in c.members}


@dataclass
class Shop:
    catalog: list[Product]
    sessions: list[Session]
    search_logs: list[SearchLogEntry]
    images: EmbeddingTable
    manifest: ShopManifest


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def simulate_shop(spec: ShopSpec) -> Shop:
    """Generate a shop deterministically from the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    n_products = spec.n_clusters * spec.products_per_cluster

    # --- planted property frequencies -------------------------------------
    prop_names = [name for name, _, _ in PROPERTY_SCHEMA]
    query_order = [prop_names[i] for i in rng.permutation(len(prop_names))]
    raw = 0.62 ** np.arange(len(prop_names))
    query_weights = {name: float(w) for name, w in zip(query_order, raw / raw.sum())}
    pdp_order = [prop_names[i] for i in rng.permutation(len(prop_names))]
    pdp_levels = np.linspace(0.92, 0.12, len(prop_names))
    pdp_probs = {name: float(lvl) for name, lvl in zip(pdp_order, pdp_levels)}
    values = {
        name: [f"{name}{i}" for i in range(count)] for name, count, _ in PROPERTY_SCHEMA
    }

    # --- clusters, styles, prices ------------------------------------------
    # visual styles group consecutive clusters; the textual "family" grouping
    # is deliberately independent of style, as in catalogs where visually
    # similar lines do not share wording
    cluster_word = [f"ctype{c}" for c in range(spec.n_clusters)]
    style_of = {c: c // spec.clusters_per_style for c in range(spec.n_clusters)}
    family_word = {c: f"family{c % 5}" for c in range(spec.n_clusters)}
    n_styles = max(style_of.values()) + 1
    price_params = {
        c: (float(rng.uniform(np.log(20.0), np.log(200.0))), 0.3)
        for c in range(spec.n_clusters)
    }
    cluster_values = {
        c: {name: values[name][int(rng.integers(len(values[name])))] for name in prop_names}
        for c in range(spec.n_clusters)
    }

    # --- image geometry ------------------------------------------------------
    style_axes = np.stack([_unit(rng.normal(size=spec.image_dim)) for _ in range(n_styles)])
    a = np.sqrt(spec.style_overlap)
    b = np.sqrt(1.0 - spec.style_overlap)
    centroids = np.stack(
        [
            _unit(a * style_axes[style_of[c]] + b * _unit(rng.normal(size=spec.image_dim)))
            for c in range(spec.n_clusters)
        ]
    )

    # --- catalog -------------------------------------------------------------
    catalog: list[Product] = []
    image_vectors: dict[str, np.ndarray] = {}
    members: dict[int, list[str]] = {c: [] for c in range(spec.n_clusters)}
    concentration = {name: conc for name, _, conc in PROPERTY_SCHEMA}
    for c in range(spec.n_clusters):
        mu, sigma = price_params[c]
        for i in range(spec.products_per_cluster):
            pid = f"p{c:03d}{i:02d}"
            members[c].append(pid)
            properties = {}
            for name in prop_names:
                if rng.random() < concentration[name]:
                    properties[name] = cluster_values[c][name]
                else:
                    properties[name] = values[name][int(rng.integers(len(values[name])))]
            mentions = []
            for name in pdp_order:
                if rng.random() < pdp_probs[name]:
                    mentions.extend([name, properties[name]])
            filler = [
                FILLER_TOKENS[int(rng.integers(len(FILLER_TOKENS)))] for _ in range(3)
            ]
            description = " ".join(
                [
                    "the",
                    cluster_word[c],
                    family_word[c],
                    "model",
                    filler[0],
                    cluster_word[c],
                ]
                + mentions
                + filler[1:]
            )
            name_text = f"{cluster_word[c]} {properties['brand']} {i}"
            price = float(np.exp(rng.normal(mu, sigma)))
            catalog.append(
                Product(
                    id=pid,
                    name=name_text,
                    description=description,
                    categories=("gear", family_word[c], cluster_word[c]),
                    price=price,
                    properties=properties,
                    image_ref=pid,
                )
            )
            noise = (
                spec.image_noise_bad
                if rng.random() < spec.bad_photo_rate
                else spec.image_noise_good
            )
            vec = _unit(centroids[c] + noise * _unit(rng.normal(size=spec.image_dim)))
            image_vectors[pid] = vec.astype(np.float32)

    all_ids = [p.id for p in catalog]
    trending = tuple(
        all_ids[i] for i in sorted(rng.choice(n_products, size=spec.n_trending, replace=False))
    )
    same_style_clusters = {
        c: [o for o in range(spec.n_clusters) if style_of[o] == style_of[c] and o != c]
        for c in range(spec.n_clusters)
    }

    # --- browse sessions (within-cluster random walks with noise) ------------
    sessions: list[Session] = []
    for s in range(spec.n_browse_sessions):
        length = int(rng.integers(spec.browse_length[0], spec.browse_length[1] + 1))
        cluster = int(rng.integers(spec.n_clusters))
        current = members[cluster][int(rng.integers(spec.products_per_cluster))]
        events = [(current, float(s * 1000))]
        step = 1
        while step < length:
            u = rng.random()
            if u < spec.trending_noise:
                # trending detour: view the product, then resume the walk
                events.append((trending[int(rng.integers(len(trending)))], float(s * 1000 + step)))
                step += 1
                continue
            if u < spec.trending_noise + spec.cross_noise:
                if same_style_clusters[cluster] and rng.random() < spec.style_jump_bias:
                    pool = same_style_clusters[cluster]
                    cluster = pool[int(rng.integers(len(pool)))]
                else:
                    cluster = int(rng.integers(spec.n_clusters))
                current = members[cluster][int(rng.integers(spec.products_per_cluster))]
            else:
                options = [m for m in members[cluster] if m != current]
                current = options[int(rng.integers(len(options)))]
            events.append((current, float(s * 1000 + step)))
            step += 1
        sessions.append(Session(session_id=f"b{s:06d}", kind="browse", events=tuple(events)))

    # --- purchase sessions (cross-cluster complements) ------------------------
    for s in range(spec.n_purchase_sessions):
        ts = float((spec.n_browse_sessions + s) * 1000)
        if rng.random() < spec.purchase_same_cluster_noise:
            cluster = int(rng.integers(spec.n_clusters))
            picked = rng.choice(spec.products_per_cluster, size=2, replace=False)
            ids = [members[cluster][int(i)] for i in sorted(picked)]
        else:
            length = int(rng.integers(spec.purchase_length[0], spec.purchase_length[1] + 1))
            clusters = rng.choice(spec.n_clusters, size=length, replace=False)
            ids = [
                members[int(c)][int(rng.integers(spec.products_per_cluster))]
                for c in sorted(clusters)
            ]
        events = tuple((pid, ts + i) for i, pid in enumerate(ids))
        sessions.append(Session(session_id=f"u{s:06d}", kind="purchase", events=events))

    # --- search logs -----------------------------------------------------------
    names_by_weight = list(query_weights)
    weight_array = np.asarray([query_weights[n] for n in names_by_weight])
    search_logs: list[SearchLogEntry] = []
    for q in range(spec.n_search_queries):
        tokens = [FILLER_TOKENS[int(rng.integers(len(FILLER_TOKENS)))]]
        if rng.random() < 0.85:
            name = names_by_weight[int(rng.choice(len(names_by_weight), p=weight_array))]
            if rng.random() < 0.5:
                tokens.append(name)
            else:
                tokens.append(values[name][int(rng.integers(len(values[name])))])
        else:
            tokens.append(cluster_word[int(rng.integers(spec.n_clusters))])
        search_logs.append(SearchLogEntry(query=" ".join(tokens), ts=float(q)))

    manifest = ShopManifest(
        clusters=[
            SubstituteCluster(c, frozenset(members[c])) for c in range(spec.n_clusters)
        ],
        query_weights=query_weights,
        pdp_probs=pdp_probs,
        price_params=price_params,
        trending_ids=trending,
        counts={
            "products": n_products,
            "browse_sessions": spec.n_browse_sessions,
            "purchase_sessions": spec.n_purchase_sessions,
            "search_queries": spec.n_search_queries,
            "image_vectors": n_products,
        },
    )
    images = EmbeddingTable(kind="image", dim=spec.image_dim, vectors=image_vectors)
    return Shop(
        catalog=catalog,
        sessions=sessions,
        search_logs=search_logs,
        images=images,
        manifest=manifest,
    )


def write_shop(shop: Shop, outdir: str | Path) -> dict[str, Path]:
    """Persist a shop to the standard file layout; returns the path map."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "catalog": outdir / "catalog.jsonl",
        "sessions": outdir / "sessions.jsonl",
        "search_logs": outdir / "search_logs.jsonl",
        "images": outdir / "images.jsonl",
        "manifest": outdir / "manifest.json",
    }
    write_jsonl(
        paths["catalog"],
        (
            {
                "id": p.id,
                "name": p.name,
                "description": p.description,
                "categories": list(p.categories),
                "price": p.price,
                "properties": p.properties,
                "image_ref": p.image_ref,
            }
            for p in shop.catalog
        ),
    )
    write_jsonl(
        paths["sessions"],
        (
            {
                "session_id": s.session_id,
                "kind": s.kind,
                "events": [{"product_id": pid, "ts": ts} for pid, ts in s.events],
            }
            for s in shop.sessions
        ),
    )
    write_jsonl(
        paths["search_logs"],
        ({"query": e.query, "ts": e.ts} for e in shop.search_logs),
    )
    write_jsonl(
        paths["images"],
        (
            {"id": pid, "kind": "image", "vector": [float(x) for x in vec]}
            for pid, vec in sorted(shop.images.vectors.items())
        ),
    )
    write_json(paths["manifest"], manifest_to_dict(shop.manifest))
    return paths


def manifest_to_dict(manifest: ShopManifest) -> dict:
    return {
        "clusters": [
            {"cluster_id": c.cluster_id, "members": sorted(c.members)}
            for c in manifest.clusters
        ],
        "query_weights": manifest.query_weights,
        "pdp_probs": manifest.pdp_probs,
        "price_params": {str(c): list(p) for c, p in manifest.price_params.items()},
        "trending_ids": list(manifest.trending_ids),
        "counts": manifest.counts,
    }


def load_manifest(path: str | Path) -> ShopManifest:
    raw = read_json(path)
    return ShopManifest(
        clusters=[
            SubstituteCluster(int(c["cluster_id"]), frozenset(c["members"]))
            for c in raw["clusters"]
        ],
        query_weights={k: float(v) for k, v in raw["query_weights"].items()},
        pdp_probs={k: float(v) for k, v in raw["pdp_probs"].items()},
        price_params={int(c): (float(p[0]), float(p[1])) for c, p in raw["price_params"].items()},
        trending_ids=tuple(raw["trending_ids"]),
        counts={k: int(v) for k, v in raw["counts"].items()},
    )


def golden_pairs(
    manifest: ShopManifest,
    split: ProductSplit,
    candidates: dict[str, CandidateList],
    count: int = 200,
    seed: int = 0,
    balanced: bool = True,
) -> list[LabeledPair]:
    """Sample golden test pairs from the manifest's cluster ground truth.

    Both endpoints are validation products (the strict regime: no test
    product is seen in pair training). Positives are within-cluster pairs;
    negatives are cross-cluster pairs restricted to each other's retrieved
    candidate sets so the test distribution matches what the classifier
    sees after fast retrieval.
    """
    if len(manifest.clusters) < 2:
        raise ValueError("insufficient clusters: need at least 2 to build negatives")
    cluster_of = manifest.cluster_of()
    val = sorted(pid for pid in split.validation_ids if pid in cluster_of)

    pos_pool: list[tuple[str, str]] = []
    neg_pool: list[tuple[str, str]] = []
    for i, a in enumerate(val):
        neighbors = set(candidates[a].ids) if a in candidates else set()
        for b in val[i + 1 :]:
            if cluster_of[a] == cluster_of[b]:
                pos_pool.append((a, b))
            else:
                reverse = b in candidates and a in set(candidates[b].ids)
                if b in neighbors or reverse:
                    neg_pool.append((a, b))
    if not pos_pool or not neg_pool:
        raise ValueError("insufficient clusters: validation split yields no usable pairs")

    rng = np.random.default_rng(seed)
    n_half = count // 2
    if balanced:
        n_pos = n_neg = min(n_half, len(pos_pool), len(neg_pool))
    else:
        n_pos = min(n_half, len(pos_pool))
        n_neg = min(count - n_pos, len(neg_pool))
    picked_pos = [pos_pool[i] for i in sorted(rng.choice(len(pos_pool), n_pos, replace=False))]
    picked_neg = [neg_pool[i] for i in sorted(rng.choice(len(neg_pool), n_neg, replace=False))]
    return sorted(
        [LabeledPair(a, b, POSITIVE, OBSERVED) for a, b in picked_pos]
        + [LabeledPair(a, b, NEGATIVE, OBSERVED) for a, b in picked_neg]
    )
