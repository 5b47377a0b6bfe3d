"""Catalog domain types, ingestion and the product-level train/validation split."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .jsonl import read_jsonl

log = logging.getLogger(__name__)

SESSION_KINDS = ("browse", "purchase")


@dataclass(frozen=True)
class Product:
    """One catalog entry. ``properties`` maps property name -> value string."""

    id: str
    name: str
    description: str
    categories: tuple[str, ...] = ()
    price: float = 1.0
    properties: dict[str, str] = field(default_factory=dict)
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("product id must be non-empty")
        if not (self.price > 0):
            raise ValueError(f"nonpositive price for product {self.id!r}")


@dataclass(frozen=True)
class Session:
    """An ordered product interaction sequence (views or purchases)."""

    session_id: str
    kind: str
    events: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if self.kind not in SESSION_KINDS:
            raise ValueError(f"session {self.session_id!r}: unknown kind {self.kind!r}")
        if not self.events:
            raise ValueError(f"session {self.session_id!r}: no events")
        timestamps = [ts for _, ts in self.events]
        if any(b < a for a, b in zip(timestamps, timestamps[1:])):
            raise ValueError(f"session {self.session_id!r}: timestamps decrease")

    @property
    def product_ids(self) -> tuple[str, ...]:
        return tuple(pid for pid, _ in self.events)


@dataclass(frozen=True)
class SearchLogEntry:
    query: str
    ts: float


@dataclass(frozen=True)
class ProductSplit:
    """Disjoint train/validation product id sets covering the catalog."""

    train_ids: frozenset[str]
    validation_ids: frozenset[str]

    def side(self, product_id: str) -> str:
        if product_id in self.train_ids:
            return "train"
        if product_id in self.validation_ids:
            return "validation"
        raise KeyError(product_id)


def load_catalog(path: str | Path) -> list[Product]:
    """Load and validate a catalog.jsonl file.

    Rejects duplicate ids and nonpositive prices; errors name the offending
    line or product id.
    """
    products: list[Product] = []
    seen: set[str] = set()
    for lineno, rec in read_jsonl(path):
        try:
            pid = str(rec["id"])
            price = float(rec["price"])
            if not (price > 0):
                raise ValueError(f"nonpositive price for product {pid!r}")
            product = Product(
                id=pid,
                name=str(rec.get("name", "")),
                description=str(rec.get("description", "")),
                categories=tuple(str(c) for c in rec.get("categories", [])),
                price=price,
                properties={str(k): str(v) for k, v in rec.get("properties", {}).items()},
                image_ref=rec.get("image_ref"),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line {lineno}: malformed product record: {exc}") from exc
        if product.id in seen:
            raise ValueError(f"{path}: line {lineno}: duplicate product id {product.id!r}")
        seen.add(product.id)
        products.append(product)
    return products


def load_sessions(path: str | Path, catalog: list[Product]) -> list[Session]:
    """Load sessions.jsonl, dropping events whose product id is not in the catalog.

    Unknown-id events and the sessions they empty out are dropped with a
    counted warning; an unreadable file is fatal.
    """
    known = {p.id for p in catalog}
    sessions: list[Session] = []
    dropped_events = 0
    dropped_sessions = 0
    for lineno, rec in read_jsonl(path):
        try:
            raw_events = [(str(e["product_id"]), float(e["ts"])) for e in rec["events"]]
            kept = tuple(e for e in raw_events if e[0] in known)
            dropped_events += len(raw_events) - len(kept)
            if not kept:
                dropped_sessions += 1
                continue
            sessions.append(
                Session(session_id=str(rec["session_id"]), kind=str(rec["kind"]), events=kept)
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line {lineno}: malformed session record: {exc}") from exc
    if dropped_events or dropped_sessions:
        log.warning(
            "dropped %d events with unknown product ids and %d empty sessions from %s",
            dropped_events,
            dropped_sessions,
            path,
        )
    return sessions


def load_search_logs(path: str | Path) -> list[SearchLogEntry]:
    """Load search_logs.jsonl, dropping entries whose query is blank after trimming."""
    entries: list[SearchLogEntry] = []
    dropped = 0
    for lineno, rec in read_jsonl(path):
        try:
            query = str(rec["query"]).strip()
            ts = float(rec.get("ts", 0.0))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: line {lineno}: malformed search log record: {exc}") from exc
        if not query:
            dropped += 1
            continue
        entries.append(SearchLogEntry(query=query, ts=ts))
    if dropped:
        log.warning("dropped %d blank queries from %s", dropped, path)
    return entries


def split_products(catalog: list[Product], train_fraction: float = 0.8, seed: int = 0) -> ProductSplit:
    """Deterministic uniform product split.

    Ids are sorted before the seeded shuffle, so the split is stable under
    catalog file reorderings. Train size is round(fraction * n).
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ids = sorted(p.id for p in catalog)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(train_fraction * len(ids) + 0.5)
    return ProductSplit(
        train_ids=frozenset(shuffled[:n_train]),
        validation_ids=frozenset(shuffled[n_train:]),
    )
