"""Precision-recall evaluation for pair scorers.

The curve sweeps every distinct score as a threshold (predict positive at
score >= threshold). Precision-at-recall-X is interpolated: the maximum
precision among operating points whose recall is at least X, which makes
it non-increasing in X even though raw curves are not monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .embeddings import EmbeddingTable
from .pairs import POSITIVE, LabeledPair
from .siamese import FeatureBundle, SiameseModel, _pairs_to_arrays, baseline_image_score, score_batch

REPORT_RECALLS = (0.7, 0.8, 0.9)


@dataclass(frozen=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True)
class PrCurve:
    """Operating points ordered by ascending threshold (recall non-increasing)."""

    points: tuple[PrPoint, ...]

    def precision_at_recall(self, recall: float) -> float:
        eligible = [p.precision for p in self.points if p.recall >= recall]
        if not eligible:
            raise ValueError(f"no operating point reaches recall {recall}")
        return max(eligible)

    def report(self, recalls: tuple[float, ...] = REPORT_RECALLS) -> dict[str, float]:
        return {f"P@R={r}": self.precision_at_recall(r) for r in recalls}


def pr_curve(scores: np.ndarray, labels: np.ndarray) -> PrCurve:
    """Build the PR curve from scores and binary labels (1 = positive)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positive pairs to evaluate")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    predicted = np.arange(1, len(scores) + 1)
    # last index of each run of equal scores = the operating point where
    # every pair scoring >= that threshold is predicted positive
    boundary = np.nonzero(np.diff(sorted_scores, append=-np.inf))[0]
    points = [
        PrPoint(
            threshold=float(sorted_scores[i]),
            precision=float(tp[i] / predicted[i]),
            recall=float(tp[i] / n_pos),
        )
        for i in boundary
    ]
    points.sort(key=lambda p: p.threshold)
    return PrCurve(points=tuple(points))


def evaluate(
    model: SiameseModel,
    golden_pairs: list[LabeledPair],
    bundles: Mapping[str, FeatureBundle],
) -> PrCurve:
    """Score golden pairs with the model and build their PR curve."""
    if not golden_pairs:
        raise ValueError("no golden pairs")
    X1, X2, y = _pairs_to_arrays(model, golden_pairs, bundles)
    scores = score_batch(model, X1, X2)
    return pr_curve(scores, y)


def evaluate_baseline(golden_pairs: list[LabeledPair], images: EmbeddingTable) -> PrCurve:
    """PR curve of the image-cosine baseline over the same golden pairs."""
    if not golden_pairs:
        raise ValueError("no golden pairs")
    scores = np.asarray([baseline_image_score(p.a, p.b, images) for p in golden_pairs])
    labels = np.asarray([1.0 if p.label == POSITIVE else 0.0 for p in golden_pairs])
    return pr_curve(scores, labels)


def write_prcurve_csv(curve: PrCurve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold,precision,recall\n")
        for p in curve.points:
            fh.write(f"{p.threshold!r},{p.precision!r},{p.recall!r}\n")


def load_prcurve_csv(path: str | Path) -> PrCurve:
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "threshold,precision,recall":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            t, prec, rec = line.strip().split(",")
            points.append(PrPoint(float(t), float(prec), float(rec)))
    return PrCurve(points=tuple(points))
