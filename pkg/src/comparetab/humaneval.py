"""Collating pairwise human judgments into rankings and measuring agreement.

Bradley-Terry strengths are fit with the standard minorization-maximization
iteration (monotone in the log-likelihood); ranked-list agreement uses
extrapolated rank-biased overlap for finite lists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .jsonl import read_jsonl

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawResponse:
    """One worker response: a pairwise preference plus its control answer."""

    item_a: str
    item_b: str
    winner: str
    control_answer: object = True


@dataclass(frozen=True)
class PairwiseJudgments:
    items: tuple[str, ...]
    wins: np.ndarray  # wins[i][j] = judgments preferring items[i] over items[j]

    def __post_init__(self) -> None:
        n = len(self.items)
        if self.wins.shape != (n, n):
            raise ValueError("wins matrix must be square over the item list")
        if np.any(np.diag(self.wins) != 0):
            raise ValueError("wins matrix must have a zero diagonal")
        if np.any(self.wins < 0):
            raise ValueError("win counts must be nonnegative")


@dataclass(frozen=True)
class BtResult:
    strengths: dict[str, float]  # normalized to sum 1
    ranking: tuple[str, ...]  # descending strength, ties alphabetical
    loglik_history: tuple[float, ...]
    iterations: int


def filter_control(
    responses: list[RawResponse],
    items: list[str],
    control_key: object = True,
) -> tuple[PairwiseJudgments, int]:
    """Drop responses failing the control task and tally the survivors.

    Returns (judgments, n_dropped). A response passes when its control
    answer equals ``control_key``.
    """
    index = {item: i for i, item in enumerate(items)}
    wins = np.zeros((len(items), len(items)), dtype=np.int64)
    dropped = 0
    for resp in responses:
        if resp.control_answer != control_key:
            dropped += 1
            continue
        if resp.winner not in (resp.item_a, resp.item_b):
            raise ValueError(f"winner {resp.winner!r} is not one of the compared items")
        loser = resp.item_b if resp.winner == resp.item_a else resp.item_a
        wins[index[resp.winner], index[loser]] += 1
    if dropped:
        log.info("control task filtered out %d of %d responses", dropped, len(responses))
    return PairwiseJudgments(items=tuple(items), wins=wins), dropped


def load_judgments(path: str | Path) -> tuple[PairwiseJudgments, int]:
    """Read judgments.jsonl ({"item_a","item_b","winner","control_pass"})."""
    responses = []
    items: list[str] = []
    seen = set()
    for _, rec in read_jsonl(path):
        responses.append(
            RawResponse(
                item_a=str(rec["item_a"]),
                item_b=str(rec["item_b"]),
                winner=str(rec["winner"]),
                control_answer=bool(rec.get("control_pass", True)),
            )
        )
        for item in (rec["item_a"], rec["item_b"]):
            if item not in seen:
                seen.add(item)
                items.append(str(item))
    return filter_control(responses, sorted(items))


def _components(judgments: PairwiseJudgments) -> list[list[str]]:
    """Connected components of the comparison graph (any judgment = an edge)."""
    n = len(judgments.items)
    adjacency = (judgments.wins + judgments.wins.T) > 0
    seen: set[int] = set()
    components = []
    for start in range(n):
        if start in seen:
            continue
        stack = [start]
        comp = {start}
        seen.add(start)
        while stack:
            node = stack.pop()
            for other in np.nonzero(adjacency[node])[0]:
                if other not in comp:
                    comp.add(int(other))
                    seen.add(int(other))
                    stack.append(int(other))
        components.append(sorted(judgments.items[i] for i in comp))
    return components


def bt_loglik(wins: np.ndarray, strengths: np.ndarray) -> float:
    """Bradley-Terry log-likelihood: sum over i,j of w_ij * log(s_i / (s_i + s_j))."""
    n = wins.shape[0]
    ll = 0.0
    for i in range(n):
        for j in range(n):
            if i != j and wins[i, j] > 0:
                ll += wins[i, j] * (np.log(strengths[i]) - np.log(strengths[i] + strengths[j]))
    return float(ll)


def bt_fit(
    judgments: PairwiseJudgments,
    max_iter: int = 10_000,
    tol: float = 1e-9,
    laplace: bool = False,
) -> BtResult:
    """Maximum-likelihood Bradley-Terry strengths via the MM iteration.

    Errors on a disconnected comparison graph (naming the components) and
    on items that win or lose every comparison (the MLE diverges);
    ``laplace=True`` instead adds 0.5 pseudo-counts to every ordered pair.
    """
    wins = judgments.wins.astype(np.float64)
    items = judgments.items
    n = len(items)
    if n == 0:
        raise ValueError("no items to rank")
    if n == 1:
        return BtResult(
            strengths={items[0]: 1.0}, ranking=items, loglik_history=(0.0,), iterations=0
        )
    if laplace:
        wins = wins + 0.5
        np.fill_diagonal(wins, 0.0)
    else:
        components = _components(judgments)
        if len(components) > 1:
            raise ValueError(f"disconnected comparison graph: components {components}")
        total_wins = wins.sum(axis=1)
        total_losses = wins.sum(axis=0)
        for i, item in enumerate(items):
            if total_wins[i] + total_losses[i] == 0:
                continue
            if total_losses[i] == 0:
                raise ValueError(f"degenerate MLE: item {item!r} wins every comparison")
            if total_wins[i] == 0:
                raise ValueError(f"degenerate MLE: item {item!r} loses every comparison")

    comparisons = wins + wins.T
    total_wins = wins.sum(axis=1)
    strengths = np.full(n, 1.0 / n)
    history: list[float] = [bt_loglik(wins, strengths)]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        pair_sums = strengths[:, None] + strengths[None, :]
        ratio = np.divide(
            comparisons, pair_sums, out=np.zeros_like(comparisons), where=comparisons > 0
        )
        updated = total_wins / ratio.sum(axis=1)
        updated /= updated.sum()
        delta = np.max(np.abs(updated - strengths))
        strengths = updated
        history.append(bt_loglik(wins, strengths))
        if delta < tol:
            break
    ranking = tuple(sorted(items, key=lambda it: (-strengths[items.index(it)], it)))
    return BtResult(
        strengths={item: float(strengths[i]) for i, item in enumerate(items)},
        ranking=ranking,
        loglik_history=tuple(history),
        iterations=iterations,
    )


def rbo(list_a: list[str], list_b: list[str], p: float) -> float:
    """Extrapolated rank-biased overlap of two duplicate-free ranked lists.

    Symmetric in its arguments; 1.0 for identical lists, 0.0 for fully
    disjoint ones.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    for name, lst in (("list_a", list_a), ("list_b", list_b)):
        if len(set(lst)) != len(lst):
            raise ValueError(f"{name} contains duplicates")
    if not list_a and not list_b:
        return 1.0
    if not list_a or not list_b:
        return 0.0

    shorter, longer = sorted((list(list_a), list(list_b)), key=len)
    s, l = len(shorter), len(longer)
    seen_short: set[str] = set()
    seen_long: set[str] = set()
    overlap = 0.0
    x_at = [0.0] * (l + 1)
    sum1 = 0.0
    for depth in range(1, l + 1):
        item_long = longer[depth - 1]
        item_short = shorter[depth - 1] if depth <= s else None
        if item_long == item_short:
            overlap += 1.0
        else:
            if item_long in seen_short:
                overlap += 1.0
            if item_short is not None and item_short in seen_long:
                overlap += 1.0
            seen_long.add(item_long)
            if item_short is not None:
                seen_short.add(item_short)
        x_at[depth] = overlap
        sum1 += overlap / depth * p**depth
    x_s, x_l = x_at[s], x_at[l]
    sum2 = sum(x_s * (depth - s) / (s * depth) * p**depth for depth in range(s + 1, l + 1))
    tail = ((x_l - x_s) / l + x_s / s) * p**l
    return (1.0 - p) / p * (sum1 + sum2) + tail


def agreement_report(
    cases: list[tuple[str, PairwiseJudgments, list[str]]],
    p: float,
    laplace: bool = False,
) -> dict:
    """Human-vs-algorithm agreement rows: one (product, RBO) per case.

    Each case pairs a product type's judgments with the algorithm's
    property ranking for it; the human ranking comes from a Bradley-Terry
    fit of the judgments.
    """
    rows = []
    for product, judgments, algo_ranking in cases:
        fit = bt_fit(judgments, laplace=laplace)
        rows.append(
            {"product": product, "rbo": rbo(list(fit.ranking), list(algo_ranking), p)}
        )
    return {"p": p, "rows": rows}


def calibrate_rbo_p(
    length: int = 5,
    target: float = 0.6,
    trials: int = 5000,
    seed: int = 0,
    tol: float = 0.01,
) -> float:
    """Find p such that the mean RBO of independent random permutations of
    the given length equals the target within tol.

    The same Monte Carlo sample is reused across p evaluations, so the
    bisection runs on a smooth deterministic function of p.
    """
    if length < 2:
        raise ValueError("length must be >= 2")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    base = [f"item{i}" for i in range(length)]
    samples = [
        (
            [base[i] for i in rng.permutation(length)],
            [base[i] for i in rng.permutation(length)],
        )
        for _ in range(trials)
    ]

    def mean_rbo(p: float) -> float:
        return sum(rbo(a, b, p) for a, b in samples) / len(samples)

    lo, hi = 1e-6, 1.0 - 1e-6
    f_lo, f_hi = mean_rbo(lo), mean_rbo(hi)
    low, high = min(f_lo, f_hi), max(f_lo, f_hi)
    if not (low <= target <= high):
        raise ValueError(
            f"target {target} unachievable: mean RBO over random permutations of "
            f"length {length} ranges over [{low:.4f}, {high:.4f}]"
        )
    for _ in range(200):
        mid = (lo + hi) / 2.0
        f_mid = mean_rbo(mid)
        if abs(f_mid - target) <= tol / 2.0 or (hi - lo) < 1e-9:
            return mid
        if (f_mid < target) == (f_lo < target):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return (lo + hi) / 2.0
