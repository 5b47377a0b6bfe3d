"""Siamese binary substitute classifier.

Each product is a bundle of dense feature vectors. A shared trunk
re-projects every feature kind through its own ReLU layer, concatenates,
fuses through a second ReLU layer and L2-normalizes; the pair score is the
sigmoid of a linear read-out over the element-wise absolute difference of
the two fused representations. Training is plain mini-batch Adam on binary
cross-entropy with early stopping on validation loss.

All math is float64 NumPy with hand-written backpropagation, which keeps
the gradient check exact and the runs bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .catalog import ProductSplit
from .embeddings import EmbeddingTable
from .jsonl import read_json, write_json
from .pairs import NEGATIVE, POSITIVE, LabeledPair, split_pairs

log = logging.getLogger(__name__)

# Classifier feature kinds and the embedding-table kind each one reads.
FEATURE_TABLE_KINDS = {
    "categories": "categories_text",
    "description": "description_text",
    "name": "name_text",
    "prod2vec": "prod2vec",
}
DEFAULT_FEATURES = ("categories", "description", "name", "prod2vec")

# A product's feature bundle: feature kind -> vector.
FeatureBundle = dict[str, np.ndarray]


@dataclass
class SiameseModel:
    feature_config: tuple[str, ...]
    feature_dims: dict[str, int]
    proj_dim: int
    fuse_dim: int
    params: dict[str, np.ndarray]

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    patience: int = 20
    max_epochs: int = 500
    seed: int = 0
    feature_config: tuple[str, ...] = DEFAULT_FEATURES

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.feature_config:
            raise ValueError("feature_config must not be empty")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0


def init_model(
    feature_dims: Mapping[str, int],
    proj_dim: int = 48,
    fuse_dim: int = 128,
    seed: int = 0,
) -> SiameseModel:
    """He-style uniform initialization (scaled by fan-in), zero biases."""
    feature_config = tuple(sorted(feature_dims))
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def he_uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for kind in feature_config:
        d = int(feature_dims[kind])
        params[f"proj:{kind}:W"] = he_uniform(d, (d, proj_dim))
        params[f"proj:{kind}:b"] = np.zeros(proj_dim)
    concat_dim = proj_dim * len(feature_config)
    params["fuse:W"] = he_uniform(concat_dim, (concat_dim, fuse_dim))
    params["fuse:b"] = np.zeros(fuse_dim)
    params["clf:W"] = he_uniform(fuse_dim, (fuse_dim,))
    params["clf:b"] = np.zeros(1)
    return SiameseModel(
        feature_config=feature_config,
        feature_dims={k: int(v) for k, v in feature_dims.items()},
        proj_dim=proj_dim,
        fuse_dim=fuse_dim,
        params=params,
    )


def _check_batch(model: SiameseModel, X: Mapping[str, np.ndarray]) -> None:
    for kind in model.feature_config:
        if kind not in X:
            raise ValueError(f"feature bundle missing kind {kind!r}")
        if X[kind].shape[1] != model.feature_dims[kind]:
            raise ValueError(
                f"feature {kind!r} has dimension {X[kind].shape[1]}, "
                f"expected {model.feature_dims[kind]}"
            )


def _branch_forward(model: SiameseModel, X: Mapping[str, np.ndarray]) -> dict:
    """Forward one side of the pair for a batch; returns all intermediates."""
    _check_batch(model, X)
    p = model.params
    projections = {}
    for kind in model.feature_config:
        q = X[kind] @ p[f"proj:{kind}:W"] + p[f"proj:{kind}:b"]
        projections[kind] = (q, np.maximum(q, 0.0))
    concat = np.concatenate([projections[k][1] for k in model.feature_config], axis=1)
    pre_fuse = concat @ p["fuse:W"] + p["fuse:b"]
    fused = np.maximum(pre_fuse, 0.0)
    norms = np.linalg.norm(fused, axis=1)
    degenerate = norms == 0.0
    if degenerate.any():
        log.warning("fuse produced %d all-zero vectors (flagged)", int(degenerate.sum()))
    safe = np.where(degenerate, 1.0, norms)
    h = fused / safe[:, None]
    return {
        "X": X,
        "projections": projections,
        "concat": concat,
        "pre_fuse": pre_fuse,
        "fused": fused,
        "norms": safe,
        "degenerate": degenerate,
        "h": h,
    }


def _branch_backward(model: SiameseModel, cache: dict, dh: np.ndarray, grads: dict) -> None:
    """Accumulate parameter gradients for one branch given dL/dh."""
    p = model.params
    h, norms = cache["h"], cache["norms"]
    # L2-normalize backward: dF = (dh - h (h . dh)) / ||F||; zero rows pass nothing
    dot = np.sum(h * dh, axis=1, keepdims=True)
    dfused = (dh - h * dot) / norms[:, None]
    dfused[cache["degenerate"]] = 0.0
    dpre = dfused * (cache["pre_fuse"] > 0.0)
    grads["fuse:W"] += cache["concat"].T @ dpre
    grads["fuse:b"] += dpre.sum(axis=0)
    dconcat = dpre @ p["fuse:W"].T
    offset = 0
    for kind in model.feature_config:
        dr = dconcat[:, offset : offset + model.proj_dim]
        offset += model.proj_dim
        q = cache["projections"][kind][0]
        dq = dr * (q > 0.0)
        grads[f"proj:{kind}:W"] += cache["X"][kind].T @ dq
        grads[f"proj:{kind}:b"] += dq.sum(axis=0)


def _bundle_to_batch(model: SiameseModel, bundle: FeatureBundle) -> dict[str, np.ndarray]:
    return {
        kind: np.asarray(bundle[kind], dtype=np.float64).reshape(1, -1)
        for kind in model.feature_config
    }


def fuse(bundle: FeatureBundle, model: SiameseModel) -> np.ndarray:
    """Fused unit-norm representation of one product (zero vector if the
    pre-normalization activation is all zero, which is logged)."""
    cache = _branch_forward(model, _bundle_to_batch(model, bundle))
    h = cache["h"][0].copy()
    if cache["degenerate"][0]:
        h[:] = 0.0
    return h


def _logits(model: SiameseModel, h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    z = np.abs(h1 - h2)
    return z @ model.params["clf:W"] + model.params["clf:b"][0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def score_pair(b1: FeatureBundle, b2: FeatureBundle, model: SiameseModel) -> float:
    """Substitutability confidence in (0, 1); exactly symmetric in its arguments."""
    h1 = fuse(b1, model)
    h2 = fuse(b2, model)
    return float(_sigmoid(_logits(model, h1[None, :], h2[None, :]))[0])


def score_batch(
    model: SiameseModel, X1: Mapping[str, np.ndarray], X2: Mapping[str, np.ndarray]
) -> np.ndarray:
    h1 = _branch_forward(model, X1)["h"]
    h2 = _branch_forward(model, X2)["h"]
    return _sigmoid(_logits(model, h1, h2))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def loss_and_grads(
    model: SiameseModel,
    X1: Mapping[str, np.ndarray],
    X2: Mapping[str, np.ndarray],
    y: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy over the batch and gradients for every parameter."""
    n = y.shape[0]
    c1 = _branch_forward(model, X1)
    c2 = _branch_forward(model, X2)
    h1, h2 = c1["h"], c2["h"]
    diff = h1 - h2
    z = np.abs(diff)
    a = z @ model.params["clf:W"] + model.params["clf:b"][0]
    loss = float(np.mean(y * _softplus(-a) + (1.0 - y) * _softplus(a)))

    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    da = (_sigmoid(a) - y) / n
    grads["clf:W"] += z.T @ da
    grads["clf:b"] += np.array([da.sum()])
    dz = da[:, None] * model.params["clf:W"][None, :]
    dh1 = dz * np.sign(diff)
    _branch_backward(model, c1, dh1, grads)
    _branch_backward(model, c2, -dh1, grads)
    return loss, grads


def batch_loss(
    model: SiameseModel,
    X1: Mapping[str, np.ndarray],
    X2: Mapping[str, np.ndarray],
    y: np.ndarray,
) -> float:
    h1 = _branch_forward(model, X1)["h"]
    h2 = _branch_forward(model, X2)["h"]
    a = _logits(model, h1, h2)
    return float(np.mean(y * _softplus(-a) + (1.0 - y) * _softplus(a)))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: SiameseModel) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in model.params.items()},
            v={k: np.zeros_like(p) for k, p in model.params.items()},
        )


def adam_step(
    model: SiameseModel,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    t = state.t
    for name, g in grads.items():
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def build_bundles(
    tables: Mapping[str, EmbeddingTable],
    feature_config: tuple[str, ...] = DEFAULT_FEATURES,
    product_ids: list[str] | None = None,
) -> dict[str, FeatureBundle]:
    """Assemble per-product feature bundles from embedding tables.

    ``tables`` is keyed by classifier feature kind. Products missing a
    kind's vector get a zero vector (counted and logged); products present
    in no table are omitted.
    """
    for kind in feature_config:
        if kind not in tables:
            raise ValueError(f"no embedding table for feature kind {kind!r}")
    if product_ids is None:
        ids: set[str] = set()
        for kind in feature_config:
            ids.update(tables[kind].vectors)
        product_ids = sorted(ids)
    bundles: dict[str, FeatureBundle] = {}
    zero_filled = 0
    for pid in product_ids:
        bundle: FeatureBundle = {}
        for kind in feature_config:
            table = tables[kind]
            vec = table.vectors.get(pid)
            if vec is None:
                vec = np.zeros(table.dim, dtype=np.float32)
                zero_filled += 1
            bundle[kind] = np.asarray(vec, dtype=np.float64)
        bundles[pid] = bundle
    if zero_filled:
        log.warning("bundles: %d missing feature vectors filled with zeros", zero_filled)
    return bundles


def _pairs_to_arrays(
    model: SiameseModel,
    pairs: list[LabeledPair],
    bundles: Mapping[str, FeatureBundle],
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], np.ndarray]:
    X1 = {
        kind: np.stack([bundles[p.a][kind] for p in pairs]).astype(np.float64)
        for kind in model.feature_config
    }
    X2 = {
        kind: np.stack([bundles[p.b][kind] for p in pairs]).astype(np.float64)
        for kind in model.feature_config
    }
    y = np.asarray([1.0 if p.label == POSITIVE else 0.0 for p in pairs])
    return X1, X2, y


def train(
    pairs: list[LabeledPair],
    bundles: Mapping[str, FeatureBundle],
    split: ProductSplit,
    config: TrainConfig,
) -> tuple[SiameseModel, TrainHistory]:
    """Train with Adam and early stopping on validation loss.

    Deterministic for a fixed seed: initialization and the per-epoch
    shuffle derive from one PCG64 stream. The returned model carries the
    best-validation-epoch weights.
    """
    usable = [p for p in pairs if p.a in bundles and p.b in bundles]
    if len(usable) < len(pairs):
        log.warning("dropped %d pairs lacking feature bundles", len(pairs) - len(usable))
    train_pairs, val_pairs = split_pairs(usable, split)
    train_labels = {p.label for p in train_pairs}
    if train_labels != {POSITIVE, NEGATIVE}:
        raise ValueError("degenerate labels: training pairs must contain both labels")
    if not val_pairs:
        raise ValueError("empty validation pair set")

    some_bundle = bundles[train_pairs[0].a]
    feature_dims = {k: int(some_bundle[k].shape[0]) for k in config.feature_config}
    model = init_model(feature_dims, seed=config.seed)
    state = AdamState.for_model(model)
    rng = np.random.default_rng(config.seed)

    X1, X2, y = _pairs_to_arrays(model, train_pairs, bundles)
    V1, V2, vy = _pairs_to_arrays(model, val_pairs, bundles)

    history = TrainHistory()
    best_val = np.inf
    best_params = model.copy_params()
    n = len(train_pairs)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            bx1 = {k: X1[k][idx] for k in model.feature_config}
            bx2 = {k: X2[k][idx] for k in model.feature_config}
            loss, grads = loss_and_grads(model, bx1, bx2, y[idx])
            adam_step(model, grads, state, config.learning_rate)
            epoch_loss += loss * len(idx)
        history.train_loss.append(epoch_loss / n)
        val_loss = batch_loss(model, V1, V2, vy)
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = model.copy_params()
            history.best_epoch = epoch
        elif epoch - history.best_epoch >= config.patience:
            break
    history.epochs_run = len(history.train_loss)
    model.params = best_params
    log.info(
        "training stopped after %d epochs (best epoch %d, val loss %.4f)",
        history.epochs_run,
        history.best_epoch,
        best_val,
    )
    return model, history


def gradient_check(
    model: SiameseModel,
    batch: tuple[Mapping[str, np.ndarray], Mapping[str, np.ndarray], np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-finite-difference gradients."""
    X1, X2, y = batch
    _, grads = loss_and_grads(model, X1, X2, y)
    worst = 0.0
    for name in model.param_names():
        param = model.params[name]
        flat = param.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = batch_loss(model, X1, X2, y)
            flat[i] = orig - epsilon
            down = batch_loss(model, X1, X2, y)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def baseline_image_score(a: str, b: str, images: EmbeddingTable) -> float:
    """Image-cosine baseline confidence: cosine rescaled to [0, 1]."""
    if a not in images.vectors:
        raise ValueError(f"missing image vector for {a!r}")
    if b not in images.vectors:
        raise ValueError(f"missing image vector for {b!r}")
    from .embeddings import cosine

    return (cosine(images.vectors[a], images.vectors[b]) + 1.0) / 2.0


def save_model(model: SiameseModel, path: str | Path) -> None:
    """Persist architecture and parameters (row-major weights, then bias)."""
    write_json(
        path,
        {
            "feature_config": list(model.feature_config),
            "feature_dims": model.feature_dims,
            "proj_dim": model.proj_dim,
            "fuse_dim": model.fuse_dim,
            "params": {k: v.reshape(-1).tolist() for k, v in model.params.items()},
            "shapes": {k: list(v.shape) for k, v in model.params.items()},
        },
    )


def load_model(path: str | Path) -> SiameseModel:
    raw = read_json(path)
    params = {
        name: np.asarray(values, dtype=np.float64).reshape(raw["shapes"][name])
        for name, values in raw["params"].items()
    }
    return SiameseModel(
        feature_config=tuple(raw["feature_config"]),
        feature_dims={k: int(v) for k, v in raw["feature_dims"].items()},
        proj_dim=int(raw["proj_dim"]),
        fuse_dim=int(raw["fuse_dim"]),
        params=params,
    )
