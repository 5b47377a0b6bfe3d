"""Single-process DAG runner and the full comparison-engine pipeline.

Every step writes its artifacts to a content-addressed directory
(`<out>/<step>/<hash>/`) whose hash covers the step's config fragment, its
dependencies' hashes (Merkle-style) and the content of external input
files. A step with an existing `_SUCCESS` marker is skipped, so re-runs
with unchanged inputs are free, and two runs with identical seeds produce
byte-identical artifact trees. Independent steps can run concurrently
(--jobs); artifacts never depend on scheduling order.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import cbow, evaluation, pairs as pairgen, siamese, tables as tablebuild
from .catalog import (
    ProductSplit,
    load_catalog,
    load_search_logs,
    load_sessions,
    split_products,
)
from .embeddings import (
    CandidateList,
    EmbeddingTable,
    knn_candidates,
    load_embeddings,
    load_image_embeddings,
    pool_text_field,
    save_embeddings,
    save_word_vectors,
)
from .jsonl import dumps_canonical, read_json, read_jsonl, write_json, write_jsonl
from .simulate import golden_pairs as sample_golden_pairs, load_manifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline knobs; defaults follow the documented operating point."""

    catalog_path: str = ""
    sessions_path: str = ""
    search_logs_path: str = ""
    images_path: str = ""
    manifest_path: str = ""  # synthetic shops: enables golden-pair evaluation
    golden_pairs_path: str = ""  # alternative: pre-labeled golden pairs
    out_dir: str = "out"

    clean_with_images: bool = True  # C
    augment: bool = True  # S
    grid: bool = False  # run all four C/S cells

    coview_min: int = 10  # N
    copurchase_min: int = 1  # M
    view_adjacency: int = 1
    purchase_window: int | None = None
    pos_min: float = 0.8
    neg_max: float = 0.5
    max_cluster_size: int = 40  # Z
    per_pair_cap: int = 5

    k: int = 100
    w: int = 3
    weights: tuple[float, float, float] = (1.0 / 3, 1.0 / 3, 1.0 / 3)
    substitute_threshold: float = 0.5
    max_properties: int = 5

    feature_config: tuple[str, ...] = siamese.DEFAULT_FEATURES
    train_fraction: float = 0.8
    learning_rate: float = 0.001
    batch_size: int = 32
    patience: int = 20
    max_epochs: int = 500

    prod2vec_window: int = 5
    text_window: int = 10
    embed_iterations: int = 30
    embed_dim: int = 48

    golden_count: int = 200
    seed: int = 0
    jobs: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cleaned = dict(raw)
        for key in ("weights", "feature_config"):
            if key in cleaned and cleaned[key] is not None:
                cleaned[key] = tuple(cleaned[key])
        return cls(**cleaned)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(read_json(path))

    def cells(self) -> list[tuple[bool, bool]]:
        if self.grid:
            return [(False, False), (False, True), (True, False), (True, True)]
        return [(self.clean_with_images, self.augment)]


def cell_name(clean: bool, augment: bool) -> str:
    return f"c{int(clean)}-s{int(augment)}"


def cell_label(clean: bool, augment: bool) -> str:
    return f"C={int(clean)}; S={int(augment)}"


class StepError(RuntimeError):
    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"step {step!r} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class StepContext:
    out: Path
    dep_dirs: dict[str, Path]

    def dep(self, name: str) -> Path:
        return self.dep_dirs[name]


@dataclass
class Step:
    name: str
    deps: tuple[str, ...]
    config: dict
    inputs: tuple[Path, ...]
    fn: Callable[[StepContext], None]


def _file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def run_steps(steps: list[Step], out_root: str | Path, jobs: int = 1) -> dict[str, Path]:
    """Execute a step list in dependency order with memoization.

    Returns step name -> resolved artifact directory. Raises StepError on
    the first failure (dependent steps are not attempted).
    """
    out_root = Path(out_root)
    by_name = {s.name: s for s in steps}
    for step in steps:
        for dep in step.deps:
            if dep not in by_name:
                raise ValueError(f"step {step.name!r} depends on unknown step {dep!r}")

    keys: dict[str, str] = {}
    resolved: dict[str, Path] = {}

    def compute_key(step: Step) -> str:
        digest = hashlib.sha256()
        digest.update(step.name.encode())
        digest.update(dumps_canonical(step.config).encode())
        for dep in step.deps:
            digest.update(keys[dep].encode())
        try:
            for path in step.inputs:
                digest.update(_file_hash(path).encode())
        except OSError as exc:
            raise StepError(step.name, exc) from exc
        return digest.hexdigest()[:16]

    def execute(step: Step) -> None:
        outdir = out_root / step.name / keys[step.name]
        marker = outdir / "_SUCCESS"
        if marker.exists():
            log.info("step %s: cached (%s)", step.name, keys[step.name])
            resolved[step.name] = outdir
            return
        outdir.mkdir(parents=True, exist_ok=True)
        try:
            step.fn(StepContext(out=outdir, dep_dirs={d: resolved[d] for d in step.deps}))
        except Exception as exc:
            raise StepError(step.name, exc) from exc
        marker.write_text("ok\n")
        resolved[step.name] = outdir
        log.info("step %s: done (%s)", step.name, keys[step.name])

    if jobs <= 1:
        for step in steps:
            keys[step.name] = compute_key(step)
            execute(step)
        return resolved

    pending = {s.name: set(s.deps) for s in steps}
    running: dict = {}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        while pending or running:
            ready = [name for name, deps in pending.items() if not deps]
            for name in ready:
                del pending[name]
                keys[name] = compute_key(by_name[name])
                running[pool.submit(execute, by_name[name])] = name
            if not running:
                raise ValueError("dependency cycle among steps")
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for future in done:
                name = running.pop(future)
                future.result()  # re-raise StepError
                for deps in pending.values():
                    deps.discard(name)
    return resolved


# --------------------------------------------------------------------------
# step implementations
# --------------------------------------------------------------------------


def _load_split(path: Path) -> ProductSplit:
    raw = read_json(path)
    return ProductSplit(
        train_ids=frozenset(raw["train"]), validation_ids=frozenset(raw["validation"])
    )


def _load_candidates(path: Path) -> dict[str, CandidateList]:
    out = {}
    for _, rec in read_jsonl(path):
        qid = str(rec["query_id"])
        out[qid] = CandidateList(
            query_id=qid,
            candidates=tuple((str(i), float(s)) for i, s in rec["candidates"]),
        )
    return out


def _bundle_tables(ctx: StepContext) -> dict[str, EmbeddingTable]:
    return {
        "prod2vec": load_embeddings(ctx.dep("prod2vec") / "prod2vec.jsonl"),
        "name": load_embeddings(ctx.dep("textvecs") / "name_text.jsonl"),
        "description": load_embeddings(ctx.dep("textvecs") / "description_text.jsonl"),
        "categories": load_embeddings(ctx.dep("textvecs") / "categories_text.jsonl"),
    }


def _golden_for_eval(config: PipelineConfig, ctx: StepContext) -> list[pairgen.LabeledPair]:
    if config.manifest_path:
        return pairgen.load_pairs(ctx.dep("golden") / "golden.jsonl")
    return pairgen.load_pairs(Path(config.golden_pairs_path))


def build_steps(config: PipelineConfig) -> list[Step]:
    """Assemble the full DAG for one pipeline run."""
    steps: list[Step] = []

    def ingest_fn(ctx: StepContext) -> None:
        catalog = load_catalog(config.catalog_path)
        sessions = load_sessions(config.sessions_path, catalog)
        logs = load_search_logs(config.search_logs_path) if config.search_logs_path else []
        write_jsonl(
            ctx.out / "catalog.jsonl",
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
                for p in catalog
            ),
        )
        write_jsonl(
            ctx.out / "sessions.jsonl",
            (
                {
                    "session_id": s.session_id,
                    "kind": s.kind,
                    "events": [{"product_id": pid, "ts": ts} for pid, ts in s.events],
                }
                for s in sessions
            ),
        )
        write_jsonl(ctx.out / "search_logs.jsonl", ({"query": e.query, "ts": e.ts} for e in logs))
        stats = {
            "products": len(catalog),
            "browse_sessions": sum(1 for s in sessions if s.kind == "browse"),
            "purchase_sessions": sum(1 for s in sessions if s.kind == "purchase"),
            "search_queries": len(logs),
        }
        if config.images_path:
            images = load_image_embeddings(config.images_path)
            save_embeddings(images, ctx.out / "images.jsonl")
            stats["image_vectors"] = len(images)
            stats["products_missing_images"] = sum(
                1 for p in catalog if p.id not in images.vectors
            )
        write_json(ctx.out / "stats.json", stats)

    external = [Path(config.catalog_path), Path(config.sessions_path)]
    if config.search_logs_path:
        external.append(Path(config.search_logs_path))
    if config.images_path:
        external.append(Path(config.images_path))
    steps.append(
        Step("ingest", (), {"v": 1}, tuple(external), ingest_fn)
    )

    def split_fn(ctx: StepContext) -> None:
        catalog = load_catalog(ctx.dep("ingest") / "catalog.jsonl")
        split = split_products(catalog, config.train_fraction, config.seed)
        write_json(
            ctx.out / "split.json",
            {"train": sorted(split.train_ids), "validation": sorted(split.validation_ids)},
        )

    steps.append(
        Step(
            "split",
            ("ingest",),
            {"train_fraction": config.train_fraction, "seed": config.seed},
            (),
            split_fn,
        )
    )

    prod2vec_config = cbow.CbowConfig(
        window=config.prod2vec_window,
        iterations=config.embed_iterations,
        dim=config.embed_dim,
        seed=config.seed,
    )

    def prod2vec_fn(ctx: StepContext) -> None:
        catalog = load_catalog(ctx.dep("ingest") / "catalog.jsonl")
        sessions = load_sessions(ctx.dep("ingest") / "sessions.jsonl", catalog)
        table = cbow.train_prod2vec(sessions, prod2vec_config)
        save_embeddings(table, ctx.out / "prod2vec.jsonl")

    steps.append(
        Step(
            "prod2vec",
            ("ingest",),
            {"config": prod2vec_config.__dict__},
            (),
            prod2vec_fn,
        )
    )

    text_cfg = cbow.text_config(
        seed=config.seed,
        window=config.text_window,
        iterations=config.embed_iterations,
        dim=config.embed_dim,
    )

    def textvecs_fn(ctx: StepContext) -> None:
        catalog = load_catalog(ctx.dep("ingest") / "catalog.jsonl")
        words = cbow.train_text_embeddings(catalog, text_cfg)
        save_word_vectors(words, ctx.out / "words.jsonl")
        for kind, text_of in (
            ("name_text", lambda p: p.name),
            ("description_text", lambda p: p.description),
            ("categories_text", lambda p: " ".join(p.categories)),
        ):
            vectors = {}
            uncovered = 0
            for product in catalog:
                vec, hits = pool_text_field(text_of(product), words)
                vectors[product.id] = vec
                uncovered += hits == 0
            if uncovered:
                log.warning("%s: %d products fully out of vocabulary", kind, uncovered)
            save_embeddings(
                EmbeddingTable(kind=kind, dim=words.dim, vectors=vectors),
                ctx.out / f"{kind}.jsonl",
            )

    steps.append(
        Step("textvecs", ("ingest",), {"config": text_cfg.__dict__}, (), textvecs_fn)
    )

    def candidates_fn(ctx: StepContext) -> None:
        table = load_embeddings(ctx.dep("prod2vec") / "prod2vec.jsonl")
        write_jsonl(
            ctx.out / "candidates.jsonl",
            (
                {
                    "query_id": qid,
                    "candidates": [
                        [pid, sim] for pid, sim in knn_candidates(qid, table, config.k).candidates
                    ],
                }
                for qid in sorted(table.vectors)
            ),
        )

    steps.append(Step("candidates", ("prod2vec",), {"k": config.k}, (), candidates_fn))

    for clean, augment in config.cells():
        cname = cell_name(clean, augment)

        def pairs_fn(ctx: StepContext, clean: bool = clean, augment: bool = augment) -> None:
            catalog = load_catalog(ctx.dep("ingest") / "catalog.jsonl")
            sessions = load_sessions(ctx.dep("ingest") / "sessions.jsonl", catalog)
            split = _load_split(ctx.dep("split") / "split.json")
            positives = pairgen.to_labeled(
                pairgen.mine_coview(sessions, config.coview_min, config.view_adjacency),
                pairgen.POSITIVE,
            )
            negatives = pairgen.to_labeled(
                pairgen.mine_copurchase(sessions, config.copurchase_min, config.purchase_window),
                pairgen.NEGATIVE,
            )
            dropped = {"missing_image": 0, "image_threshold": 0}
            if clean:
                images = load_image_embeddings(ctx.dep("ingest") / "images.jsonl")
                cleaned = pairgen.clean_with_images(
                    positives + negatives, images, config.pos_min, config.neg_max
                )
                dropped["missing_image"] = cleaned.dropped_missing
                dropped["image_threshold"] = cleaned.dropped_threshold
                positives = [p for p in cleaned.pairs if p.label == pairgen.POSITIVE]
                negatives = [p for p in cleaned.pairs if p.label == pairgen.NEGATIVE]
            positives, negatives = pairgen.remove_conflicts(positives, negatives)
            clusters = pairgen.build_clusters(positives)
            all_pairs = positives + negatives
            if augment:
                all_pairs = pairgen.augment_synthetic(
                    all_pairs,
                    clusters,
                    config.max_cluster_size,
                    config.per_pair_cap,
                    config.seed,
                )
            train_pairs, val_pairs = pairgen.split_pairs(all_pairs, split)
            pairgen.save_pairs(train_pairs, ctx.out / "pairs_train.jsonl")
            pairgen.save_pairs(val_pairs, ctx.out / "pairs_validation.jsonl")
            pairgen.save_clusters(clusters, ctx.out / "clusters.jsonl")
            stats = pairgen.pair_stats(train_pairs, val_pairs)
            stats["dropped"] = dropped
            write_json(ctx.out / "stats.json", stats)

        steps.append(
            Step(
                f"pairs-{cname}",
                ("ingest", "split"),
                {
                    "C": clean,
                    "S": augment,
                    "N": config.coview_min,
                    "M": config.copurchase_min,
                    "Z": config.max_cluster_size,
                    "pos_min": config.pos_min,
                    "neg_max": config.neg_max,
                    "view_adjacency": config.view_adjacency,
                    "purchase_window": config.purchase_window,
                    "per_pair_cap": config.per_pair_cap,
                    "seed": config.seed,
                },
                (),
                pairs_fn,
            )
        )

        def train_fn(ctx: StepContext, cname: str = cname) -> None:
            split = _load_split(ctx.dep("split") / "split.json")
            train_pairs = pairgen.load_pairs(ctx.dep(f"pairs-{cname}") / "pairs_train.jsonl")
            val_pairs = pairgen.load_pairs(ctx.dep(f"pairs-{cname}") / "pairs_validation.jsonl")
            bundles = siamese.build_bundles(_bundle_tables(ctx), config.feature_config)
            train_config = siamese.TrainConfig(
                learning_rate=config.learning_rate,
                batch_size=config.batch_size,
                patience=config.patience,
                max_epochs=config.max_epochs,
                seed=config.seed,
                feature_config=config.feature_config,
            )
            model, history = siamese.train(train_pairs + val_pairs, bundles, split, train_config)
            siamese.save_model(model, ctx.out / "model.json")
            write_json(
                ctx.out / "history.json",
                {
                    "train_loss": history.train_loss,
                    "val_loss": history.val_loss,
                    "best_epoch": history.best_epoch,
                    "epochs_run": history.epochs_run,
                },
            )

        steps.append(
            Step(
                f"train-{cname}",
                ("split", f"pairs-{cname}", "prod2vec", "textvecs"),
                {
                    "learning_rate": config.learning_rate,
                    "batch_size": config.batch_size,
                    "patience": config.patience,
                    "max_epochs": config.max_epochs,
                    "feature_config": list(config.feature_config),
                    "seed": config.seed,
                },
                (),
                train_fn,
            )
        )

    evaluable = bool(config.manifest_path or config.golden_pairs_path)
    if config.manifest_path:

        def golden_fn(ctx: StepContext) -> None:
            manifest = load_manifest(config.manifest_path)
            split = _load_split(ctx.dep("split") / "split.json")
            candidates = _load_candidates(ctx.dep("candidates") / "candidates.jsonl")
            golden = sample_golden_pairs(
                manifest, split, candidates, config.golden_count, config.seed
            )
            pairgen.save_pairs(golden, ctx.out / "golden.jsonl")

        steps.append(
            Step(
                "golden",
                ("split", "candidates"),
                {"count": config.golden_count, "seed": config.seed},
                (Path(config.manifest_path),),
                golden_fn,
            )
        )

    if evaluable:
        for clean, augment in config.cells():
            cname = cell_name(clean, augment)

            def evaluate_fn(
                ctx: StepContext, clean: bool = clean, augment: bool = augment
            ) -> None:
                cname = cell_name(clean, augment)
                model = siamese.load_model(ctx.dep(f"train-{cname}") / "model.json")
                golden = _golden_for_eval(config, ctx)
                bundles = siamese.build_bundles(_bundle_tables(ctx), config.feature_config)
                curve = evaluation.evaluate(model, golden, bundles)
                evaluation.write_prcurve_csv(curve, ctx.out / "prcurve.csv")
                metrics = {
                    "configuration": cell_label(clean, augment),
                    "p_at_r": curve.report(),
                    "golden_pairs": len(golden),
                    "seed": config.seed,
                }
                images = load_image_embeddings(ctx.dep("ingest") / "images.jsonl")
                baseline = evaluation.evaluate_baseline(golden, images)
                evaluation.write_prcurve_csv(baseline, ctx.out / "baseline_prcurve.csv")
                metrics["baseline_p_at_r"] = baseline.report()
                write_json(ctx.out / "metrics.json", metrics)

            eval_deps = ["ingest", f"train-{cname}", "prod2vec", "textvecs"]
            eval_inputs: tuple[Path, ...] = ()
            if config.manifest_path:
                eval_deps.append("golden")
            else:
                eval_inputs = (Path(config.golden_pairs_path),)
            steps.append(
                Step(
                    f"evaluate-{cname}",
                    tuple(eval_deps),
                    {"recalls": list(evaluation.REPORT_RECALLS), "seed": config.seed},
                    eval_inputs,
                    evaluate_fn,
                )
            )

        def report_fn(ctx: StepContext) -> None:
            rows = []
            baseline_row = None
            for clean, augment in config.cells():
                metrics = read_json(ctx.dep(f"evaluate-{cell_name(clean, augment)}") / "metrics.json")
                rows.append(
                    {"configuration": metrics["configuration"], "p_at_r": metrics["p_at_r"]}
                )
                baseline_row = {
                    "configuration": "Baseline",
                    "p_at_r": metrics["baseline_p_at_r"],
                }
            write_json(ctx.out / "report.json", {"rows": [baseline_row] + rows})

        steps.append(
            Step(
                "report",
                tuple(f"evaluate-{cell_name(c, s)}" for c, s in config.cells()),
                {},
                (),
                report_fn,
            )
        )

    best_cell = cell_name(True, True) if config.grid else cell_name(*config.cells()[0])

    def tables_fn(ctx: StepContext) -> None:
        catalog = load_catalog(ctx.dep("ingest") / "catalog.jsonl")
        by_id = {p.id: p for p in catalog}
        logs = load_search_logs(ctx.dep("ingest") / "search_logs.jsonl")
        candidates = _load_candidates(ctx.dep("candidates") / "candidates.jsonl")
        model = siamese.load_model(ctx.dep(f"train-{best_cell}") / "model.json")
        bundles = siamese.build_bundles(_bundle_tables(ctx), config.feature_config)
        vocabulary = tablebuild.property_vocabulary(catalog)
        query_freq = tablebuild.query_frequency(logs, vocabulary)
        pdp_freq = tablebuild.pdp_frequency(catalog, vocabulary)

        def rows():
            for product in catalog:
                clist = candidates.get(product.id)
                if clist is None or not clist.candidates:
                    continue
                scored = _score_candidates(model, bundles, product.id, clist)
                substitutes = [(by_id[pid], s) for pid, s in scored if s >= config.substitute_threshold]
                relaxed = False
                if len(substitutes) < config.w:
                    substitutes = [(by_id[pid], s) for pid, s in scored[: config.w]]
                    relaxed = True
                if not substitutes:
                    continue
                table = tablebuild.build_table(
                    product,
                    substitutes,
                    query_freq,
                    pdp_freq,
                    config.weights,
                    config.w,
                    config.max_properties,
                )
                yield {
                    "query_id": table.query_id,
                    "substitutes": list(table.substitutes),
                    "properties": list(table.displayed_properties),
                    "property_scores": table.property_scores,
                    "fallback": table.fallback or relaxed,
                }

        write_jsonl(ctx.out / "tables.jsonl", rows())

    steps.append(
        Step(
            "tables",
            ("ingest", "candidates", f"train-{best_cell}", "prod2vec", "textvecs"),
            {
                "w": config.w,
                "weights": list(config.weights),
                "threshold": config.substitute_threshold,
                "max_properties": config.max_properties,
            },
            (),
            tables_fn,
        )
    )
    return steps


def _score_candidates(
    model: siamese.SiameseModel,
    bundles: dict[str, siamese.FeatureBundle],
    query_id: str,
    clist: CandidateList,
) -> list[tuple[str, float]]:
    """Classifier scores for every candidate, ranked descending (ties by id)."""
    usable = [pid for pid, _ in clist.candidates if pid in bundles and query_id in bundles]
    if not usable:
        return []
    X1 = {
        kind: np.stack([bundles[query_id][kind]] * len(usable)).astype(np.float64)
        for kind in model.feature_config
    }
    X2 = {
        kind: np.stack([bundles[pid][kind] for pid in usable]).astype(np.float64)
        for kind in model.feature_config
    }
    scores = siamese.score_batch(model, X1, X2)
    ranked = sorted(zip(usable, scores), key=lambda t: (-t[1], t[0]))
    return [(pid, float(s)) for pid, s in ranked]


def run_dag(config: PipelineConfig) -> dict[str, Path]:
    """Run the full pipeline; returns step name -> artifact directory."""
    steps = build_steps(config)
    return run_steps(steps, config.out_dir, config.jobs)
