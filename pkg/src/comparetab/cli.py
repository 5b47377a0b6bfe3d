"""Command-line interface for the comparison-table pipeline."""

from __future__ import annotations

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import cbow, evaluation, pairs as pairgen, siamese, tables as tablebuild
from .catalog import load_catalog, load_search_logs, load_sessions, split_products
from .embeddings import (
    load_embeddings,
    load_image_embeddings,
    save_embeddings,
    save_word_vectors,
)
from .humaneval import agreement_report, bt_fit, load_judgments, rbo
from .jsonl import write_json
from .pipeline import PipelineConfig, StepError, run_dag
from .simulate import ShopSpec, simulate_shop, write_shop


def _parse_weights(raw: str) -> tuple[float, float, float]:
    parts = [float(x) for x in raw.split(",")]
    if len(parts) != 3:
        raise click.BadParameter("expected three comma-separated weights, e.g. 0.4,0.3,0.3")
    return (parts[0], parts[1], parts[2])


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Build product comparison tables from catalogs and behavioral logs."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command("simulate-shop")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--clusters", default=20, show_default=True)
@click.option("--products-per-cluster", default=10, show_default=True)
@click.option("--browse-sessions", default=5000, show_default=True)
@click.option("--purchase-sessions", default=500, show_default=True)
@click.option("--queries", default=2000, show_default=True)
@click.option("--cross-noise", default=0.05, show_default=True)
@click.option("--trending-noise", default=0.05, show_default=True)
@click.option("--seed", default=0, show_default=True)
def simulate_shop_cmd(
    out: Path,
    clusters: int,
    products_per_cluster: int,
    browse_sessions: int,
    purchase_sessions: int,
    queries: int,
    cross_noise: float,
    trending_noise: float,
    seed: int,
) -> None:
    """Generate a synthetic shop with ground-truth substitute clusters."""
    spec = ShopSpec(
        n_clusters=clusters,
        products_per_cluster=products_per_cluster,
        n_browse_sessions=browse_sessions,
        n_purchase_sessions=purchase_sessions,
        n_search_queries=queries,
        cross_noise=cross_noise,
        trending_noise=trending_noise,
        seed=seed,
    )
    paths = write_shop(simulate_shop(spec), out)
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


@main.command()
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--sessions", "sessions_path", required=True, type=click.Path(exists=True))
def ingest(catalog_path: str, sessions_path: str) -> None:
    """Validate a catalog and its session log."""
    catalog = load_catalog(catalog_path)
    sessions = load_sessions(sessions_path, catalog)
    click.echo(
        f"{len(catalog)} products, "
        f"{sum(1 for s in sessions if s.kind == 'browse')} browse sessions, "
        f"{sum(1 for s in sessions if s.kind == 'purchase')} purchase sessions"
    )


@main.command("train-embeddings")
@click.option("--kind", type=click.Choice(["prod2vec", "text"]), required=True)
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--sessions", "sessions_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Output directory; tables are written under their standard names.")
@click.option("--window", type=int, default=None, help="Defaults: 5 (prod2vec), 10 (text).")
@click.option("--iterations", default=30, show_default=True)
@click.option("--dim", default=48, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_embeddings(kind, catalog_path, sessions_path, out, window, iterations, dim, seed) -> None:
    """Train behavioral (prod2vec) or textual embeddings.

    --kind text trains description word vectors and writes the pooled
    name/description/categories product tables alongside them.
    """
    from .embeddings import EmbeddingTable, pool_text_field

    catalog = load_catalog(catalog_path)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "prod2vec":
        if not sessions_path:
            raise click.UsageError("--sessions is required for prod2vec")
        sessions = load_sessions(sessions_path, catalog)
        config = cbow.CbowConfig(
            window=window or 5, iterations=iterations, dim=dim, seed=seed
        )
        save_embeddings(cbow.train_prod2vec(sessions, config), out / "prod2vec.jsonl")
    else:
        config = cbow.text_config(seed=seed, window=window or 10, iterations=iterations, dim=dim)
        words = cbow.train_text_embeddings(catalog, config)
        save_word_vectors(words, out / "words.jsonl")
        for table_kind, text_of in (
            ("name_text", lambda p: p.name),
            ("description_text", lambda p: p.description),
            ("categories_text", lambda p: " ".join(p.categories)),
        ):
            vectors = {p.id: pool_text_field(text_of(p), words)[0] for p in catalog}
            save_embeddings(
                EmbeddingTable(kind=table_kind, dim=words.dim, vectors=vectors),
                out / f"{table_kind}.jsonl",
            )
    click.echo(f"wrote {out}")


@main.command("build-pairs")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--sessions", "sessions_path", required=True, type=click.Path(exists=True))
@click.option("--images", "images_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--clean/--no-clean", "clean", default=True, show_default=True, help="C flag.")
@click.option("--augment/--no-augment", default=True, show_default=True, help="S flag.")
@click.option("--coview-min", default=10, show_default=True, help="N threshold.")
@click.option("--copurchase-min", default=1, show_default=True, help="M threshold.")
@click.option("--max-cluster-size", default=40, show_default=True, help="Z cap.")
@click.option("--seed", default=0, show_default=True)
def build_pairs_cmd(
    catalog_path, sessions_path, images_path, out, clean, augment,
    coview_min, copurchase_min, max_cluster_size, seed,
) -> None:
    """Mine, clean and augment labeled training pairs."""
    catalog = load_catalog(catalog_path)
    sessions = load_sessions(sessions_path, catalog)
    positives = pairgen.to_labeled(pairgen.mine_coview(sessions, coview_min), pairgen.POSITIVE)
    negatives = pairgen.to_labeled(
        pairgen.mine_copurchase(sessions, copurchase_min), pairgen.NEGATIVE
    )
    if clean:
        if not images_path:
            raise click.UsageError("--images is required with --clean")
        result = pairgen.clean_with_images(positives + negatives, load_image_embeddings(images_path))
        positives = [p for p in result.pairs if p.label == pairgen.POSITIVE]
        negatives = [p for p in result.pairs if p.label == pairgen.NEGATIVE]
    positives, negatives = pairgen.remove_conflicts(positives, negatives)
    clusters = pairgen.build_clusters(positives)
    all_pairs = positives + negatives
    if augment:
        all_pairs = pairgen.augment_synthetic(all_pairs, clusters, max_cluster_size, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    pairgen.save_pairs(all_pairs, out / "pairs.jsonl")
    pairgen.save_clusters(clusters, out / "clusters.jsonl")
    click.echo(f"{len(all_pairs)} pairs, {len(clusters)} clusters -> {out}")


@main.command("train-model")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings-dir", required=True, type=click.Path(exists=True, path_type=Path),
              help="Directory holding prod2vec.jsonl and *_text.jsonl tables.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--features", default="categories,description,name,prod2vec", show_default=True)
@click.option("--train-fraction", default=0.8, show_default=True)
@click.option("--max-epochs", default=500, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_model_cmd(
    pairs_path, catalog_path, embeddings_dir, out, features, train_fraction, max_epochs, seed
) -> None:
    """Train the Siamese substitute classifier."""
    catalog = load_catalog(catalog_path)
    split = split_products(catalog, train_fraction, seed)
    feature_config = tuple(features.split(","))
    bundles = siamese.build_bundles(_tables_from_dir(embeddings_dir), feature_config)
    config = siamese.TrainConfig(
        feature_config=feature_config, max_epochs=max_epochs, seed=seed
    )
    model, history = siamese.train(pairgen.load_pairs(pairs_path), bundles, split, config)
    siamese.save_model(model, out)
    click.echo(
        f"stopped after {history.epochs_run} epochs "
        f"(best {history.best_epoch}, val loss {min(history.val_loss):.4f}) -> {out}"
    )


def _tables_from_dir(embeddings_dir: Path) -> dict:
    return {
        "prod2vec": load_embeddings(embeddings_dir / "prod2vec.jsonl"),
        "name": load_embeddings(embeddings_dir / "name_text.jsonl"),
        "description": load_embeddings(embeddings_dir / "description_text.jsonl"),
        "categories": load_embeddings(embeddings_dir / "categories_text.jsonl"),
    }


@main.command("evaluate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="Golden labeled pairs.")
@click.option("--embeddings-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--images", "images_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(path_type=Path))
def evaluate_cmd(model_path, pairs_path, embeddings_dir, images_path, out) -> None:
    """Evaluate a model (and optionally the image baseline) on golden pairs."""
    model = siamese.load_model(model_path)
    golden = pairgen.load_pairs(pairs_path)
    bundles = siamese.build_bundles(_tables_from_dir(embeddings_dir), model.feature_config)
    curve = evaluation.evaluate(model, golden, bundles)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_prcurve_csv(curve, out / "prcurve.csv")
    metrics = {"p_at_r": curve.report()}
    if images_path:
        baseline = evaluation.evaluate_baseline(golden, load_image_embeddings(images_path))
        metrics["baseline_p_at_r"] = baseline.report()
    write_json(out / "metrics.json", metrics)
    for name, values in metrics.items():
        click.echo(f"{name}: {values}")


@main.command("rank-properties")
@click.option("--catalog", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--search-logs", "logs_path", required=True, type=click.Path(exists=True))
@click.option("--weights", default="0.3333,0.3333,0.3334", show_default=True)
@click.option("--out", type=click.Path(path_type=Path))
def rank_properties_cmd(catalog_path, logs_path, weights, out) -> None:
    """Rank catalog properties by query frequency, PDP frequency and entropy.

    Entropy is computed over the whole catalog here; per-query tables use
    the substitute list instead (see build-tables / run).
    """
    catalog = load_catalog(catalog_path)
    logs = load_search_logs(logs_path)
    vocabulary = tablebuild.property_vocabulary(catalog)
    ranked = tablebuild.rank_properties(
        tablebuild.query_frequency(logs, vocabulary),
        tablebuild.pdp_frequency(catalog, vocabulary),
        {name: tablebuild.property_entropy(catalog, name) for name in vocabulary},
        _parse_weights(weights),
    )
    rows = [
        {
            "property": s.property,
            "query_freq": s.query_freq,
            "pdp_freq": s.pdp_freq,
            "entropy": s.entropy,
            "total": s.total,
        }
        for s in ranked
    ]
    if out:
        write_json(out, {"properties": rows})
    for row in rows:
        click.echo(f"{row['property']}: {row['total']:.4f}")


@main.command("build-tables")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def build_tables_cmd(config_path) -> None:
    """Run the table-building slice of the pipeline (ingest through tables)."""
    config = PipelineConfig.from_file(config_path)
    _run(config)


@main.command("bt-rank")
@click.option("--judgments", "judgments_path", required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(path_type=Path))
@click.option("--laplace", is_flag=True, help="Add 0.5 pseudo-counts (regularizes degenerate data).")
@click.option("--product", default=None, help="Product-type label for the agreement report.")
@click.option("--algo-ranking", default=None,
              help="Comma-separated algorithm ranking; adds a (product, RBO) agreement row.")
@click.option("-p", "persistence", default=0.9, show_default=True)
def bt_rank_cmd(judgments_path, out, laplace, product, algo_ranking, persistence) -> None:
    """Fit a Bradley-Terry ranking from pairwise judgments.

    With --algo-ranking the output also reports rank-biased overlap between
    the fitted human ranking and the algorithm's ranking.
    """
    judgments, dropped = load_judgments(judgments_path)
    result = bt_fit(judgments, laplace=laplace)
    click.echo(f"dropped {dropped} responses failing the control task")
    for item in result.ranking:
        click.echo(f"{item}: {result.strengths[item]:.4f}")
    payload = {
        "ranking": list(result.ranking),
        "strengths": result.strengths,
        "iterations": result.iterations,
    }
    if algo_ranking:
        report = agreement_report(
            [(product or "product", judgments, algo_ranking.split(","))],
            persistence,
            laplace=laplace,
        )
        payload["agreement"] = report
        for row in report["rows"]:
            click.echo(f"RBO vs algorithm ({row['product']}): {row['rbo']:.3f}")
    if out:
        write_json(out, payload)


@main.command("rbo")
@click.option("--list-a", required=True, help="Comma-separated ranked items.")
@click.option("--list-b", required=True, help="Comma-separated ranked items.")
@click.option("-p", "persistence", default=0.9, show_default=True)
def rbo_cmd(list_a, list_b, persistence) -> None:
    """Rank-biased overlap of two ranked lists."""
    click.echo(f"{rbo(list_a.split(','), list_b.split(','), persistence):.6f}")


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--jobs", type=int, default=None, help="Max concurrent steps.")
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Override out_dir.")
def run_cmd(config_path, seed, jobs, out) -> None:
    """Run the full pipeline DAG from a JSON config file."""
    config = PipelineConfig.from_file(config_path)
    if seed is not None:
        config = replace(config, seed=seed)
    if jobs is not None:
        config = replace(config, jobs=jobs)
    if out is not None:
        config = replace(config, out_dir=str(out))
    _run(config)


def _run(config: PipelineConfig) -> None:
    try:
        resolved = run_dag(config)
    except StepError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for name in sorted(resolved):
        click.echo(f"{name}: {resolved[name]}")


if __name__ == "__main__":
    main()
