import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from comparetab.cli import main as cli_main
from comparetab.jsonl import read_json, read_jsonl, write_json
from comparetab.pipeline import PipelineConfig, Step, StepError, run_dag, run_steps
from comparetab.simulate import ShopSpec, simulate_shop, write_shop


@pytest.fixture(scope="module")
def shop_dir(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("shop")
    spec = ShopSpec(
        n_clusters=6,
        products_per_cluster=6,
        n_browse_sessions=400,
        n_purchase_sessions=80,
        n_search_queries=200,
        seed=0,
    )
    return write_shop(simulate_shop(spec), outdir)


def shop_config(paths, out_dir, **overrides):
    defaults = dict(
        catalog_path=str(paths["catalog"]),
        sessions_path=str(paths["sessions"]),
        search_logs_path=str(paths["search_logs"]),
        images_path=str(paths["images"]),
        manifest_path=str(paths["manifest"]),
        out_dir=str(out_dir),
        max_epochs=15,
        embed_iterations=5,
        golden_count=60,
        coview_min=3,
        seed=0,
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)


def tree_snapshot(root: Path) -> dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


class TestRunSteps:
    def test_memoization_skips_completed(self, tmp_path):
        calls = []

        def fn(ctx):
            calls.append(1)
            (ctx.out / "data.txt").write_text("payload\n")

        steps = [Step("only", (), {"k": 1}, (), fn)]
        first = run_steps(steps, tmp_path)
        second = run_steps(steps, tmp_path)
        assert calls == [1]
        assert first == second

    def test_config_change_reruns(self, tmp_path):
        calls = []

        def make(config_value):
            def fn(ctx):
                calls.append(config_value)
                (ctx.out / "data.txt").write_text(f"{config_value}\n")

            return [Step("only", (), {"k": config_value}, (), fn)]

        run_steps(make(1), tmp_path)
        run_steps(make(2), tmp_path)
        assert calls == [1, 2]

    def test_dependency_hash_propagates(self, tmp_path):
        def parent(value):
            def fn(ctx):
                (ctx.out / "v.txt").write_text(f"{value}\n")

            return fn

        child_calls = []

        def child(ctx):
            child_calls.append(ctx.dep("parent") / "v.txt")
            (ctx.out / "c.txt").write_text("c\n")

        for value in (1, 1, 2):
            steps = [
                Step("parent", (), {"v": value}, (), parent(value)),
                Step("child", ("parent",), {}, (), child),
            ]
            run_steps(steps, tmp_path)
        assert len(child_calls) == 2  # second run fully cached

    def test_failure_names_step(self, tmp_path):
        def boom(ctx):
            raise RuntimeError("broken wheel")

        with pytest.raises(StepError, match="'exploding'"):
            run_steps([Step("exploding", (), {}, (), boom)], tmp_path)

    def test_parallel_equals_serial(self, tmp_path):
        def writer(tag):
            def fn(ctx):
                (ctx.out / "out.txt").write_text(tag + "\n")

            return fn

        def merge(ctx):
            parts = [
                (ctx.dep(d) / "out.txt").read_text().strip() for d in ("a", "b", "c")
            ]
            (ctx.out / "merged.txt").write_text(",".join(parts) + "\n")

        def steps():
            return [
                Step("a", (), {}, (), writer("a")),
                Step("b", (), {}, (), writer("b")),
                Step("c", (), {}, (), writer("c")),
                Step("merge", ("a", "b", "c"), {}, (), merge),
            ]

        serial = run_steps(steps(), tmp_path / "serial", jobs=1)
        parallel = run_steps(steps(), tmp_path / "parallel", jobs=3)
        assert tree_snapshot(tmp_path / "serial") == tree_snapshot(tmp_path / "parallel")


class TestFullDag:
    def test_full_run_produces_artifacts(self, shop_dir, tmp_path):
        config = shop_config(shop_dir, tmp_path / "run")
        resolved = run_dag(config)
        assert (resolved["tables"] / "tables.jsonl").exists()
        assert (resolved["report"] / "report.json").exists()
        metrics = read_json(resolved["evaluate-c1-s1"] / "metrics.json")
        assert set(metrics["p_at_r"]) == {"P@R=0.7", "P@R=0.8", "P@R=0.9"}
        assert "baseline_p_at_r" in metrics

    def test_rerun_skips_everything(self, shop_dir, tmp_path, caplog):
        config = shop_config(shop_dir, tmp_path / "run")
        first = run_dag(config)
        before = tree_snapshot(Path(config.out_dir))
        with caplog.at_level("INFO"):
            second = run_dag(config)
        assert first == second
        assert tree_snapshot(Path(config.out_dir)) == before
        assert "cached" in caplog.text

    def test_tables_have_w_substitutes_or_flag(self, shop_dir, tmp_path):
        config = shop_config(shop_dir, tmp_path / "run")
        resolved = run_dag(config)
        rows = [rec for _, rec in read_jsonl(resolved["tables"] / "tables.jsonl")]
        assert rows
        for row in rows:
            assert len(row["substitutes"]) == 3 or row["fallback"]
            assert row["query_id"] not in row["substitutes"]

    def test_golden_pair_products_never_in_training_pairs(self, shop_dir, tmp_path):
        config = shop_config(shop_dir, tmp_path / "run")
        resolved = run_dag(config)
        golden_products = set()
        for _, rec in read_jsonl(resolved["golden"] / "golden.jsonl"):
            golden_products.update((rec["a"], rec["b"]))
        train_products = set()
        for _, rec in read_jsonl(resolved["pairs-c1-s1"] / "pairs_train.jsonl"):
            train_products.update((rec["a"], rec["b"]))
        assert golden_products.isdisjoint(train_products)


class TestConfig:
    def test_from_file_and_unknown_keys(self, tmp_path):
        path = tmp_path / "config.json"
        write_json(path, {"catalog_path": "x", "sessions_path": "y", "seed": 3})
        config = PipelineConfig.from_file(path)
        assert config.seed == 3
        write_json(path, {"not_a_field": 1})
        with pytest.raises(ValueError, match="unknown config keys"):
            PipelineConfig.from_file(path)

    def test_cells(self):
        assert PipelineConfig(grid=True).cells() == [
            (False, False),
            (False, True),
            (True, False),
            (True, True),
        ]
        assert PipelineConfig(clean_with_images=False, augment=True).cells() == [(False, True)]


class TestCli:
    def test_simulate_and_ingest(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            cli_main,
            [
                "simulate-shop",
                "--out",
                str(tmp_path / "shop"),
                "--clusters",
                "4",
                "--products-per-cluster",
                "4",
                "--browse-sessions",
                "50",
                "--purchase-sessions",
                "10",
                "--queries",
                "20",
            ],
        )
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            cli_main,
            [
                "ingest",
                "--catalog",
                str(tmp_path / "shop" / "catalog.jsonl"),
                "--sessions",
                str(tmp_path / "shop" / "sessions.jsonl"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "16 products" in result.output

    def test_rbo_command(self):
        runner = CliRunner()
        result = runner.invoke(
            cli_main, ["rbo", "--list-a", "a,b,c", "--list-b", "a,b,c", "-p", "0.9"]
        )
        assert result.exit_code == 0
        assert result.output.strip() == "1.000000"

    def test_bt_rank_command(self, tmp_path):
        path = tmp_path / "judgments.jsonl"
        rows = []
        for _ in range(6):
            rows.append({"item_a": "x", "item_b": "y", "winner": "x", "control_pass": True})
            rows.append({"item_a": "y", "item_b": "x", "winner": "y", "control_pass": True})
            rows.append({"item_a": "y", "item_b": "z", "winner": "y", "control_pass": True})
            rows.append({"item_a": "z", "item_b": "y", "winner": "z", "control_pass": True})
            rows.append({"item_a": "x", "item_b": "z", "winner": "x", "control_pass": True})
            rows.append({"item_a": "z", "item_b": "x", "winner": "z", "control_pass": True})
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        runner = CliRunner()
        result = runner.invoke(cli_main, ["bt-rank", "--judgments", str(path)])
        assert result.exit_code == 0, result.output
        report_path = tmp_path / "report.json"
        result = runner.invoke(
            cli_main,
            [
                "bt-rank", "--judgments", str(path), "--out", str(report_path),
                "--product", "shirt", "--algo-ranking", "x,y,z", "-p", "0.9",
            ],
        )
        assert result.exit_code == 0, result.output
        report = read_json(report_path)
        assert report["agreement"]["rows"][0]["product"] == "shirt"
        assert 0.0 <= report["agreement"]["rows"][0]["rbo"] <= 1.0

    def test_full_command_chain(self, shop_dir, tmp_path):
        runner = CliRunner()

        def invoke(*args):
            result = runner.invoke(cli_main, list(args))
            assert result.exit_code == 0, f"{args}: {result.output}"
            return result

        emb = tmp_path / "embeddings"
        invoke(
            "train-embeddings", "--kind", "prod2vec",
            "--catalog", str(shop_dir["catalog"]),
            "--sessions", str(shop_dir["sessions"]),
            "--out", str(emb), "--iterations", "5",
        )
        invoke(
            "train-embeddings", "--kind", "text",
            "--catalog", str(shop_dir["catalog"]),
            "--out", str(emb), "--iterations", "5",
        )
        for name in ("prod2vec", "name_text", "description_text", "categories_text"):
            assert (emb / f"{name}.jsonl").exists()

        pairs_dir = tmp_path / "pairs"
        invoke(
            "build-pairs",
            "--catalog", str(shop_dir["catalog"]),
            "--sessions", str(shop_dir["sessions"]),
            "--images", str(shop_dir["images"]),
            "--out", str(pairs_dir), "--coview-min", "3",
        )
        model_path = tmp_path / "model.json"
        invoke(
            "train-model",
            "--pairs", str(pairs_dir / "pairs.jsonl"),
            "--catalog", str(shop_dir["catalog"]),
            "--embeddings-dir", str(emb),
            "--out", str(model_path), "--max-epochs", "10",
        )
        eval_dir = tmp_path / "eval"
        invoke(
            "evaluate",
            "--model", str(model_path),
            "--pairs", str(pairs_dir / "pairs.jsonl"),
            "--embeddings-dir", str(emb),
            "--images", str(shop_dir["images"]),
            "--out", str(eval_dir),
        )
        metrics = read_json(eval_dir / "metrics.json")
        assert "p_at_r" in metrics and "baseline_p_at_r" in metrics

        result = invoke(
            "rank-properties",
            "--catalog", str(shop_dir["catalog"]),
            "--search-logs", str(shop_dir["search_logs"]),
            "--weights", "0.5,0.3,0.2",
        )
        assert ":" in result.output

        tables_config = tmp_path / "tables_config.json"
        write_json(
            tables_config,
            {
                "catalog_path": str(shop_dir["catalog"]),
                "sessions_path": str(shop_dir["sessions"]),
                "search_logs_path": str(shop_dir["search_logs"]),
                "images_path": str(shop_dir["images"]),
                "out_dir": str(tmp_path / "tables_out"),
                "max_epochs": 10,
                "embed_iterations": 5,
                "coview_min": 3,
            },
        )
        invoke("build-tables", "--config", str(tables_config))
        tables_files = list((tmp_path / "tables_out" / "tables").rglob("tables.jsonl"))
        assert tables_files

    def test_run_failure_exit_code(self, tmp_path):
        config_path = tmp_path / "config.json"
        write_json(
            config_path,
            {
                "catalog_path": str(tmp_path / "missing.jsonl"),
                "sessions_path": str(tmp_path / "missing2.jsonl"),
                "out_dir": str(tmp_path / "out"),
            },
        )
        runner = CliRunner()
        result = runner.invoke(cli_main, ["run", "--config", str(config_path)])
        assert result.exit_code == 1
        assert "ingest" in result.output or "ingest" in str(result.stderr_bytes)
