import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comparetab.cbow import WordVectors
from comparetab.embeddings import (
    EmbeddingTable,
    cosine,
    knn_candidates,
    load_embeddings,
    load_image_embeddings,
    pool_text_field,
    save_embeddings,
)


def table_from(vectors, kind="prod2vec"):
    arrays = {k: np.asarray(v, dtype=np.float32) for k, v in vectors.items()}
    dim = len(next(iter(arrays.values())))
    return EmbeddingTable(kind=kind, dim=dim, vectors=arrays)


class TestCosine:
    def test_self_similarity(self, rng):
        v = rng.normal(size=16)
        assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_opposite(self, rng):
        v = rng.normal(size=16)
        assert cosine(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_value(self):
        # 45 degrees: 1/sqrt(2)
        assert cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(
            1.0 / math.sqrt(2.0), abs=1e-6
        )

    def test_zero_vector_errors(self):
        with pytest.raises(ValueError, match="undefined cosine"):
            cosine(np.zeros(3), np.ones(3))

    def test_dim_mismatch_errors(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine(np.ones(3), np.ones(4))


def brute_force_knn(query_id, table, k):
    """Independent oracle: full sort of every non-query id."""
    q = np.asarray(table.vectors[query_id], dtype=np.float64)
    rows = []
    for pid in table.vectors:
        if pid == query_id:
            continue
        v = np.asarray(table.vectors[pid], dtype=np.float64)
        sim = float(np.clip(q @ v / (np.linalg.norm(q) * np.linalg.norm(v)), -1, 1))
        rows.append((pid, sim))
    rows.sort(key=lambda t: (-t[1], t[0]))
    return rows[:k]


class TestKnn:
    def test_duplicate_vector_is_top(self, rng):
        v = rng.normal(size=8)
        table = table_from({"q": v, "dup": v.copy(), "other": rng.normal(size=8)})
        result = knn_candidates("q", table, k=1)
        assert result.candidates[0][0] == "dup"
        assert result.candidates[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_vectors(self):
        table = table_from({"q": [1.0, 0.0], "a": [0.0, 1.0], "b": [0.0, -1.0]})
        result = knn_candidates("q", table, k=2)
        assert all(sim == pytest.approx(0.0, abs=1e-7) for _, sim in result.candidates)

    def test_query_excluded_and_sims_nonincreasing(self, rng):
        table = table_from({f"p{i}": rng.normal(size=4) for i in range(30)})
        result = knn_candidates("p3", table, k=10)
        assert "p3" not in result.ids
        sims = [s for _, s in result.candidates]
        assert all(a >= b for a, b in zip(sims, sims[1:]))

    def test_matches_full_sort_oracle(self, rng):
        table = table_from({f"p{i:02d}": rng.normal(size=6) for i in range(50)})
        result = knn_candidates("p07", table, k=10)
        oracle = brute_force_knn("p07", table, 10)
        assert [pid for pid, _ in result.candidates] == [pid for pid, _ in oracle]

    def test_oracle_agreement_100_random_instances(self, rng):
        # acceptance-grade check: exact id-sequence match incl. tie-break
        for trial in range(100):
            n = int(rng.integers(5, 40))
            dim = int(rng.integers(2, 8))
            # low-resolution values force score ties
            vectors = {
                f"p{i:02d}": rng.integers(-2, 3, size=dim).astype(np.float32)
                for i in range(n)
            }
            vectors = {
                pid: v if np.linalg.norm(v) > 0 else v + 1.0 for pid, v in vectors.items()
            }
            table = table_from(vectors)
            query = f"p{int(rng.integers(n)):02d}"
            k = int(rng.integers(1, n + 2))
            result = knn_candidates(query, table, k=k)
            oracle = brute_force_knn(query, table, k)
            assert [pid for pid, _ in result.candidates] == [pid for pid, _ in oracle], (
                f"trial {trial} query {query} k {k}"
            )

    def test_unknown_query_errors(self, rng):
        table = table_from({"a": rng.normal(size=3)})
        with pytest.raises(ValueError, match="unknown query"):
            knn_candidates("nope", table)


class TestPoolTextField:
    def make_words(self):
        return WordVectors(
            dim=3,
            vectors={
                "red": np.array([1.0, 0.0, 0.0], dtype=np.float32),
                "shoe": np.array([0.0, 2.0, 0.0], dtype=np.float32),
            },
        )

    def test_single_token_identity(self):
        words = self.make_words()
        vec, hits = pool_text_field("Red!", words)
        assert hits == 1
        np.testing.assert_array_equal(vec, words.vectors["red"])

    def test_two_token_mean(self):
        words = self.make_words()
        vec, hits = pool_text_field("red shoe", words)
        assert hits == 2
        np.testing.assert_allclose(vec, [0.5, 1.0, 0.0])

    def test_out_of_vocab_zero_flagged(self):
        vec, hits = pool_text_field("totally unknown", self.make_words())
        assert hits == 0
        np.testing.assert_array_equal(vec, np.zeros(3))


class TestImageEmbeddings:
    def test_roundtrip_and_dim_check(self, tmp_path, rng):
        path = tmp_path / "images.jsonl"
        vecs = {f"p{i}": rng.normal(size=512).astype(np.float32) for i in range(3)}
        with open(path, "w") as fh:
            for pid, v in vecs.items():
                fh.write(json.dumps({"id": pid, "vector": [float(x) for x in v]}) + "\n")
        table = load_image_embeddings(path)
        assert table.dim == 512
        assert set(table.vectors) == set(vecs)

    def test_wrong_dimension_names_product(self, tmp_path):
        path = tmp_path / "images.jsonl"
        path.write_text(json.dumps({"id": "shorty", "vector": [0.0] * 511}) + "\n")
        with pytest.raises(ValueError, match="shorty"):
            load_image_embeddings(path)


class TestPersistence:
    def test_roundtrip_exact(self, tmp_path, rng):
        table = table_from({f"p{i}": rng.normal(size=5) for i in range(4)})
        save_embeddings(table, tmp_path / "e.jsonl")
        loaded = load_embeddings(tmp_path / "e.jsonl")
        assert loaded.kind == table.kind and loaded.dim == table.dim
        for pid in table.vectors:
            np.testing.assert_array_equal(loaded.vectors[pid], table.vectors[pid])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            table_from({"a": [np.nan, 1.0]})


@given(
    n=st.integers(min_value=3, max_value=25),
    dim=st.integers(min_value=2, max_value=6),
    k=st.integers(min_value=1, max_value=30),
    seed=st.integers(min_value=0, max_value=10_000),
)
@settings(max_examples=60, deadline=None)
def test_knn_oracle_property(n, dim, k, seed):
    rng = np.random.default_rng(seed)
    table = table_from({f"p{i:03d}": rng.normal(size=dim) for i in range(n)})
    query = f"p{int(rng.integers(n)):03d}"
    result = knn_candidates(query, table, k=k)
    oracle = brute_force_knn(query, table, k)
    assert [pid for pid, _ in result.candidates] == [pid for pid, _ in oracle]
    assert len(result.candidates) <= k
