import itertools
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comparetab.catalog import Product, SearchLogEntry
from comparetab.tables import (
    ALLOWED_BINS,
    PriceBinning,
    bin_by_price,
    build_table,
    entropy_weights,
    pdp_frequency,
    property_entropy,
    property_vocabulary,
    query_frequency,
    rank_properties,
    select_display,
    weighted_hamming,
)


def product(pid, price=10.0, properties=None, description=""):
    return Product(
        id=pid, name=pid, description=description, price=price, properties=properties or {}
    )


def logs(*queries):
    return [SearchLogEntry(query=q, ts=float(i)) for i, q in enumerate(queries)]


class TestQueryFrequency:
    VOCAB = {"resolution": ["4k", "8k"], "size": ["55in"]}

    def test_single_property_mentioned(self):
        freq = query_frequency(logs("best resolution tv", "resolution matters"), self.VOCAB)
        assert freq == {"resolution": 1.0, "size": 0.0}

    def test_max_normalization(self):
        entries = logs(
            "resolution", "resolution", "resolution", "resolution",
            "resolution", "resolution", "resolution", "resolution",
            "resolution", "resolution",
            "size", "size", "size", "size", "size",
        )
        freq = query_frequency(entries, self.VOCAB)
        assert freq["resolution"] == 1.0
        assert freq["size"] == 0.5

    def test_value_mention_counts(self):
        freq = query_frequency(logs("cheap 4k deals"), self.VOCAB)
        assert freq["resolution"] == 1.0

    def test_case_insensitive_token_level(self):
        freq = query_frequency(logs("RESOLUTION!"), self.VOCAB)
        assert freq["resolution"] == 1.0
        # substring inside another token is not a mention
        freq = query_frequency(logs("resolutions"), self.VOCAB)
        assert freq["resolution"] == 0.0

    def test_all_zero_counts_stay_zero(self):
        freq = query_frequency(logs("nothing relevant"), self.VOCAB)
        assert set(freq.values()) == {0.0}

    def test_empty_vocabulary_errors(self):
        with pytest.raises(ValueError, match="empty property vocabulary"):
            query_frequency(logs("x"), {})


class TestPdpFrequency:
    def test_attribute_in_every_description(self):
        catalog = [
            product("a", description="great color options"),
            product("b", description="the color is bold"),
        ]
        freq = pdp_frequency(catalog, {"color": ["red"], "size": []})
        assert freq["color"] == 1.0
        assert freq["size"] == 0.0


class TestPropertyEntropy:
    def test_single_value_zero(self):
        products = [product(f"p{i}", properties={"c": "x"}) for i in range(5)]
        assert property_entropy(products, "c") == 0.0

    def test_uniform_four_values(self):
        products = [product(f"p{i}", properties={"c": str(i)}) for i in range(4)]
        assert property_entropy(products, "c") == pytest.approx(math.log(4), abs=1e-9)

    def test_two_one_split(self):
        products = [
            product("p0", properties={"c": "a"}),
            product("p1", properties={"c": "a"}),
            product("p2", properties={"c": "b"}),
        ]
        expected = -(2 / 3) * math.log(2 / 3) - (1 / 3) * math.log(1 / 3)
        assert property_entropy(products, "c") == pytest.approx(expected, abs=1e-6)
        assert property_entropy(products, "c") == pytest.approx(0.6365, abs=1e-4)

    def test_missing_value_is_own_category(self):
        products = [product("p0", properties={"c": "a"}), product("p1", properties={})]
        assert property_entropy(products, "c") == pytest.approx(math.log(2), abs=1e-9)

    def test_permutation_invariant(self, rng):
        products = [product(f"p{i}", properties={"c": str(i % 3)}) for i in range(9)]
        base = property_entropy(products, "c")
        for _ in range(5):
            perm = [products[i] for i in rng.permutation(len(products))]
            assert property_entropy(perm, "c") == pytest.approx(base, abs=1e-12)


class TestRankProperties:
    def test_one_hot_weights_project_each_component(self, rng):
        names = [f"prop{i}" for i in range(8)]
        qf = {n: float(rng.random()) for n in names}
        pf = {n: float(rng.random()) for n in names}
        ent = {n: float(rng.random() * 2) for n in names}
        for weights, component in [
            ((1, 0, 0), qf),
            ((0, 1, 0), pf),
            ((0, 0, 1), ent),
        ]:
            ranked = [s.property for s in rank_properties(qf, pf, ent, weights)]
            expected = sorted(names, key=lambda n: (-component[n], n))
            assert ranked == expected

    def test_equal_scores_alphabetical(self):
        names = ["zeta", "alpha", "mid"]
        flat = {n: 0.5 for n in names}
        ranked = [s.property for s in rank_properties(flat, flat, flat)]
        assert ranked == sorted(names)

    def test_matches_weighted_sum_sort_oracle(self, rng):
        names = [f"p{i}" for i in range(10)]
        qf = {n: float(rng.random()) for n in names}
        pf = {n: float(rng.random()) for n in names}
        ent = {n: float(rng.random() * 3) for n in names}
        weights = (0.5, 0.3, 0.2)
        ranked = rank_properties(qf, pf, ent, weights)
        max_ent = max(ent.values())
        oracle = sorted(
            names,
            key=lambda n: (
                -(0.5 * qf[n] + 0.3 * pf[n] + 0.2 * ent[n] / max_ent),
                n,
            ),
        )
        assert [s.property for s in ranked] == oracle
        for s in ranked:
            assert s.total == pytest.approx(
                0.5 * s.query_freq + 0.3 * s.pdp_freq + 0.2 * s.entropy / max_ent, abs=1e-12
            )

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            rank_properties({"a": 1.0}, {"a": 1.0}, {"a": 1.0}, (0, 0, 0))

    def test_empty_property_set(self):
        with pytest.raises(ValueError, match="empty property set"):
            rank_properties({}, {}, {})


class TestBinByPrice:
    def test_equal_prices_all_center(self):
        query = product("q", price=10.0)
        candidates = [product(f"p{i}", price=10.0) for i in range(5)]
        binning = bin_by_price(query, candidates)
        assert binning.width == 0.0
        assert set(binning.assignment.values()) == {3}

    def test_mean_log_price_lands_in_center_bin(self):
        # geometric prices around 10: mean log price is exactly log(10)
        query = product("q", price=10.0)
        candidates = [product("lo", price=5.0), product("hi", price=20.0)]
        binning = bin_by_price(query, candidates)
        assert binning.assignment["q"] == 3

    def test_geometric_ladder_matches_hand_computation(self):
        # 14 products with prices 10 * 1.5^i: the log prices are an
        # arithmetic ladder whose mean/SD are computed independently here
        prices = [10.0 * 1.5**i for i in range(14)]
        query = product("q00", price=prices[0])
        candidates = [product(f"q{i:02d}", price=p) for i, p in enumerate(prices[1:], start=1)]
        binning = bin_by_price(query, candidates)
        log_prices = [math.log(p) for p in prices]
        center = statistics.fmean(log_prices)
        width = statistics.pstdev(log_prices)
        assert binning.center == pytest.approx(center, abs=1e-12)
        assert binning.width == pytest.approx(width, abs=1e-12)
        for i, price in enumerate(prices):
            expected = min(max(math.floor((math.log(price) - center) / width + 3.5), 0), 6)
            assert binning.assignment[f"q{i:02d}"] == expected

    def test_extreme_prices_clamp_to_outer_bins(self):
        # symmetric outliers among 20 near-identical prices exceed 2.5 SDs
        query = product("q", price=100.0)
        candidates = [product("tiny", price=1e-4), product("huge", price=1e8)] + [
            product(f"m{i}", price=100.0 + i) for i in range(20)
        ]
        binning = bin_by_price(query, candidates)
        assert binning.assignment["tiny"] == 0
        assert binning.assignment["huge"] == 6


class TestWeightedHamming:
    def test_identical_zero(self):
        a = product("a", properties={"x": "1", "y": "2"})
        b = product("b", properties={"x": "1", "y": "2"})
        assert weighted_hamming(a, b, {"x": 1.0, "y": 0.5}) == 0.0

    def test_single_difference_zero_entropy_weight(self):
        a = product("a", properties={"x": "1"})
        b = product("b", properties={"x": "2"})
        assert weighted_hamming(a, b, {"x": math.exp(-0.0)}) == 1.0

    def test_entropy_ln2_weight(self):
        a = product("a", properties={"x": "1"})
        b = product("b", properties={"x": "2"})
        assert weighted_hamming(a, b, {"x": math.exp(-math.log(2))}) == pytest.approx(
            0.5, abs=1e-9
        )

    def test_absent_is_comparable(self):
        a = product("a", properties={"x": "1"})
        b = product("b", properties={})
        c = product("c", properties={})
        weights = {"x": 0.7}
        assert weighted_hamming(a, b, weights) == pytest.approx(0.7)
        assert weighted_hamming(b, c, weights) == 0.0

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=80, deadline=None)
    def test_pseudometric_properties(self, seed):
        rng = np.random.default_rng(seed)
        names = [f"p{i}" for i in range(4)]
        weights = {n: float(rng.random() + 0.01) for n in names}

        def rand_product(pid):
            return product(
                pid,
                properties={
                    n: str(rng.integers(3)) for n in names if rng.random() < 0.8
                },
            )

        a, b, c = rand_product("a"), rand_product("b"), rand_product("c")
        assert weighted_hamming(a, b, weights) == weighted_hamming(b, a, weights)
        assert weighted_hamming(a, a, weights) == 0.0
        assert weighted_hamming(a, c, weights) <= (
            weighted_hamming(a, b, weights) + weighted_hamming(b, c, weights) + 1e-12
        )


def selection_instance(rng, bin_hi=6):
    """Random display-selection instance with schema-like properties."""
    props = ["material", "color", "size", "brand", "warranty"]
    n_values = {p: int(rng.integers(2, 5)) for p in props}
    conc = {p: float(rng.uniform(0.5, 0.9)) for p in props}
    dominant = {p: int(rng.integers(n_values[p])) for p in props}

    def draw_props():
        return {
            p: f"{p}{dominant[p]}" if rng.random() < conc[p] else f"{p}{int(rng.integers(n_values[p]))}"
            for p in props
        }

    products, scores = [], {}
    for b in range(1, 6):
        for i in range(int(rng.integers(1, bin_hi + 1))):
            pid = f"b{b}p{i}"
            products.append(
                (product(pid, price=float(b), properties=draw_props()), b)
            )
            scores[pid] = float(rng.random())
    query = product("query", price=3.0, properties=draw_props())
    query_bin = int(rng.integers(1, 6))
    assignment = {pr.id: b for pr, b in products}
    assignment["query"] = query_bin
    binning = PriceBinning(center=0.0, width=1.0, assignment=assignment)
    weights = entropy_weights([pr for pr, _ in products], props)
    substitutes = [(pr, scores[pr.id]) for pr, b in products]
    return query, substitutes, binning, weights, query_bin


def total_diversity(selection, weights):
    return sum(
        weighted_hamming(a, b, weights)
        for i, a in enumerate(selection)
        for b in selection[i + 1 :]
    )


class TestSelectDisplay:
    def test_forced_selection_one_per_bin(self):
        query = product("query", price=10.0, properties={"x": "0"})
        subs = [
            (product("lo", price=10.0, properties={"x": "1"}), 0.9),
            (product("mid", price=10.0, properties={"x": "1"}), 0.8),
            (product("hi", price=10.0, properties={"x": "1"}), 0.7),
        ]
        binning = PriceBinning(
            center=0.0, width=1.0, assignment={"query": 3, "lo": 2, "mid": 3, "hi": 4}
        )
        table = select_display(query, subs, binning, w=3)
        assert sorted(table.substitutes) == ["hi", "lo", "mid"]
        assert not table.fallback

    def test_distinct_profile_preferred_on_two_way_choice(self):
        query = product("query", price=10.0, properties={"x": "0", "y": "0"})
        anchor = product("anchor", price=10.0, properties={"x": "0", "y": "0"})
        dup = product("dup", price=10.0, properties={"x": "0", "y": "0"})
        distinct = product("distinct", price=10.0, properties={"x": "1", "y": "1"})
        lower = product("lower", price=10.0, properties={"x": "0", "y": "1"})
        subs = [(anchor, 0.99), (dup, 0.95), (distinct, 0.2), (lower, 0.5)]
        binning = PriceBinning(
            center=0.0,
            width=1.0,
            assignment={"query": 3, "anchor": 3, "dup": 3, "distinct": 3, "lower": 2},
        )
        # targets: bin 3 (anchor by score), bin 2 (lower), bin 4 -> empty,
        # falls back into bin 3: the distinct profile must win over dup
        table = select_display(query, subs, binning, w=3)
        assert table.substitutes[0] == "anchor"
        assert "distinct" in table.substitutes
        assert "dup" not in table.substitutes

    def test_never_query_never_repeat_never_discarded_bins(self, rng):
        for _ in range(50):
            query, subs, binning, weights, _ = selection_instance(rng)
            table = select_display(query, subs, binning, w=3, diversity_weights=weights)
            assert query.id not in table.substitutes
            assert len(set(table.substitutes)) == len(table.substitutes)
            for pid in table.substitutes:
                assert binning.assignment[pid] in ALLOWED_BINS

    def test_fewer_than_w_candidates_flagged(self):
        query = product("query", price=10.0)
        subs = [(product("only", price=10.0), 0.9)]
        binning = PriceBinning(center=0.0, width=1.0, assignment={"query": 3, "only": 3})
        table = select_display(query, subs, binning, w=3)
        assert table.substitutes == ("only",)
        assert table.fallback

    def test_empty_candidate_set_errors(self):
        query = product("query", price=10.0)
        with pytest.raises(ValueError, match="empty candidate set"):
            select_display(query, [], PriceBinning(0.0, 1.0, {"query": 3}), w=3)

    def test_outer_bin_candidates_ignored_when_allowed_exist(self):
        query = product("query", price=10.0, properties={"x": "0"})
        subs = [
            (product("outlier", price=1e9, properties={"x": "9"}), 0.99),
            (product("ok1", price=10.0, properties={"x": "1"}), 0.5),
            (product("ok2", price=10.0, properties={"x": "2"}), 0.5),
            (product("ok3", price=10.0, properties={"x": "3"}), 0.5),
        ]
        binning = PriceBinning(
            center=0.0,
            width=1.0,
            assignment={"query": 3, "outlier": 6, "ok1": 2, "ok2": 3, "ok3": 4},
        )
        table = select_display(query, subs, binning, w=3)
        assert "outlier" not in table.substitutes
        assert len(table.substitutes) == 3

    def test_greedy_beats_enumeration_median_and_mostly_max(self, rng):
        hits = median_ok = usable = 0
        trials = 500
        for _ in range(trials):
            query, subs, binning, weights, _ = selection_instance(rng)
            table = select_display(query, subs, binning, w=3, diversity_weights=weights)
            if len(table.substitutes) < 3:
                continue
            by_id = {p.id: p for p, _ in subs}
            chosen = [by_id[i] for i in table.substitutes]
            greedy_div = total_diversity(chosen, weights)
            anchor = chosen[0]
            used_bins = [binning.assignment[p.id] for p in chosen[1:]]
            pools = {
                b: [p for p, _ in subs if binning.assignment[p.id] == b]
                for b in set(used_bins)
            }
            divs = []
            for combo in itertools.product(*[pools[b] for b in used_bins]):
                selection = [anchor] + list(combo)
                if len({p.id for p in selection}) < 3:
                    continue
                divs.append(total_diversity(selection, weights))
            if not divs:
                continue
            usable += 1
            divs.sort()
            hits += greedy_div >= divs[-1] - 1e-12
            median_ok += greedy_div >= divs[len(divs) // 2] - 1e-12
        assert usable > 400
        assert median_ok == usable, f"below enumeration median on {usable - median_ok} instances"
        assert hits / usable >= 0.90, f"matched enumeration max on only {hits}/{usable}"


class TestBuildTable:
    def test_full_table_structure(self, rng):
        vocab_props = ["material", "color"]
        catalog = [
            product(
                f"p{i:02d}",
                price=float(5 + i),
                properties={p: f"{p}{i % 3}" for p in vocab_props},
                description=f"nice material item {i}",
            )
            for i in range(12)
        ]
        vocabulary = property_vocabulary(catalog)
        qf = query_frequency(logs("material quality", "color match"), vocabulary)
        pf = pdp_frequency(catalog, vocabulary)
        query = catalog[0]
        substitutes = [(p, 0.9 - 0.01 * i) for i, p in enumerate(catalog[1:])]
        table = build_table(query, substitutes, qf, pf)
        assert table.query_id == "p00"
        assert len(table.substitutes) == 3
        assert table.displayed_properties
        assert set(table.property_scores) == set(vocabulary)
