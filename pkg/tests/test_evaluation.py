import io
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alcir.data import ComplementaryCategoryMap, DatasetSplit, LabeledPair
from alcir.errors import EvaluationError
from alcir.evaluation import (
    MetricsReport,
    catalog_coverage,
    evaluate,
    evaluate_by_label_bins,
    format_table,
    hit_rate_at_k,
    label_bins,
    ndcg_single,
    score_cases,
    unaware_position,
    write_bins_csv,
    write_metrics_csv,
)
from alcir.retrieval import round_robin

from helpers import make_catalog


# --------------------------------------------------------------------------
# single-list metrics


def test_hit_rate_examples():
    assert hit_rate_at_k(["x"], "x", 1) == 1
    assert hit_rate_at_k(["a", "b", "x"], "x", 2) == 0
    assert hit_rate_at_k(["a", "b", "x"], "x", 3) == 1
    assert hit_rate_at_k(["a"], "x", 10) == 0
    with pytest.raises(ValueError):
        hit_rate_at_k(["a"], "a", 0)


def test_ndcg_examples():
    assert ndcg_single(["x", "a"], "x") == 1.0
    assert ndcg_single(["a", "x"], "x") == pytest.approx(1 / math.log2(3), abs=1e-15)
    assert ndcg_single(["a", "b", "c"], "x") == 0.0


def test_ndcg_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ids = [f"i{k}" for k in rng.permutation(20)]
        rel = ids[int(rng.integers(20))]
        dcg = sum((1.0 if d == rel else 0.0) / math.log2(1 + pos) for pos, d in enumerate(ids, start=1))
        assert ndcg_single(ids, rel) == pytest.approx(dcg / 1.0, abs=1e-12)


def test_coverage_examples():
    cat = make_catalog([4], binned=False)
    ids = [it.item_id for it in cat.items]
    assert catalog_coverage([ids[:2], ids[1:3]], cat) == 0.75
    assert catalog_coverage([], cat) == 0.0
    assert catalog_coverage([ids], cat, k=1) == 0.25


def test_coverage_oracle():
    cat = make_catalog([30, 30], binned=False)
    ids = [it.item_id for it in cat.items]
    rng = np.random.default_rng(1)
    lists = [list(rng.choice(ids, size=int(rng.integers(0, 15)), replace=False)) for _ in range(100)]
    union = set()
    for l in lists:
        union |= set(l[:10])
    assert catalog_coverage(lists, cat) == len(union) / 60
    assert catalog_coverage(lists + lists, cat) == catalog_coverage(lists, cat)


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(12))), st.integers(0, 11))
def test_hit_rate_monotone_in_k(perm, t):
    ids = [f"i{p}" for p in perm]
    hits = [hit_rate_at_k(ids, f"i{t}", k) for k in range(1, 13)]
    assert all(a <= b for a, b in zip(hits, hits[1:]))
    assert hits[-1] == 1


# --------------------------------------------------------------------------
# round robin position


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=5), st.data())
def test_unaware_position_matches_round_robin(sizes, data):
    j = data.draw(st.integers(0, len(sizes) - 1))
    rank = data.draw(st.integers(1, sizes[j]))
    lists = [[(c, r) for r in range(1, n + 1)] for c, n in enumerate(sizes)]
    merged = [e for _, e in round_robin(lists, sum(sizes))]
    assert unaware_position(rank, j, sizes) == merged.index((j, rank)) + 1


# --------------------------------------------------------------------------
# protocols


class OracleScorer:
    """Scores 1 for the relevant item of each seed and 0 elsewhere."""

    def __init__(self, catalog, pairs):
        self.catalog = catalog
        self.truth = {(p.seed_id, p.target_category): p.target_id for p in pairs}

    def scores(self, seed_idx, c):
        ids = [self.catalog.items[i].item_id for i in self.catalog.items_by_category[c]]
        out = np.zeros((len(seed_idx), len(ids)))
        for r, s in enumerate(seed_idx):
            t = self.truth.get((self.catalog.items[s].item_id, c))
            if t in ids:
                out[r, ids.index(t)] = 1.0
        return out


class FixedScorer:
    """Same random score table for every seed."""

    def __init__(self, catalog, seed=0):
        rng = np.random.default_rng(seed)
        self.rows = [rng.standard_normal(len(m)) for m in catalog.items_by_category]

    def scores(self, seed_idx, c):
        return np.tile(self.rows[c], (len(seed_idx), 1))


def _pairs(cat, n, seed=0):
    rng = np.random.default_rng(seed)
    by_cat = cat.items_by_category
    out = []
    for _ in range(n):
        s = cat.items[int(rng.integers(len(cat)))]
        t_cat = int(rng.choice([c for c in range(cat.n_categories) if c != s.category_id]))
        t = cat.items[int(rng.choice(by_cat[t_cat]))]
        out.append(LabeledPair(s.item_id, t.item_id, s.category_id, t_cat))
    return out


def test_perfect_recommender():
    cat = make_catalog([6, 8, 5])
    pairs = _pairs(cat, 30)
    # one relevant item per (seed, target category)
    pairs = list({(p.seed_id, p.target_category): p for p in pairs}.values())
    rep = evaluate(pairs, OracleScorer(cat, pairs), cat)
    assert rep.hr == {1: 1.0, 5: 1.0, 10: 1.0}
    assert rep.ndcg == 1.0
    assert rep.n_test_cases == len(pairs)


def test_aware_ranks_brute_force():
    cat = make_catalog([6, 8, 5])
    pairs = _pairs(cat, 40, seed=3)
    scorer = FixedScorer(cat, 1)
    cases = score_cases(pairs, scorer, cat)
    for p, r in zip(pairs, cases.ranks):
        ids = [cat.items[i].item_id for i in cat.items_by_category[p.target_category]]
        row = scorer.rows[p.target_category]
        order = sorted(range(len(ids)), key=lambda j: (-row[j], ids[j]))
        assert r == [ids[j] for j in order].index(p.target_id) + 1
    rep = evaluate(pairs, scorer, cat)
    assert rep.ndcg == pytest.approx(np.mean([1 / math.log2(1 + r) for r in cases.ranks]))


def test_unaware_not_better_than_aware():
    cat = make_catalog([6, 8, 5])
    pairs = _pairs(cat, 40, seed=4)
    cc = ComplementaryCategoryMap({c: [(t, 1) for t in range(3) if t != c] for c in range(3)})
    scorer = FixedScorer(cat, 2)
    aware = score_cases(pairs, scorer, cat, "category_aware")
    unaware = score_cases(pairs, scorer, cat, "category_unaware", cc)
    assert np.all(unaware.ranks >= aware.ranks)
    a, u = evaluate(pairs, scorer, cat), evaluate(pairs, scorer, cat, "category_unaware", cc)
    assert u.ndcg <= a.ndcg and all(u.hr[k] <= a.hr[k] for k in a.hr)


def test_unaware_missing_category_counts_as_miss():
    cat = make_catalog([3, 3, 3])
    p = LabeledPair("i0_000", "i2_000", 0, 2)
    cc = ComplementaryCategoryMap({0: [(1, 1)]})
    cases = score_cases([p], FixedScorer(cat), cat, "category_unaware", cc)
    assert cases.ranks.tolist() == [0]


def test_protocol_errors():
    cat = make_catalog([3, 3])
    p = [LabeledPair("i0_000", "i1_000", 0, 1)]
    with pytest.raises(EvaluationError):
        evaluate([], FixedScorer(cat), cat)
    with pytest.raises(EvaluationError):
        evaluate(p, FixedScorer(cat), cat, "sideways")
    with pytest.raises(EvaluationError):
        evaluate(p, FixedScorer(cat), cat, "category_unaware")


# --------------------------------------------------------------------------
# label bins


def _cat_pairs(counts):
    """Training pairs realising the given {(c, t): count}."""
    return [LabeledPair(f"s{c}_{k}", f"t{t}_{k}", c, t) for (c, t), n in counts.items() for k in range(n)]


def test_label_bins_even():
    counts = {(c, t): 1 + (7 * c + 3 * t) % 9 for c in range(5) for t in range(5) if c != t}
    train = _cat_pairs(counts)
    chunks = label_bins(train, [], 10)
    assert len(chunks) == 10 and all(len(ch) == 2 for ch in chunks)
    flat = [n for ch in chunks for _, n in ch]
    assert flat == sorted(flat)
    # oracle: sort then cut
    order = sorted(counts, key=lambda cp: (counts[cp], cp))
    assert [cp for ch in chunks for cp, _ in ch] == order


def test_label_bins_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        bins = int(rng.integers(1, 12))
        counts = {(i, i + 1000): int(rng.integers(1, 6)) for i in range(n)}
        chunks = label_bins(_cat_pairs(counts), [], bins)
        order = sorted(counts, key=lambda cp: (counts[cp], cp))
        b = min(bins, n)
        edge = [-(-i * n // b) for i in range(b + 1)]  # ceil(i n / b)
        expect = [order[edge[i]:edge[i + 1]] for i in range(b)]
        assert max(map(len, expect)) - min(map(len, expect)) <= 1
        assert [[cp for cp, _ in ch] for ch in chunks] == expect


def test_label_bins_include_test_only_pairs(caplog):
    train = _cat_pairs({(0, 1): 3})
    test = [LabeledPair("a", "b", 1, 0)]
    with caplog.at_level("WARNING"):
        chunks = label_bins(train, test, 10)
    assert [[cp for cp, _ in ch] for ch in chunks] == [[(1, 0)], [(0, 1)]]
    assert chunks[0][0][1] == 0
    assert "2 category pairs" in caplog.text


def test_bins_partition_test_cases():
    cat = make_catalog([6, 8, 5, 4])
    train, test = _pairs(cat, 60, seed=5), _pairs(cat, 30, seed=6)
    scorer = FixedScorer(cat, 3)
    rep = evaluate_by_label_bins(DatasetSplit(train, [], test), scorer, cat, 4)
    assert len(rep.rows) == 4
    assert sum(r.report.n_test_cases for r in rep.rows) == len(test)
    whole = evaluate(test, scorer, cat)
    pooled = sum(r.report.ndcg * r.report.n_test_cases for r in rep.rows) / len(test)
    assert pooled == pytest.approx(whole.ndcg)
    buf = io.StringIO()
    write_bins_csv(buf, rep)
    assert len(buf.getvalue().strip().splitlines()) == 5


# --------------------------------------------------------------------------
# output


def test_metrics_csv_and_table(tmp_path):
    reps = {"a": MetricsReport(0.5, {1: 0.25, 5: 0.5, 10: 0.75}, 0.1, 4),
            "b": MetricsReport(0.25, {1: 0.0, 5: 0.25, 10: 0.5}, 0.2, 4)}
    write_metrics_csv(tmp_path / "m.csv", reps)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "name,ndcg,hr@1,hr@5,hr@10,coverage,n_test_cases"
    assert lines[1] == "a,0.500000,0.250000,0.500000,0.750000,0.100000,4"
    table = format_table(reps).splitlines()
    assert table[0].split() == ["NDCG", "HR@1", "HR@5", "HR@10", "Cov%"]
    assert table[1].split() == ["a", "0.500", "0.250", "0.500", "0.750", "10.0"]
