from collections import Counter

import numpy as np
import pytest

from alcir.baselines import PopularityScorer, build_popularity, popularity_recommend
from alcir.data import LabeledPair
from alcir.evaluation import evaluate
from alcir.errors import ConstraintError

from helpers import make_catalog


def test_tally_example():
    pairs = [LabeledPair("s1", "x", 0, 1), LabeledPair("s2", "x", 0, 1), LabeledPair("s3", "y", 0, 1)]
    assert build_popularity(pairs) == {"x": 2, "y": 1}
    assert build_popularity([]) == {}


def test_tally_recount():
    rng = np.random.default_rng(0)
    pairs = [LabeledPair(f"s{i}", f"t{rng.integers(40)}", 0, 1) for i in range(1000)]
    table = build_popularity(pairs)
    for t in {p.target_id for p in pairs}:
        assert table[t] == sum(1 for p in pairs if p.target_id == t)
    assert sum(table.values()) == 1000


def test_ranking_example():
    cat = make_catalog([2, 3])
    x, y, z = "i1_002", "i1_000", "i1_001"
    table = build_popularity([LabeledPair("s", x, 0, 1)] * 5 + [LabeledPair("s", y, 0, 1)] * 2)
    assert table.get(z, 0) == 0
    rl = popularity_recommend(cat.items[0], 1, 2, table, cat)
    assert rl.item_ids == [x, y]
    assert rl.scores == [5.0, 2.0]


def test_all_zero_falls_back_to_item_id():
    cat = make_catalog([2, 4])
    rl = popularity_recommend(cat.items[0], 1, 4, build_popularity([]), cat)
    assert rl.item_ids == ["i1_000", "i1_001", "i1_002", "i1_003"]


def test_seed_invariant_and_constrained():
    cat = make_catalog([3, 3, 5])
    rng = np.random.default_rng(1)
    table = build_popularity([LabeledPair("s", f"i2_{rng.integers(5):03d}", 0, 2) for _ in range(20)])
    lists = {tuple(popularity_recommend(s, 2, 5, table, cat).item_ids) for s in cat.items if s.category_id != 2}
    assert len(lists) == 1
    with pytest.raises(ConstraintError):
        popularity_recommend(cat.items[-1], 2, 3, table, cat)


def test_matches_brute_force_on_test_pairs():
    cat = make_catalog([5, 7, 6])
    rng = np.random.default_rng(2)

    def rand_pair():
        s = cat.items[int(rng.integers(len(cat)))]
        c = int(rng.choice([c for c in range(3) if c != s.category_id]))
        t = cat.items[int(rng.choice(cat.items_by_category[c]))]
        return LabeledPair(s.item_id, t.item_id, s.category_id, c)

    train = [rand_pair() for _ in range(200)]
    test = [rand_pair() for _ in range(50)]
    table = build_popularity(train)
    counts = Counter(p.target_id for p in train)  # train only
    ranks = []
    for p in test:
        ids = sorted(cat.items[i].item_id for i in cat.items_by_category[p.target_category])
        order = sorted(ids, key=lambda i: (-counts[i], i))
        ranks.append(order.index(p.target_id) + 1)
        assert popularity_recommend(cat.items[cat.index_of[p.seed_id]],
                                    p.target_category, 3, table, cat).item_ids == order[:3]
    rep = evaluate(test, PopularityScorer(table, cat), cat)
    assert rep.hr[10] == pytest.approx(np.mean([r <= 10 for r in ranks]))
    assert rep.hr[1] == pytest.approx(np.mean([r == 1 for r in ranks]))
    # test pairs never leak into the table
    assert build_popularity(train) == table
