"""Popularity baseline: rank a category's items by how many training seeds
list them as their complement. Independent of the seed."""

from __future__ import annotations

from collections import Counter
from typing import Iterable

import numpy as np

from .data import Catalog, ItemRecord, LabeledPair
from .retrieval import RecommendationList, ranked_list


class PopularityTable(Counter):
    """item_id -> number of training pairs with that item as the target."""


def build_popularity(train_pairs: Iterable[LabeledPair]) -> PopularityTable:
    return PopularityTable(p.target_id for p in train_pairs)


class PopularityScorer:
    """Counts as scores over each category's item_id-ordered candidates."""

    def __init__(self, table: PopularityTable, catalog: Catalog):
        self.table = table
        self.catalog = catalog
        self.by_category = [
            np.array([float(table.get(catalog.items[i].item_id, 0)) for i in members])
            for members in catalog.items_by_category
        ]

    def scores(self, seed_idx, target_category: int) -> np.ndarray:
        row = self.by_category[target_category]
        return np.broadcast_to(row, (len(np.atleast_1d(seed_idx)), row.size)).copy()


class _IdIndex:
    """Just enough of CategoryIndex for ranked_list when no model exists."""

    def __init__(self, catalog: Catalog):
        self.ids = [[catalog.items[i].item_id for i in m] for m in catalog.items_by_category]


def popularity_index(catalog: Catalog):
    return _IdIndex(catalog)


def popularity_recommend(seed: ItemRecord, target_category: int, k: int, table: PopularityTable,
                         catalog: Catalog) -> RecommendationList:
    """Top-k by count, ties and the zero-count tail in item_id order."""
    return ranked_list(PopularityScorer(table, catalog), catalog, _IdIndex(catalog), seed, target_category, k)

