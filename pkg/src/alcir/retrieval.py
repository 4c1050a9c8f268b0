"""Per-category latent indices and category-constrained retrieval.

Candidate rows inside a category are stored in item_id order, so the
kernels' "lower row wins ties" rule is the item_id ascending tie-break.
"""

from __future__ import annotations

import csv
import logging
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .core_math import ParamStore
from .data import Catalog, ComplementaryCategoryMap, ItemRecord
from .errors import ConstraintError, DegenerateVectorError, EmbeddingLookupError
from .model import ModelConfig, encode_catalog, translate

logger = logging.getLogger(__name__)


@dataclass
class RecommendationList:
    seed_id: str
    target_category: int | None
    items: list[tuple[str, float]] = field(default_factory=list)
    categories: list[int] = field(default_factory=list)

    @property
    def item_ids(self) -> list[str]:
        return [i for i, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def __len__(self):
        return len(self.items)


class CategoryIndex:
    """Encodings of every catalog item, grouped by category."""

    def __init__(self, catalog: Catalog, encodings: np.ndarray):
        self.catalog = catalog
        self.encodings = encodings
        self.encodings.setflags(write=False)
        self.rows: list[np.ndarray] = []
        self.norms: list[np.ndarray] = []
        self.members: list[np.ndarray] = []
        self.ids: list[list[str]] = []
        # position of each catalog item inside its own category block
        self.position = np.empty(len(catalog), dtype=np.int64)
        for members in catalog.items_by_category:
            m = np.asarray(members, dtype=np.int64)
            rows = encodings[m] if m.size else np.zeros((0, encodings.shape[1]))
            norms = np.sqrt((rows * rows).sum(axis=1))
            if np.any(norms == 0.0):
                bad = catalog.items[int(m[np.flatnonzero(norms == 0.0)[0]])].item_id
                raise DegenerateVectorError(f"item {bad!r} encodes to the zero vector")
            for arr in (rows, norms, m):
                arr.setflags(write=False)
            self.rows.append(rows)
            self.norms.append(norms)
            self.members.append(m)
            self.ids.append([catalog.items[i].item_id for i in m])
            self.position[m] = np.arange(m.size)
        self.position.setflags(write=False)

    def size(self, c: int) -> int:
        return self.rows[c].shape[0]

    def __len__(self):
        return len(self.rows)


def build_category_index(catalog: Catalog, params: ParamStore, cfg: ModelConfig) -> CategoryIndex:
    return CategoryIndex(catalog, encode_catalog(params, cfg.encoder, catalog))


class AlcirScorer:
    """Cosine scores between translated seeds and a category's candidates."""

    def __init__(self, params: ParamStore, cfg: ModelConfig, catalog: Catalog, index: CategoryIndex | None = None):
        self.params = params
        self.cfg = cfg
        self.catalog = catalog
        self.index = index or build_category_index(catalog, params, cfg)

    def scores(self, seed_idx: np.ndarray, target_category: int) -> np.ndarray:
        seed_idx = np.asarray(seed_idx, dtype=np.int64)
        v = self.index.encodings[seed_idx]
        vt = translate(self.params, self.cfg.translator, v, target_category).value
        return kernels.cosine_scores(np.ascontiguousarray(vt), self.index.rows[target_category],
                                     self.index.norms[target_category])


def _check_target(catalog: Catalog, seed: ItemRecord, target_category: int):
    if not 0 <= target_category < catalog.n_categories:
        raise EmbeddingLookupError(f"unknown category {target_category}")
    if target_category == seed.category_id:
        raise ConstraintError(
            f"cannot recommend from the seed's own category {catalog.categories[target_category]!r}")


def ranked_list(scorer, catalog: Catalog, index: CategoryIndex, seed: ItemRecord, target_category: int,
                k: int) -> RecommendationList:
    _check_target(catalog, seed, target_category)
    s = scorer.scores(np.array([catalog.index_of[seed.item_id]]), target_category)[0]
    top = kernels.top_k(np.ascontiguousarray(s), int(k))
    ids = index.ids[target_category]
    return RecommendationList(seed.item_id, target_category, [(ids[j], float(s[j])) for j in top],
                              [target_category] * len(top))


def round_robin(rankings: Sequence[Sequence], k: int) -> list[tuple[int, object]]:
    """Interleave per-category rankings: one item from each list per pass,
    skipping exhausted lists. Returns (list position, entry) pairs."""
    out = []
    depth = 0
    longest = max((len(r) for r in rankings), default=0)
    while len(out) < k and depth < longest:
        for j, r in enumerate(rankings):
            if depth < len(r):
                out.append((j, r[depth]))
                if len(out) == k:
                    break
        depth += 1
    return out


def multi_ranked_list(scorer, catalog: Catalog, index: CategoryIndex, seed: ItemRecord,
                      cc_map: ComplementaryCategoryMap, k: int) -> RecommendationList:
    cats = [c for c in cc_map.categories(seed.category_id) if c != seed.category_id]
    if not cats:
        logger.warning("seed %s: no complementary categories known, empty recommendation list", seed.item_id)
        return RecommendationList(seed.item_id, None)
    per_cat = [ranked_list(scorer, catalog, index, seed, c, k) for c in cats]
    merged = round_robin([r.items for r in per_cat], k)
    return RecommendationList(seed.item_id, None, [e for _, e in merged], [cats[j] for j, _ in merged])


def recommend(seed: ItemRecord, target_category: int, k: int, index: CategoryIndex, params: ParamStore,
              cfg: ModelConfig) -> RecommendationList:
    """Top-k items of ``target_category`` by cosine to the translated seed."""
    return ranked_list(AlcirScorer(params, cfg, index.catalog, index), index.catalog, index, seed, target_category, k)


def recommend_multi(seed: ItemRecord, cc_map: ComplementaryCategoryMap, k: int, index: CategoryIndex,
                    params: ParamStore, cfg: ModelConfig) -> RecommendationList:
    """Round-robin over the seed category's complementary categories."""
    return multi_ranked_list(AlcirScorer(params, cfg, index.catalog, index), index.catalog, index, seed, cc_map, k)


def write_recommendations(lists: Sequence[RecommendationList], catalog: Catalog, out=None) -> None:
    out = out or sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed_id", "rank", "item_id", "category", "score"])
    for rl in lists:
        for rank, ((item_id, score), c) in enumerate(zip(rl.items, rl.categories), start=1):
            w.writerow([rl.seed_id, rank, item_id, catalog.categories[c], f"{score:.10g}"])
