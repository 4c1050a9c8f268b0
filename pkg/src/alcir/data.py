"""Catalog ingestion, preprocessing, cold splits and synthetic data.

File formats
------------
items CSV     ``item_id,category,price`` (UTF-8, header row)
features      ``ALCF`` magic, u32 version, u32 rows, u32 width, then rows of
              little-endian float32 in the same order as the items CSV
raw recs CSV  ``item_id,recommended_id``
pairs CSV     ``seed_id,target_id,seed_category,target_category`` (names)
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import IngestionError, SplitInfeasibleError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"ALCF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    category_id: int
    price: float
    image_features: np.ndarray
    price_bin: int | None = None


@dataclass(frozen=True)
class LabeledPair:
    """Directed (seed -> target) supervision instance.

    ``seed_category`` is carried alongside the target category so category
    level statistics can be derived from pairs alone.
    """

    seed_id: str
    target_id: str
    seed_category: int
    target_category: int


@dataclass
class Catalog:
    items: list[ItemRecord]
    categories: list[str]

    def __len__(self):
        return len(self.items)

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {it.item_id: i for i, it in enumerate(self.items)}

    @cached_property
    def items_by_category(self) -> list[list[int]]:
        """Item indices per category, each list sorted by item_id."""
        out: list[list[int]] = [[] for _ in self.categories]
        for i, it in enumerate(self.items):
            out[it.category_id].append(i)
        for lst in out:
            lst.sort(key=lambda i: self.items[i].item_id)
        return out

    @cached_property
    def position_in_category(self) -> np.ndarray:
        """Rank of each item inside its category's item_id-sorted member list."""
        pos = np.empty(len(self.items), dtype=np.int64)
        for members in self.items_by_category:
            pos[np.asarray(members, dtype=np.int64)] = np.arange(len(members))
        return pos

    @cached_property
    def features(self) -> np.ndarray:
        if not self.items:
            return np.zeros((0, 0))
        return np.stack([it.image_features for it in self.items]).astype(np.float64)

    @cached_property
    def category_ids(self) -> np.ndarray:
        return np.array([it.category_id for it in self.items], dtype=np.int64)

    @cached_property
    def price_bins(self) -> np.ndarray:
        if any(it.price_bin is None for it in self.items):
            raise ValueError("prices have not been discretized")
        return np.array([it.price_bin for it in self.items], dtype=np.int64)

    @property
    def feature_width(self) -> int:
        return self.features.shape[1] if self.items else 0

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def item(self, item_id: str) -> ItemRecord:
        return self.items[self.index_of[item_id]]

    def category_of(self, item_id: str) -> int:
        return self.items[self.index_of[item_id]].category_id

    def category_index(self, name: str) -> int:
        try:
            return self.categories.index(name)
        except ValueError:
            raise KeyError(f"unknown category {name!r}") from None


@dataclass
class ComplementaryCategoryMap:
    """category -> [(complementary category, labeled pair count), ...]

    Lists are ordered by descending count, ties by category index.
    """

    entries: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    def categories(self, c: int) -> list[int]:
        return [t for t, _ in self.entries.get(c, [])]

    def count(self, c: int, t: int) -> int:
        return dict(self.entries.get(c, [])).get(t, 0)

    def __getitem__(self, c):
        return self.entries.get(c, [])


@dataclass
class DatasetSplit:
    train: list[LabeledPair]
    validation: list[LabeledPair]
    test: list[LabeledPair]


# --------------------------------------------------------------------------
# ingestion


def write_features(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    rows, width = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, rows, width))
        fh.write(matrix.tobytes())


def read_features(path) -> np.ndarray:
    """Header fields and the flat float32 payload; shape checks are left to the caller."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise IngestionError(f"{path}: truncated feature header")
    magic, version, rows, width = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise IngestionError(f"{path}: unsupported feature file version {version}")
    payload = data[_HEADER.size:]
    if len(payload) % 4:
        raise IngestionError(f"{path}: payload is not a whole number of float32 values")
    flat = np.frombuffer(payload, dtype="<f4")
    return rows, width, flat


def read_items_csv(path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["item_id", "category", "price"]:
            raise IngestionError(f"{path}: header must be item_id,category,price")
        for lineno, row in enumerate(reader, start=2):
            try:
                price = float(row["price"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{lineno}: item {row.get('item_id')!r} has bad price {row.get('price')!r}") from None
            if price < 0 or not math.isfinite(price):
                raise IngestionError(f"{path}:{lineno}: item {row['item_id']!r} has invalid price {price}")
            rows.append((row["item_id"].strip(), row["category"].strip(), price))
    return rows


def load_catalog(items_path, features_path) -> Catalog:
    """Read item metadata and features into an unbinned Catalog."""
    rows = read_items_csv(items_path)
    seen = set()
    for item_id, _, _ in rows:
        if item_id in seen:
            raise IngestionError(f"duplicate item_id {item_id!r}")
        seen.add(item_id)

    n_rows, width, flat = read_features(features_path)
    if n_rows < len(rows):
        raise IngestionError(f"no feature row for item {rows[n_rows][0]!r} (feature file declares {n_rows} rows)")
    if n_rows > len(rows):
        raise IngestionError(f"feature file declares {n_rows} rows for {len(rows)} items")
    expected = n_rows * width
    if flat.size != expected:
        if flat.size > expected:
            raise IngestionError(f"{features_path}: {flat.size - expected} trailing values after the last row")
        bad = flat.size // width if width else 0
        got = flat.size - bad * width
        if expected - flat.size < width:
            raise IngestionError(f"feature row for item {rows[bad][0]!r} has width {got}, declared width {width}")
        raise IngestionError(f"no feature row for item {rows[bad][0]!r}")
    feats = flat.reshape(n_rows, width).astype(np.float64)
    if not np.all(np.isfinite(feats)):
        bad = int(np.flatnonzero(~np.isfinite(feats).all(axis=1))[0])
        raise IngestionError(f"feature row for item {rows[bad][0]!r} contains non-finite values")

    names = sorted({cat for _, cat, _ in rows})
    code = {n: i for i, n in enumerate(names)}
    items = [ItemRecord(item_id, code[cat], price, feats[i]) for i, (item_id, cat, price) in enumerate(rows)]
    return Catalog(items, names)


def read_raw_recs(path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["item_id", "recommended_id"]:
            raise IngestionError(f"{path}: header must be item_id,recommended_id")
        return [(r["item_id"].strip(), r["recommended_id"].strip()) for r in reader]


def write_items_csv(path, catalog: Catalog, with_bins=False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "category", "price"] + (["price_bin"] if with_bins else []))
        for it in catalog.items:
            row = [it.item_id, catalog.categories[it.category_id], repr(float(it.price))]
            w.writerow(row + ([it.price_bin] if with_bins else []))


def load_prepared_catalog(items_path, features_path) -> Catalog:
    """Inverse of ``write_items_csv(with_bins=True)`` + ``write_features``."""
    with open(items_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    n_rows, width, flat = read_features(features_path)
    if n_rows != len(rows) or flat.size != n_rows * width:
        raise IngestionError(f"{features_path} does not match {items_path}")
    feats = flat.reshape(n_rows, width).astype(np.float64)
    names = sorted({r["category"] for r in rows})
    code = {n: i for i, n in enumerate(names)}
    items = [
        ItemRecord(r["item_id"], code[r["category"]], float(r["price"]), feats[i], int(r["price_bin"]))
        for i, r in enumerate(rows)
    ]
    return Catalog(items, names)


def write_pairs_csv(path, pairs: Iterable[LabeledPair], catalog: Catalog, split_name: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["seed_id", "target_id", "seed_category", "target_category"]
        w.writerow((["split"] if split_name is not None else []) + head)
        for p in pairs:
            row = [p.seed_id, p.target_id, catalog.categories[p.seed_category], catalog.categories[p.target_category]]
            w.writerow(([split_name] if split_name is not None else []) + row)


def write_split_csv(path, split: DatasetSplit, catalog: Catalog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "seed_id", "target_id", "seed_category", "target_category"])
        for name in ("train", "validation", "test"):
            for p in getattr(split, name):
                w.writerow([name, p.seed_id, p.target_id, catalog.categories[p.seed_category],
                            catalog.categories[p.target_category]])


def read_split_csv(path, catalog: Catalog) -> DatasetSplit:
    parts: dict[str, list[LabeledPair]] = {"train": [], "validation": [], "test": []}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            if r["split"] not in parts:
                raise IngestionError(f"{path}: unknown split name {r['split']!r}")
            parts[r["split"]].append(LabeledPair(
                r["seed_id"], r["target_id"],
                catalog.category_index(r["seed_category"]), catalog.category_index(r["target_category"]),
            ))
    return DatasetSplit(parts["train"], parts["validation"], parts["test"])


def write_cc_map_csv(path, cc_map: ComplementaryCategoryMap, catalog: Catalog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "complementary_category", "rank", "count"])
        for c in sorted(cc_map.entries):
            for rank, (t, n) in enumerate(cc_map.entries[c], start=1):
                w.writerow([catalog.categories[c], catalog.categories[t], rank, n])


def read_cc_map_csv(path, catalog: Catalog) -> ComplementaryCategoryMap:
    entries: dict[int, list[tuple[int, int]]] = {c: [] for c in range(catalog.n_categories)}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda r: (r["category"], int(r["rank"])))
    for r in rows:
        c = catalog.category_index(r["category"])
        entries[c].append((catalog.category_index(r["complementary_category"]), int(r["count"])))
    return ComplementaryCategoryMap(entries)


def write_raw_recs(path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "recommended_id"])
        w.writerows(pairs)


# --------------------------------------------------------------------------
# preprocessing


def _rebuild(catalog: Catalog, items: list[ItemRecord], categories: list[str]) -> Catalog:
    return Catalog(items, categories)


def filter_rare_categories(catalog: Catalog, min_items: int = 5) -> Catalog:
    """Drop categories with fewer than ``min_items`` items; category ids are
    compacted, keeping the original relative order."""
    sizes = Counter(it.category_id for it in catalog.items)
    keep = [c for c in range(catalog.n_categories) if sizes.get(c, 0) >= min_items]
    if len(keep) == catalog.n_categories:
        return catalog
    remap = {c: i for i, c in enumerate(keep)}
    items = [replace(it, category_id=remap[it.category_id]) for it in catalog.items if it.category_id in remap]
    dropped = catalog.n_categories - len(keep)
    logger.info("dropped %d categories with fewer than %d items (%d items removed)",
                dropped, min_items, len(catalog.items) - len(items))
    return _rebuild(catalog, items, [catalog.categories[c] for c in keep])


def discretize_prices(catalog: Catalog, bins: int = 20) -> Catalog:
    """Equal-depth price binning. Items are ordered by (price, item_id) and cut
    into ``bins`` chunks of near-equal size; equal prices share a bin."""
    if bins < 1:
        raise ValueError("bins must be positive")
    n = len(catalog.items)
    if n == 0:
        return catalog
    prices = np.array([it.price for it in catalog.items], dtype=np.float64)
    if np.any(prices < 0):
        raise ValueError("prices must be nonnegative")
    order = sorted(range(n), key=lambda i: (prices[i], catalog.items[i].item_id))
    chunk = kernels.equal_depth_chunks(prices[order], bins)
    bin_of = np.empty(n, dtype=np.int64)
    bin_of[order] = chunk
    items = [replace(it, price_bin=int(b)) for it, b in zip(catalog.items, bin_of)]
    return _rebuild(catalog, items, list(catalog.categories))


def build_labeled_pairs(catalog: Catalog, raw_recs: Sequence[tuple[str, str]]) -> list[LabeledPair]:
    """Resolve raw (item, recommended) rows into cross-category pairs.

    Unresolvable ids, same-category rows and exact duplicates are dropped.
    Direction is preserved.
    """
    idx = catalog.index_of
    out, seen = [], set()
    unresolved = same_cat = dup = 0
    for s, t in raw_recs:
        if s not in idx or t not in idx:
            unresolved += 1
            continue
        cs, ct = catalog.items[idx[s]].category_id, catalog.items[idx[t]].category_id
        if cs == ct:
            same_cat += 1
            continue
        if (s, t) in seen:
            dup += 1
            continue
        seen.add((s, t))
        out.append(LabeledPair(s, t, cs, ct))
    if unresolved or same_cat or dup:
        logger.info("pairs dropped: %d unresolvable, %d same-category, %d duplicate", unresolved, same_cat, dup)
    return out


def derive_complementary_categories(pairs: Iterable[LabeledPair], n_categories: int | None = None) -> ComplementaryCategoryMap:
    counts: dict[int, Counter] = defaultdict(Counter)
    for p in pairs:
        if p.seed_category != p.target_category:
            counts[p.seed_category][p.target_category] += 1
    cats = set(counts) | (set(range(n_categories)) if n_categories else set())
    entries = {
        c: sorted(counts[c].items(), key=lambda kv: (-kv[1], kv[0]))
        for c in sorted(cats)
    }
    return ComplementaryCategoryMap(entries)


def split_cold(pairs: Sequence[LabeledPair], train_fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Split by seed item so held-out seeds never occur in train.

    A ``train_fraction`` share of distinct seeds goes to train, the rest is
    halved between validation and test (test takes the odd one). Train pairs
    whose target is a held-out seed are dropped.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    seeds = sorted({p.seed_id for p in pairs})
    if len(seeds) < 3:
        raise SplitInfeasibleError(f"need at least 3 distinct seed items, got {len(seeds)}")
    rng = np.random.default_rng(seed)
    perm = [seeds[i] for i in rng.permutation(len(seeds))]
    n_train = min(max(int(round(train_fraction * len(seeds))), 1), len(seeds) - 2)
    held = len(seeds) - n_train
    n_val = held // 2
    train_seeds = set(perm[:n_train])
    val_seeds = set(perm[n_train:n_train + n_val])
    test_seeds = set(perm[n_train + n_val:])
    held_out = val_seeds | test_seeds

    train, val, test = [], [], []
    dropped = 0
    for p in pairs:
        if p.seed_id in train_seeds:
            if p.target_id in held_out:
                dropped += 1
            else:
                train.append(p)
        elif p.seed_id in val_seeds:
            val.append(p)
        else:
            test.append(p)
    if dropped:
        logger.info("dropped %d train pairs whose target is a held-out seed", dropped)
    return DatasetSplit(train, val, test)


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    n_categories: int = 6
    items_per_category: int = 60
    style_dim: int = 8
    noise_scale: float = 0.1
    pairs_per_item: int = 2
    label_fraction: float = 0.5
    seed: int = 0
    feature_dim: int = 32
    # labeled subsample weight of the r-th category pair is r ** -pair_skew
    pair_skew: float = 1.0


@dataclass
class SyntheticData:
    catalog: Catalog
    pairs: list[LabeledPair]
    ground_truth: dict[tuple[str, int], str]
    styles: np.ndarray
    complementary: dict[int, list[int]]


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    """Catalog with planted complementary structure.

    Each item has a latent style; its image features are a fixed random
    linear embedding of (style, category one-hot) plus Gaussian noise. Every
    category is assigned ``pairs_per_item`` complementary categories, and the
    true complement of an item in such a category is the item there with the
    nearest style. Labeled pairs are a ``label_fraction`` subsample of the
    ground truth, skewed across category pairs by ``pair_skew``.
    """
    C, m = cfg.n_categories, cfg.items_per_category
    if C < 2:
        raise ValueError("need at least two categories")
    if not 1 <= cfg.pairs_per_item <= C - 1:
        raise ValueError("pairs_per_item must lie in [1, n_categories - 1]")
    if not 0.0 <= cfg.label_fraction <= 1.0:
        raise ValueError("label_fraction must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    n = C * m
    cats = np.repeat(np.arange(C), m)
    styles = rng.standard_normal((n, cfg.style_dim))
    mix = rng.standard_normal((cfg.style_dim + C, cfg.feature_dim)) / np.sqrt(cfg.style_dim + C)
    onehot = np.eye(C)[cats]
    feats = np.hstack([styles, onehot]) @ mix + cfg.noise_scale * rng.standard_normal((n, cfg.feature_dim))
    prices = np.round(np.exp(rng.normal(3.0, 0.8, size=n)), 2)

    width = len(str(m - 1))
    names = [f"cat{c:02d}" for c in range(C)]
    ids = [f"c{c:02d}_{k:0{width}d}" for c in range(C) for k in range(m)]
    items = [ItemRecord(ids[i], int(cats[i]), float(prices[i]), feats[i]) for i in range(n)]
    catalog = Catalog(items, names)

    complementary = {}
    for c in range(C):
        others = [t for t in range(C) if t != c]
        complementary[c] = sorted(int(t) for t in rng.choice(others, size=cfg.pairs_per_item, replace=False))

    gt_pairs: list[LabeledPair] = []
    ground_truth: dict[tuple[str, int], str] = {}
    for c in range(C):
        for t in complementary[c]:
            tgt = np.arange(t * m, (t + 1) * m)
            d = ((styles[c * m:(c + 1) * m, None, :] - styles[None, tgt, :]) ** 2).sum(axis=2)
            nearest = tgt[d.argmin(axis=1)]
            for k in range(m):
                s = c * m + k
                gt_pairs.append(LabeledPair(ids[s], ids[nearest[k]], c, t))
                ground_truth[(ids[s], t)] = ids[nearest[k]]

    n_lab = math.ceil(cfg.label_fraction * len(gt_pairs) - 1e-9)
    cat_pairs = sorted({(p.seed_category, p.target_category) for p in gt_pairs})
    rank = rng.permutation(len(cat_pairs)) + 1
    weight_of = {cp: float(r) ** -cfg.pair_skew for cp, r in zip(cat_pairs, rank)}
    w = np.array([weight_of[(p.seed_category, p.target_category)] for p in gt_pairs])
    chosen = np.sort(rng.choice(len(gt_pairs), size=n_lab, replace=False, p=w / w.sum()))
    pairs = [gt_pairs[i] for i in chosen]
    return SyntheticData(catalog, pairs, ground_truth, styles, complementary)


def dataset_statistics(catalog: Catalog, pairs: Sequence[LabeledPair]) -> list[tuple[str, float]]:
    """The six catalog statistics, in the conventional reporting order."""
    sizes = [len(lst) for lst in catalog.items_by_category]
    cat_pairs = {(p.seed_category, p.target_category) for p in pairs}
    return [
        ("#items", len(catalog.items)),
        ("#item pairs", len(pairs)),
        ("#categories", catalog.n_categories),
        ("#category pairs", len(cat_pairs)),
        ("Avg. items per category", (sum(sizes) / len(sizes)) if sizes else 0.0),
        ("Max items per category", max(sizes) if sizes else 0),
        ("Min items per category", min(sizes) if sizes else 0),
    ]
