"""Accuracy and coverage metrics and the two evaluation protocols.

Every test pair is one test case with a single relevant item. NDCG is taken
over the full ranked candidate pool with no cutoff, so with one relevant item
it equals ``1 / log2(1 + rank)``. Coverage uses each case's top-10 list.

A *scorer* is any object with ``scores(seed_indices, target_category)``
returning a ``(n_seeds, |I_c|)`` array over the category's items in item_id
order (see :class:`alcir.retrieval.AlcirScorer` and
:class:`alcir.baselines.PopularityScorer`).
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import Catalog, ComplementaryCategoryMap, DatasetSplit, LabeledPair
from .errors import EvaluationError
from .retrieval import round_robin

logger = logging.getLogger(__name__)

PROTOCOLS = ("category_aware", "category_unaware")
K_LIST = (1, 5, 10)
COVERAGE_K = 10


# --------------------------------------------------------------------------
# single-list metrics


def _ids(ranked):
    return ranked.item_ids if hasattr(ranked, "item_ids") else list(ranked)


def hit_rate_at_k(ranked, relevant: str, k: int) -> int:
    if k < 1:
        raise ValueError("k must be at least 1")
    return int(relevant in _ids(ranked)[:k])


def ndcg_single(ranked, relevant: str) -> float:
    ids = _ids(ranked)
    if relevant not in ids:
        return 0.0
    return 1.0 / math.log2(2 + ids.index(relevant))


def catalog_coverage(all_lists, catalog: Catalog, k: int = COVERAGE_K) -> float:
    if len(catalog) == 0:
        raise EvaluationError("coverage of an empty catalog")
    seen = set()
    for rl in all_lists:
        seen.update(_ids(rl)[:k])
    return len(seen) / len(catalog)


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    ndcg: float
    hr: dict[int, float]
    coverage: float
    n_test_cases: int

    def row(self) -> dict[str, float]:
        out = {"ndcg": self.ndcg}
        out.update({f"hr@{k}": v for k, v in sorted(self.hr.items())})
        out["coverage"] = self.coverage
        out["n_test_cases"] = self.n_test_cases
        return out


@dataclass
class CaseResults:
    """Per test case: 1-based rank of the relevant item (0 = never ranked)
    and the catalog indices of the top-10 list."""

    ranks: np.ndarray
    tops: list[np.ndarray]

    def subset(self, mask) -> "CaseResults":
        idx = np.flatnonzero(mask)
        return CaseResults(self.ranks[idx], [self.tops[i] for i in idx])


def summarize(cases: CaseResults, catalog: Catalog, k_list: Sequence[int] = K_LIST) -> MetricsReport:
    n = len(cases.ranks)
    if n == 0:
        return MetricsReport(0.0, {k: 0.0 for k in k_list}, 0.0, 0)
    r = cases.ranks
    hit = r > 0
    gains = np.zeros(n)
    gains[hit] = 1.0 / np.log2(1.0 + r[hit])
    hr = {k: float(np.mean(hit & (r <= k))) for k in k_list}
    covered = np.unique(np.concatenate(cases.tops)) if cases.tops else np.zeros(0)
    return MetricsReport(float(np.mean(gains)), hr, covered.size / len(catalog), n)


# --------------------------------------------------------------------------
# protocols


def _aware_cases(pairs, scorer, catalog, position):
    ranks = np.zeros(len(pairs), dtype=np.int64)
    tops: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * len(pairs)
    groups = defaultdict(list)
    for i, p in enumerate(pairs):
        groups[p.target_category].append(i)
    for c, case_ids in sorted(groups.items()):
        seeds = sorted({pairs[i].seed_id for i in case_ids})
        row_of = {s: j for j, s in enumerate(seeds)}
        seed_idx = np.array([catalog.index_of[s] for s in seeds], dtype=np.int64)
        scores = np.ascontiguousarray(scorer.scores(seed_idx, c))
        members = np.asarray(catalog.items_by_category[c], dtype=np.int64)
        rows = np.array([row_of[pairs[i].seed_id] for i in case_ids], dtype=np.int64)
        targets = np.array([position[catalog.index_of[pairs[i].target_id]] for i in case_ids], dtype=np.int64)
        ranks[case_ids] = kernels.target_ranks(scores[rows], targets)
        seed_tops = [members[kernels.top_k(scores[j], COVERAGE_K)] for j in range(len(seeds))]
        for i, row in zip(case_ids, rows):
            tops[i] = seed_tops[row]
    return ranks, tops


def unaware_position(rank: int, j: int, sizes: Sequence[int]) -> int:
    """Position in the round-robin list of the item at ``rank`` of list j."""
    before = sum(min(n, rank - 1) for n in sizes)
    return before + sum(1 for n in sizes[:j] if n >= rank) + 1


def _unaware_cases(pairs, scorer, catalog, position, cc_map):
    ranks = np.zeros(len(pairs), dtype=np.int64)
    tops: list[np.ndarray] = [np.zeros(0, dtype=np.int64)] * len(pairs)
    by_seed = defaultdict(list)
    for i, p in enumerate(pairs):
        by_seed[p.seed_id].append(i)
    for seed_id in sorted(by_seed):
        s_idx = catalog.index_of[seed_id]
        cats = [c for c in cc_map.categories(catalog.items[s_idx].category_id)
                if c != catalog.items[s_idx].category_id]
        if not cats:
            continue
        sizes = [len(catalog.items_by_category[c]) for c in cats]
        per_cat_scores = {c: np.ascontiguousarray(scorer.scores(np.array([s_idx]), c)[0]) for c in cats}
        per_cat_top = [np.asarray(catalog.items_by_category[c], dtype=np.int64)[kernels.top_k(per_cat_scores[c], COVERAGE_K)]
                       for c in cats]
        top = np.array([e for _, e in round_robin(per_cat_top, COVERAGE_K)], dtype=np.int64)
        for i in by_seed[seed_id]:
            p = pairs[i]
            tops[i] = top
            if p.target_category not in per_cat_scores:
                continue
            sc = per_cat_scores[p.target_category]
            r = int(kernels.target_ranks(sc[None, :], np.array([position[catalog.index_of[p.target_id]]]))[0])
            ranks[i] = unaware_position(r, cats.index(p.target_category), sizes)
    return ranks, tops


def score_cases(test_pairs: Sequence[LabeledPair], scorer, catalog: Catalog, protocol: str = "category_aware",
                cc_map: ComplementaryCategoryMap | None = None) -> CaseResults:
    if not test_pairs:
        raise EvaluationError("empty test set")
    if protocol not in PROTOCOLS:
        raise EvaluationError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    position = catalog.position_in_category
    if protocol == "category_aware":
        ranks, tops = _aware_cases(test_pairs, scorer, catalog, position)
    else:
        if cc_map is None:
            raise EvaluationError("category_unaware protocol needs a complementary-category map")
        ranks, tops = _unaware_cases(test_pairs, scorer, catalog, position, cc_map)
    return CaseResults(ranks, tops)


def evaluate(test_pairs: Sequence[LabeledPair], scorer, catalog: Catalog, protocol: str = "category_aware",
             cc_map: ComplementaryCategoryMap | None = None, k_list: Sequence[int] = K_LIST) -> MetricsReport:
    return summarize(score_cases(test_pairs, scorer, catalog, protocol, cc_map), catalog, k_list)


# --------------------------------------------------------------------------
# label-paucity bins


@dataclass
class BinRow:
    bin: int
    category_pairs: list[tuple[int, int]]
    min_count: int
    max_count: int
    report: MetricsReport


@dataclass
class BinReport:
    rows: list[BinRow] = field(default_factory=list)


def label_bins(train_pairs: Sequence[LabeledPair], test_pairs: Sequence[LabeledPair],
               bins: int = 10) -> list[list[tuple[tuple[int, int], int]]]:
    """Category pairs sorted ascending by training count (ties by pair) and
    cut into ``bins`` chunks of near-equal size."""
    counts = Counter((p.seed_category, p.target_category) for p in train_pairs)
    universe = sorted(set(counts) | {(p.seed_category, p.target_category) for p in test_pairs},
                      key=lambda cp: (counts.get(cp, 0), cp))
    n = len(universe)
    if n < bins:
        logger.warning("only %d category pairs; using %d bins instead of %d", n, n, bins)
        bins = n
    chunks: list[list] = [[] for _ in range(bins)]
    for i, cp in enumerate(universe):
        chunks[i * bins // n].append((cp, counts.get(cp, 0)))
    return chunks


def evaluate_by_label_bins(split: DatasetSplit, scorer, catalog: Catalog, bins: int = 10,
                           k_list: Sequence[int] = K_LIST, cases: CaseResults | None = None) -> BinReport:
    """Category-aware metrics per label-count bin of the test cases."""
    test = split.test
    if cases is None:
        cases = score_cases(test, scorer, catalog, "category_aware")
    report = BinReport()
    keys = [(p.seed_category, p.target_category) for p in test]
    for b, chunk in enumerate(label_bins(split.train, test, bins)):
        members = {cp for cp, _ in chunk}
        mask = np.array([k in members for k in keys], dtype=bool)
        counts = [n for _, n in chunk]
        report.rows.append(BinRow(b, [cp for cp, _ in chunk], min(counts), max(counts),
                                  summarize(cases.subset(mask), catalog, k_list)))
    return report


# --------------------------------------------------------------------------
# output


def _open(path_or_fh):
    if isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__"):
        return open(path_or_fh, "w", newline="", encoding="utf-8"), True
    return path_or_fh, False


def write_metrics_csv(path_or_fh, reports: dict[str, MetricsReport]) -> None:
    fh, own = _open(path_or_fh)
    try:
        w = csv.writer(fh, lineterminator="\n")
        first = next(iter(reports.values()))
        keys = list(first.row())
        w.writerow(["name"] + keys)
        for name, rep in reports.items():
            w.writerow([name] + [_fmt(rep.row()[k]) for k in keys])
    finally:
        if own:
            fh.close()


def write_bins_csv(path_or_fh, report: BinReport) -> None:
    fh, own = _open(path_or_fh)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "n_category_pairs", "min_count", "max_count", "ndcg", "hr@1", "hr@5", "hr@10",
                    "coverage", "n_test_cases"])
        for row in report.rows:
            r = row.report
            w.writerow([row.bin, len(row.category_pairs), row.min_count, row.max_count, _fmt(r.ndcg),
                        *(_fmt(r.hr.get(k, 0.0)) for k in K_LIST), _fmt(r.coverage), r.n_test_cases])
    finally:
        if own:
            fh.close()


def _fmt(x):
    return x if isinstance(x, int) else f"{x:.6f}"


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text: NDCG, HR@1, HR@5, HR@10, Cov%."""
    head = ["", "NDCG", "HR@1", "HR@5", "HR@10", "Cov%"]
    rows = [head]
    for name, r in reports.items():
        rows.append([name, f"{r.ndcg:.3f}", f"{r.hr.get(1, 0):.3f}", f"{r.hr.get(5, 0):.3f}",
                     f"{r.hr.get(10, 0):.3f}", f"{100 * r.coverage:.1f}"])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join(
        "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)) for r in rows
    )
