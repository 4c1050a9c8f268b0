"""Synthetic multi-seed experiments: label-paucity bins and loss ablations.

Each seed builds its own synthetic catalog, cold split and complementary
category map, then trains one model per preset with identical training
settings and evaluates everything on the same test cases.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import losses
from .baselines import PopularityScorer, build_popularity
from .data import SyntheticConfig, derive_complementary_categories, discretize_prices, generate_synthetic, split_cold
from .evaluation import BinReport, MetricsReport, evaluate, evaluate_by_label_bins, score_cases, summarize
from .model import ModelConfig
from .retrieval import AlcirScorer
from .training import TrainConfig, fit

logger = logging.getLogger(__name__)

ALL_PRESETS = ("full", "sup", "triplet_cycle", "triplet_classifier", "classifier_cycle")

# shared by every preset; only the loss weights (and unlabeled sampling for
# ``sup``) differ between runs
EXPERIMENT_TRAIN = TrainConfig(
    epochs=60,
    batch_size=32,
    learning_rate=0.05,
    optimizer="momentum",
    momentum=0.9,
    early_stop_patience=10,
    unlabeled_ratio=1.0,
    clip_norm=1.0,
)
EXPERIMENT_SYNTH = SyntheticConfig(
    n_categories=6, items_per_category=60, style_dim=8, noise_scale=0.1, label_fraction=0.5,
    pairs_per_item=3, pair_skew=1.0,
)


def preset_config(base: TrainConfig, preset: str, seed: int) -> TrainConfig:
    cfg = replace(base, loss_weights=losses.PRESETS[preset], rng_seed=seed)
    if preset == "sup":
        cfg = replace(cfg, unlabeled_ratio=0.0)
    return cfg


@dataclass
class SeedResult:
    seed: int
    reports: dict[str, MetricsReport] = field(default_factory=dict)
    unaware: dict[str, MetricsReport] = field(default_factory=dict)
    bins: dict[str, BinReport] = field(default_factory=dict)
    seconds: float = 0.0


def run_seed(seed: int, presets: Sequence[str] = ALL_PRESETS, synth: SyntheticConfig = EXPERIMENT_SYNTH,
             train: TrainConfig = EXPERIMENT_TRAIN, bins: int = 10) -> SeedResult:
    t0 = time.perf_counter()
    data = generate_synthetic(replace(synth, seed=seed))
    catalog = discretize_prices(data.catalog)
    split = split_cold(data.pairs, 0.8, seed)
    cc_map = derive_complementary_categories(split.train, catalog.n_categories)
    model_cfg = ModelConfig.build(catalog.feature_width, catalog.n_categories)
    out = SeedResult(seed)

    scorers = {"popularity": PopularityScorer(build_popularity(split.train), catalog)}
    for preset in presets:
        params, _ = fit(catalog, split, cc_map, preset_config(train, preset, seed), model_cfg)
        scorers[preset] = AlcirScorer(params, model_cfg, catalog)
    for name, scorer in scorers.items():
        cases = score_cases(split.test, scorer, catalog)
        out.reports[name] = summarize(cases, catalog)
        out.unaware[name] = evaluate(split.test, scorer, catalog, "category_unaware", cc_map)
        out.bins[name] = evaluate_by_label_bins(split, scorer, catalog, bins, cases=cases)
    out.seconds = time.perf_counter() - t0
    return out


def run_experiment(seeds: Sequence[int] = range(5), **kwargs) -> list[SeedResult]:
    return [run_seed(s, **kwargs) for s in seeds]


def mean_metric(results: Sequence[SeedResult], name: str, metric: str = "ndcg") -> float:
    vals = [r.reports[name].ndcg if metric == "ndcg" else r.reports[name].hr[int(metric.split("@")[1])]
            for r in results]
    return float(np.mean(vals))


def mean_bin_ndcg(results: Sequence[SeedResult], name: str, bin_index: int) -> float:
    return float(np.mean([r.bins[name].rows[bin_index].report.ndcg for r in results]))
