"""Semi-supervised training loop.

One step optimises a single objective over all four networks::

    w_t * triplet + w_c * cycle + w_k * (cls_genuine + cls_translated)

Gradient routing:

* encoder outputs enter the genuine classifier loss through a stop-gradient,
  so the classifier never moves the encoder;
* the cycle loss treats the seed encoding as a fixed label (stop-gradient on
  that side only; the reconstruction path still reaches the encoder);
* translated vectors reach the classifier through a gradient-reversal layer.
  ``cls_translated`` is ``-log(1 - p)`` with p the classifier's probability of
  the target category: the classifier descends on it (learns to reject
  translated vectors) while the translator, receiving the negated gradient,
  ascends on it (learns to pass as a genuine member of the target category).

Unlabeled samples (catalog items paired with a category drawn from their
category's complementary set) contribute only to the cycle and translated
classifier terms.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import core_math as cm
from . import losses
from .core_math import GradientTape, Optimizer, ParamStore
from .data import Catalog, ComplementaryCategoryMap, DatasetSplit, LabeledPair
from .errors import ConfigError, SamplingError, TrainingDivergenceError
from .evaluation import evaluate
from .model import ModelConfig, classify, encode, init_params, reconstruct, translate
from .retrieval import AlcirScorer

logger = logging.getLogger(__name__)

TERMS = ("triplet", "cycle", "cls_genuine", "cls_translated")
OPTIMIZERS = ("sgd", "momentum")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.05
    loss_weights: losses.LossWeights = losses.PRESETS["full"]
    triplet: losses.TripletConfig = losses.TripletConfig()
    early_stop_patience: int = 5
    rng_seed: int = 0
    unlabeled_ratio: float = 1.0
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    # global gradient-norm clip; 0 disables
    clip_norm: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.early_stop_patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, learning_rate > 0 and patience >= 1 are required")
        if self.unlabeled_ratio < 0:
            raise ConfigError("unlabeled_ratio must be nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")

    def make_optimizer(self) -> Optimizer:
        mom = self.momentum if self.optimizer == "momentum" else 0.0
        return Optimizer(self.learning_rate, momentum=mom, weight_decay=self.weight_decay,
                         clip_norm=self.clip_norm or None)


@dataclass
class TrainBatch:
    """Catalog indices. ``labeled`` rows are (seed, positive, negative,
    target category); ``unlabeled`` rows are (item, sampled category)."""

    seeds: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    targets: np.ndarray
    unlabeled_items: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unlabeled_targets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_labeled(self):
        return len(self.seeds)

    @property
    def n_unlabeled(self):
        return len(self.unlabeled_items)


@dataclass
class LossBreakdown:
    triplet: float = 0.0
    cycle: float = 0.0
    cls_genuine: float = 0.0
    cls_translated: float = 0.0
    objective: float = 0.0


# --------------------------------------------------------------------------
# sampling


def sample_negative(pair: LabeledPair, catalog: Catalog, rng: np.random.Generator) -> str:
    """Uniform draw from the target's category, excluding the target."""
    members = catalog.items_by_category[pair.target_category]
    if len(members) < 2:
        raise SamplingError(f"category {catalog.categories[pair.target_category]!r} has a single item")
    k = catalog.position_in_category[catalog.index_of[pair.target_id]]
    j = int(rng.integers(len(members) - 1))
    return catalog.items[members[j if j < k else j + 1]].item_id


def _sample_unlabeled(n, catalog, cc_map, rng):
    items = rng.integers(len(catalog), size=n)
    cats = np.empty(n, dtype=np.int64)
    C = catalog.n_categories
    for j, i in enumerate(items):
        own = catalog.items[i].category_id
        comp = [c for c in cc_map.categories(own) if c != own]
        if comp:
            cats[j] = comp[int(rng.integers(len(comp)))]
        else:
            c = int(rng.integers(C - 1))
            cats[j] = c + 1 if c >= own else c
    return items.astype(np.int64), cats


def make_batches(pairs: Sequence[LabeledPair], catalog: Catalog, cc_map: ComplementaryCategoryMap,
                 cfg: TrainConfig, rng: np.random.Generator) -> list[TrainBatch]:
    order = rng.permutation(len(pairs))
    batches = []
    for start in range(0, len(order), cfg.batch_size):
        rows = []
        for i in order[start:start + cfg.batch_size]:
            p = pairs[i]
            try:
                neg = sample_negative(p, catalog, rng)
            except SamplingError as e:
                logger.debug("skipping pair %s -> %s: %s", p.seed_id, p.target_id, e)
                continue
            idx = catalog.index_of
            rows.append((idx[p.seed_id], idx[p.target_id], idx[neg], p.target_category))
        if not rows:
            continue
        arr = np.array(rows, dtype=np.int64)
        n_u = math.ceil(cfg.unlabeled_ratio * len(rows)) if cfg.unlabeled_ratio > 0 else 0
        u_items, u_cats = _sample_unlabeled(n_u, catalog, cc_map, rng)
        batches.append(TrainBatch(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], u_items, u_cats))
    return batches


# --------------------------------------------------------------------------
# one step


def term_weights(cfg: TrainConfig) -> dict[str, float]:
    w = cfg.loss_weights
    return {"triplet": w.triplet, "cycle": w.cycle, "cls_genuine": w.classifier, "cls_translated": w.classifier}


def step_gradients(params: ParamStore, batch: TrainBatch, catalog: Catalog, model_cfg: ModelConfig,
                   cfg: TrainConfig, weights: dict[str, float] | None = None, bypass_grl: bool = False):
    """Forward + backward for one batch. Returns (grads, LossBreakdown).

    ``weights`` overrides the per-term weights (keys from ``TERMS``); terms
    with zero weight are not computed. ``bypass_grl`` removes the reversal
    layer, which only makes sense for routing checks.
    """
    wt = term_weights(cfg) if weights is None else {t: weights.get(t, 0.0) for t in TERMS}
    tape = GradientTape()
    nL, nU = batch.n_labeled, batch.n_unlabeled
    ecfg = model_cfg.encoder

    idx = np.concatenate([batch.seeds, batch.positives, batch.negatives, batch.unlabeled_items])
    v = encode(params, ecfg, catalog.features[idx], catalog.category_ids[idx], catalog.price_bins[idx], tape)
    v_s = cm.slice_rows(v, 0, nL, tape)
    v_p = cm.slice_rows(v, nL, 2 * nL, tape)
    v_n = cm.slice_rows(v, 2 * nL, 3 * nL, tape)
    v_u = cm.slice_rows(v, 3 * nL, 3 * nL + nU, tape)

    src = cm.concat_rows([v_s, v_u], tape) if nU else v_s
    src_idx = np.concatenate([batch.seeds, batch.unlabeled_items])
    tgt = np.concatenate([batch.targets, batch.unlabeled_targets])
    need_translate = wt["triplet"] or wt["cycle"] or wt["cls_translated"]
    vt = translate(params, model_cfg.translator, src, tgt, tape) if need_translate else None

    parts, out = [], LossBreakdown()
    if wt["triplet"] and nL:
        l = losses.triplet_loss(cm.slice_rows(vt, 0, nL, tape), v_p, v_n, cfg.triplet, tape)
        out.triplet = float(l.value)
        parts.append(cm.scale(l, wt["triplet"], tape))
    if wt["cycle"]:
        rec = reconstruct(params, model_cfg.reconstructor, vt, catalog.category_ids[src_idx], tape)
        l = losses.cycle_loss(src, rec, tape)
        out.cycle = float(l.value)
        parts.append(cm.scale(l, wt["cycle"], tape))
    if wt["cls_genuine"] and nL:
        genuine = cm.stop_gradient(cm.concat_rows([v_s, v_p], tape), tape)
        labels = np.concatenate([catalog.category_ids[batch.seeds], catalog.category_ids[batch.positives]])
        l = losses.classifier_loss(classify(params, model_cfg.classifier, genuine, labels, tape), tape)
        out.cls_genuine = float(l.value)
        parts.append(cm.scale(l, wt["cls_genuine"], tape))
    if wt["cls_translated"]:
        x = vt if bypass_grl else cm.gradient_reversal(vt, tape)
        l = losses.adversarial_loss(classify(params, model_cfg.classifier, x, tgt, tape), tape)
        out.cls_translated = float(l.value)
        parts.append(cm.scale(l, wt["cls_translated"], tape))

    if not parts:
        return {}, out
    total = parts[0]
    for p in parts[1:]:
        total = cm.add(total, p, tape)
    out.objective = float(total.value)
    if not np.isfinite(out.objective):
        raise TrainingDivergenceError(f"non-finite loss {out.objective}")
    return tape.backward(total), out


def train_step(params: ParamStore, batch: TrainBatch, catalog: Catalog, model_cfg: ModelConfig, cfg: TrainConfig,
               optimizer: Optimizer | None = None) -> tuple[ParamStore, LossBreakdown]:
    grads, out = step_gradients(params, batch, catalog, model_cfg, cfg)
    (optimizer or cfg.make_optimizer()).step(params, grads)
    return params, out


# --------------------------------------------------------------------------
# fit


@dataclass
class EpochLog:
    epoch: int
    triplet: float
    cycle: float
    cls_genuine: float
    cls_translated: float
    val_hr10: float
    val_ndcg: float


def fit(catalog: Catalog, split: DatasetSplit, cc_map: ComplementaryCategoryMap, cfg: TrainConfig,
        model_cfg: ModelConfig | None = None, params: ParamStore | None = None) -> tuple[ParamStore, list[EpochLog]]:
    """Train and return the parameters of the best validation epoch.

    Epochs are compared by validation HR@10, then NDCG; the earlier epoch
    wins a tie. Stops after ``early_stop_patience`` epochs without improvement.
    """
    if not split.train:
        raise ConfigError("empty training split")
    if model_cfg is None:
        model_cfg = ModelConfig.build(catalog.feature_width, catalog.n_categories)
    if params is None:
        params = init_params(model_cfg, cfg.rng_seed)
    rng = np.random.default_rng(cfg.rng_seed)
    opt = cfg.make_optimizer()
    history: list[EpochLog] = []
    best, best_key, stale = params.copy(), None, 0

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(4)
        n_seen = 0
        for b_i, batch in enumerate(make_batches(split.train, catalog, cc_map, cfg, rng)):
            try:
                _, br = train_step(params, batch, catalog, model_cfg, cfg, opt)
            except TrainingDivergenceError as e:
                raise TrainingDivergenceError(f"epoch {epoch}, batch {b_i}: {e}") from e
            sums += batch.n_labeled * np.array([br.triplet, br.cycle, br.cls_genuine, br.cls_translated])
            n_seen += batch.n_labeled
        means = sums / max(n_seen, 1)

        if split.validation:
            rep = evaluate(split.validation, AlcirScorer(params, model_cfg, catalog), catalog)
            key = (rep.hr[10], rep.ndcg)
        else:
            rep, key = None, (0.0, float(epoch))
        history.append(EpochLog(epoch, *means, rep.hr[10] if rep else float("nan"), rep.ndcg if rep else float("nan")))
        logger.info("epoch %d: triplet %.4f cycle %.4f cls %.4f/%.4f val hr@10 %.4f",
                    epoch, *means, history[-1].val_hr10)

        if best_key is None or key > best_key:
            best, best_key, stale = params.copy(), key, 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                logger.info("early stop after epoch %d", epoch)
                break
    return best, history


LOG_COLUMNS = ("epoch", "triplet", "cycle", "cls_genuine", "cls_translated", "val_hr10", "val_ndcg")


def write_training_log(path, history: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for h in history:
            w.writerow([h.epoch] + [f"{getattr(h, c):.6f}" for c in LOG_COLUMNS[1:]])
