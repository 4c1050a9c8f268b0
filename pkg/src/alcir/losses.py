"""Triplet, cycle-consistency and classifier losses and their weighting.

The ``*_terms`` functions return one value per batch row; the ``*_loss``
functions average them into a scalar. Both accept plain arrays or graph
values and record onto ``tape`` when one is given.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import core_math as cm
from .core_math import Var
from .errors import ConfigError

logger = logging.getLogger(__name__)

DISTANCES = ("neg_cosine", "euclidean")


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.2
    distance: str = "neg_cosine"

    def __post_init__(self):
        if self.margin < 0:
            raise ConfigError("triplet margin must be nonnegative")
        if self.distance not in DISTANCES:
            raise ConfigError(f"distance must be one of {DISTANCES}, got {self.distance!r}")


@dataclass(frozen=True)
class LossWeights:
    triplet: float = 0.6
    cycle: float = 0.2
    classifier: float = 0.2

    def __post_init__(self):
        ws = (self.triplet, self.cycle, self.classifier)
        if min(ws) < 0 or abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"loss weights must be nonnegative and sum to 1, got {ws}")

    def as_tuple(self):
        return (self.triplet, self.cycle, self.classifier)


PRESETS = {
    "full": LossWeights(0.6, 0.2, 0.2),
    "sup": LossWeights(1.0, 0.0, 0.0),
    "triplet_cycle": LossWeights(0.75, 0.25, 0.0),
    "triplet_classifier": LossWeights(0.75, 0.0, 0.25),
    "classifier_cycle": LossWeights(0.0, 0.5, 0.5),
}


def _var(x):
    if isinstance(x, Var):
        return x
    return cm.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def distance(a: Var, b: Var, kind: str, tape=None) -> Var:
    """Row-wise distance: negative cosine, or squared Euclidean."""
    if kind == "neg_cosine":
        return cm.scale(cm.row_cosine(a, b, tape), -1.0, tape)
    if kind == "euclidean":
        return cm.row_sq_dist(a, b, tape)
    raise ConfigError(f"unknown distance {kind!r}")


def triplet_terms(anchor, pos, neg, cfg: TripletConfig = TripletConfig(), tape=None) -> Var:
    a, p, n = _var(anchor), _var(pos), _var(neg)
    gap = cm.sub(distance(a, p, cfg.distance, tape), distance(a, n, cfg.distance, tape), tape)
    shifted = cm.add(gap, cm.constant(np.full(gap.value.shape, cfg.margin)), tape)
    return cm.hinge(shifted, tape)


def triplet_loss(anchor, pos, neg, cfg: TripletConfig = TripletConfig(), tape=None) -> Var:
    return cm.mean(triplet_terms(anchor, pos, neg, cfg, tape), tape)


def cycle_terms(original, reconstructed, tape=None) -> Var:
    """``||v - v'||^2`` per row, with ``v`` treated as a fixed label."""
    label = cm.stop_gradient(_var(original), tape)
    return cm.row_sq_dist(label, _var(reconstructed), tape)


def cycle_loss(original, reconstructed, tape=None) -> Var:
    return cm.mean(cycle_terms(original, reconstructed, tape), tape)


def classifier_terms(p, tape=None) -> Var:
    """``-log p`` per entry; p is clamped at 1e-12 with a warning."""
    pv = p if isinstance(p, Var) else cm.constant(np.atleast_1d(np.asarray(p, dtype=np.float64)))
    if np.any(pv.value <= 0):
        logger.warning("classifier_loss: %d probabilities <= 0 clamped to %g",
                       int((pv.value <= 0).sum()), cm.LOG_CLAMP)
    return cm.scale(cm.log(pv, tape), -1.0, tape)


def classifier_loss(p, tape=None) -> Var:
    return cm.mean(classifier_terms(p, tape), tape)


def adversarial_terms(p, tape=None) -> Var:
    """``-log(1 - p)`` per entry: the loss of a classifier that should reject
    a translated vector as a member of its target category."""
    pv = p if isinstance(p, Var) else cm.constant(np.atleast_1d(np.asarray(p, dtype=np.float64)))
    rest = cm.sub(cm.constant(np.ones_like(pv.value)), pv, tape)
    return cm.scale(cm.log(rest, tape), -1.0, tape)


def adversarial_loss(p, tape=None) -> Var:
    return cm.mean(adversarial_terms(p, tape), tape)


def combined_loss(l_triplet, l_cycle, l_classifier, w: LossWeights, tape=None):
    """Weighted sum of the three losses. Floats in, float out; graph values in,
    graph value out."""
    if not isinstance(w, LossWeights):
        w = LossWeights(*w)
    if not any(isinstance(x, Var) for x in (l_triplet, l_cycle, l_classifier)):
        return w.triplet * float(l_triplet) + w.cycle * float(l_cycle) + w.classifier * float(l_classifier)
    terms = [cm.scale(_scalar(x), c, tape) for x, c in zip((l_triplet, l_cycle, l_classifier), w.as_tuple())]
    return cm.add(cm.add(terms[0], terms[1], tape), terms[2], tape)


def _scalar(x):
    return x if isinstance(x, Var) else Var(np.float64(x))

