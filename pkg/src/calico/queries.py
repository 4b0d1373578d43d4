"""Query strategies over the unlabeled pool.

Least confidence ranks every pool member by its maximum posterior and takes
the lowest Q. The equal-class variant enforces identical per-class counts,
which requires peeking at ground truth, so it refuses to run against a live
annotation service. Random selection is the control.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .models import ModelState, confidence, logits, posterior

STRATEGIES = ("least_confidence", "equal_class", "random")


@dataclass(frozen=True)
class QuerySpec:
    strategy: str = "least_confidence"
    q: int = 10
    labels_per_class: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy '{self.strategy}'")
        if self.strategy == "equal_class":
            if self.labels_per_class < 1:
                raise ValidationError("equal_class needs labels_per_class >= 1")
        elif self.q < 1:
            raise ValidationError("query size must be >= 1")


def pool_confidences(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Deterministic evaluation-mode confidence for each row."""
    conf, _ = confidence(posterior(logits(state, features)))
    return np.atleast_1d(conf)


def select_least_confident(ids: np.ndarray, confidences: np.ndarray,
                           q: int) -> np.ndarray:
    """Lowest-confidence ids, ascending confidence, id breaks ties."""
    ids = np.asarray(ids, dtype=np.int64)
    confidences = np.asarray(confidences, dtype=np.float64)
    if ids.size == 0:
        raise ValidationError("empty pool")
    if ids.shape != confidences.shape:
        raise ValidationError("ids and confidences must align")
    order = np.lexsort((ids, confidences))
    return ids[order[:min(q, ids.size)]]


def least_confidence_query(state: ModelState, unlabeled_ids: np.ndarray,
                           features: np.ndarray, q: int) -> np.ndarray:
    """Score the whole pool and return the Q least-confident sample ids."""
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if unlabeled_ids.size == 0:
        raise ValidationError("empty pool")
    conf = pool_confidences(state, features[unlabeled_ids])
    return select_least_confident(unlabeled_ids, conf, q)


def equal_class_query(state: ModelState, unlabeled_ids: np.ndarray,
                      features: np.ndarray, true_labels: np.ndarray,
                      n_classes: int, labels_per_class: int,
                      oracle=None) -> np.ndarray:
    """Least-confident members of every ground-truth class, quota each.

    Consults true labels before annotation, so it only makes sense when the
    oracle is a simulated lookup; a live service would have to label samples
    just to decide what to ask. Exhausted classes contribute what they have.
    """
    if oracle is not None and not getattr(oracle, "is_simulated", False):
        raise ValidationError(
            "equal_class consults ground truth and is simulation-only")
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if unlabeled_ids.size == 0:
        raise ValidationError("empty pool")
    if labels_per_class < 1:
        raise ValidationError("labels_per_class must be >= 1")
    conf = pool_confidences(state, features[unlabeled_ids])
    pool_labels = np.asarray(true_labels)[unlabeled_ids]
    picked = []
    for k in range(n_classes):
        mask = pool_labels == k
        if not mask.any():
            continue
        picked.append(select_least_confident(unlabeled_ids[mask], conf[mask],
                                             labels_per_class))
    if not picked:
        raise ValidationError("empty pool")
    return np.concatenate(picked)


def random_query(unlabeled_ids: np.ndarray, q: int, seed: int) -> np.ndarray:
    """Uniform draw without replacement, fully determined by the seed."""
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64)
    if unlabeled_ids.size == 0:
        raise ValidationError("empty pool")
    rng = np.random.default_rng(seed)
    take = min(q, unlabeled_ids.size)
    return rng.choice(unlabeled_ids, size=take, replace=False)
