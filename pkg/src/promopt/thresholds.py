"""Per-consumer probability cut-off selection by F1 maximization.

F1 against a threshold is piecewise constant with breakpoints only at the
observed probabilities, so scanning the distinct predicted values finds the
exact maximum. Ties break toward the largest qualifying threshold, the most
conservative targeting at equal F1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .validation import as_binary_array, check_equal_length, check_probabilities

DEFAULT_CUTOFF = 0.5


@dataclass
class ConsumerPredictions:
    consumer_id: str
    actuals: np.ndarray
    probabilities: np.ndarray
    category: str = ""

    def __post_init__(self):
        self.actuals = as_binary_array(self.actuals, "actuals")
        self.probabilities = check_probabilities(self.probabilities, "probabilities")
        check_equal_length(self.actuals, self.probabilities, "actuals", "probabilities")

    @property
    def purchases(self) -> int:
        return int(self.actuals.sum())


@dataclass
class ThresholdResult:
    consumer_id: str
    cutoff: float
    f1: float
    k: int              # predicted positives at the cutoff
    b: int              # actual purchases
    true_positives: int
    degenerate: bool = False
    source: str = "fitted"
    category: str = ""


def decide(probabilities, cutoff: float) -> np.ndarray:
    """Binary decisions: 1 where probability >= cutoff."""
    p = check_probabilities(probabilities, "probabilities")
    return (p >= cutoff).astype(np.int64)


def f1_at(actuals, probabilities, cutoff: float):
    """(true positives, precision, recall, F1) at one cutoff.

    Conventions absorb the degenerate cases: empty decision means precision 0,
    no purchases means recall 0, and F1 is 0 whenever k + b = 0.
    """
    y = as_binary_array(actuals, "actuals")
    decisions = decide(probabilities, cutoff)
    check_equal_length(y, decisions, "actuals", "probabilities")
    k = int(decisions.sum())
    b = int(y.sum())
    v = int(decisions @ y)
    precision = v / k if k > 0 else 0.0
    recall = v / b if b > 0 else 0.0
    f1 = 2.0 * v / (k + b) if k + b > 0 else 0.0
    return v, precision, recall, f1


def maximize_threshold(actuals, probabilities, consumer_id: str = "", category: str = "") -> ThresholdResult:
    """Cut-off maximizing F1 over the distinct predicted probabilities.

    A consumer with no actual purchases has identically zero F1; the result is
    flagged degenerate and callers substitute a category-level cutoff.
    """
    y = as_binary_array(actuals, "actuals")
    p = check_probabilities(probabilities, "probabilities")
    check_equal_length(y, p, "actuals", "probabilities")
    if len(p) < 1:
        raise ValueError("need at least one prediction")
    b = int(y.sum())

    order = np.argsort(p, kind="stable")
    p_sorted = p[order]
    suffix_tp = np.concatenate([np.cumsum(y[order][::-1])[::-1], [0.0]])
    candidates = np.unique(p_sorted)[::-1]      # descending; argmax tie -> largest cutoff
    first_idx = np.searchsorted(p_sorted, candidates, side="left")
    k_at = len(p) - first_idx
    v_at = suffix_tp[first_idx]
    f1_at_candidates = np.where(k_at + b > 0, 2.0 * v_at / (k_at + b), 0.0)
    best = int(np.argmax(f1_at_candidates))
    return ThresholdResult(
        consumer_id=consumer_id,
        cutoff=float(candidates[best]),
        f1=float(f1_at_candidates[best]),
        k=int(k_at[best]),
        b=b,
        true_positives=int(v_at[best]),
        degenerate=(b == 0),
        category=category,
    )


class ThresholdCalibrator(BaseEstimator):
    """Fits one cut-off per (category, consumer) from grouped predictions.

    Consumers with no purchases in the calibration window get the median
    cutoff of their category's non-degenerate consumers, falling back to
    ``default_cutoff`` when the whole category is degenerate.
    """

    def __init__(self, default_cutoff: float = DEFAULT_CUTOFF):
        self.default_cutoff = default_cutoff

    def fit(self, grouped: list[ConsumerPredictions]):
        results = [
            maximize_threshold(g.actuals, g.probabilities, consumer_id=g.consumer_id, category=g.category)
            for g in grouped
        ]
        fitted_by_category: dict[str, list[float]] = {}
        for res in results:
            if not res.degenerate:
                fitted_by_category.setdefault(res.category, []).append(res.cutoff)
        for res in results:
            if res.degenerate:
                cutoffs = fitted_by_category.get(res.category)
                if cutoffs:
                    res.cutoff = float(np.median(cutoffs))
                    res.source = "category_median"
                else:
                    res.cutoff = self.default_cutoff
                    res.source = "default"
        self.results_ = results
        self.by_consumer_ = {(r.category, r.consumer_id): r for r in results}
        return self

    def cutoff_for(self, category: str, consumer_id: str) -> float:
        if not hasattr(self, "by_consumer_"):
            raise NotFittedError("calibrator must be fitted first")
        result = self.by_consumer_.get((category, consumer_id))
        return result.cutoff if result is not None else self.default_cutoff
