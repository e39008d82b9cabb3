"""Offer-response curves and offer-elasticity of purchase probability.

Each category gets a sigmoid f(x) = 1/(1+exp(-(a*x+b))) fitted by least
squares on (offer percent, predicted probability) points. The elasticity of
the fitted curve at offer k has the closed form a*k*(1-f(k)) because
f'(x) = a*f(x)*(1-f(x)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ElasticitySkip, FitError
from .ingest import ConsumerItemKey
from .validation import as_float_array, check_equal_length

Y_CLAMP = 1e-6
LAST4_PERIODS = 2          # "last 4 weeks" in 2-week periods
MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass
class SigmoidFit:
    category: str
    a: float
    b: float
    r_squared: float
    n_points: int

    def predict(self, k):
        return sigmoid(self.a * np.asarray(k, dtype=np.float64) + self.b)


@dataclass(frozen=True)
class ReferenceOffer:
    key: ConsumerItemKey
    k: float
    source: str     # last4 | historical | cohort | category_fallback

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("reference offer must be positive (cascade averages non-zero offers)")


@dataclass(frozen=True)
class ElasticityRecord:
    key: ConsumerItemKey
    k: float
    f_k: float
    epsilon: float
    source: str


def fit_sigmoid(offers, probabilities, category: str = "") -> SigmoidFit:
    """Least-squares sigmoid fit on the probability scale.

    Gauss-Newton with Levenberg damping, initialized from ordinary least
    squares on logit(y); converged when the accepted step is below 1e-10 or
    after 200 iterations. r_squared follows the usual 1 - SSres/SStot with
    the convention r_squared = 0 for a flat response.
    """
    k = as_float_array(offers, "offers")
    y = as_float_array(probabilities, "probabilities")
    check_equal_length(k, y, "offers", "probabilities")
    if k.size < 3:
        raise FitError(f"need at least 3 points, got {k.size}")
    if np.all(k == k[0]):
        raise FitError("all offer values identical; normal equations are singular")
    y = np.clip(y, Y_CLAMP, 1.0 - Y_CLAMP)

    z = np.log(y / (1.0 - y))
    design = np.column_stack([k, np.ones_like(k)])
    (a, b), *_ = np.linalg.lstsq(design, z, rcond=None)

    def residual(theta):
        return sigmoid(theta[0] * k + theta[1]) - y

    theta = np.array([a, b])
    r = residual(theta)
    sse = float(r @ r)
    damping = 1e-3
    for _ in range(MAX_ITERATIONS):
        f = sigmoid(theta[0] * k + theta[1])
        w = f * (1.0 - f)
        jac = np.column_stack([w * k, w])
        lhs = jac.T @ jac + damping * np.eye(2)
        rhs = -jac.T @ r
        try:
            step = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            raise FitError("normal equations are singular") from None
        candidate = theta + step
        r_new = residual(candidate)
        sse_new = float(r_new @ r_new)
        if sse_new < sse:
            theta, r, sse = candidate, r_new, sse_new
            damping = max(damping / 10.0, 1e-12)
            if float(np.linalg.norm(step)) < STEP_TOLERANCE:
                break
        else:
            damping *= 10.0
            if damping > 1e12:
                break

    ss_tot = float(np.sum((y - y.mean()) ** 2))
    flat = bool(np.all(y == y[0]))
    r_squared = 0.0 if flat or ss_tot == 0.0 else 1.0 - sse / ss_tot
    return SigmoidFit(category=category, a=float(theta[0]), b=float(theta[1]), r_squared=r_squared, n_points=k.size)


class OfferResponseCurve(BaseEstimator):
    """Estimator facade over fit_sigmoid for one category."""

    def __init__(self, category: str = ""):
        self.category = category

    def fit(self, offers, probabilities):
        fit = fit_sigmoid(offers, probabilities, category=self.category)
        self.a_ = fit.a
        self.b_ = fit.b
        self.r_squared_ = fit.r_squared
        self.n_points_ = fit.n_points
        return self

    def predict(self, offers):
        if not hasattr(self, "a_"):
            raise NotFittedError("curve must be fitted first")
        return sigmoid(self.a_ * np.asarray(offers, dtype=np.float64) + self.b_)


def elasticity(a: float, k: float, f_k: float) -> float:
    """Offer-elasticity of purchase probability on the fitted sigmoid at offer k."""
    if k <= 0:
        raise ValueError("offer k must be positive")
    if not 0.0 < f_k < 1.0:
        raise ValueError("purchase probability must lie strictly inside (0, 1)")
    return a * k * (1.0 - f_k)


def _nonzero_mean(values) -> float | None:
    nonzero = [v for v in values if v > 0.0]
    return float(np.mean(nonzero)) if nonzero else None


def reference_offer(
    key: ConsumerItemKey,
    events: list[tuple[int, float]],
    n_periods: int,
    cohort_last4_offers=(),
    category_offers=(),
) -> ReferenceOffer:
    """Reference offer for one pair, first non-empty source in cascade order.

    a) mean non-zero offer of the pair's transactions in the last 4 weeks,
    b) mean non-zero offer over the pair's whole history,
    c) mean non-zero last-4-week offer pooled over same-age pairs (supplied
       by the caller as ``cohort_last4_offers``),
    d) category-wide historical non-zero mean.
    """
    last4_start = n_periods - LAST4_PERIODS
    for source, pool in (
        ("last4", [o for p, o in events if p >= last4_start]),
        ("historical", [o for _, o in events]),
        ("cohort", list(cohort_last4_offers)),
        ("category_fallback", list(category_offers)),
    ):
        mean = _nonzero_mean(pool)
        if mean is not None:
            return ReferenceOffer(key=key, k=mean, source=source)
    raise ElasticitySkip(key.consumer_id, key.item_id)


def pair_age(events: list[tuple[int, float]], n_periods: int) -> int:
    """Periods elapsed since the pair's first transaction."""
    if not events:
        return 0
    return n_periods - min(p for p, _ in events)


def compute_reference_offers(pair_events: dict[ConsumerItemKey, list[tuple[int, float]]], n_periods: int):
    """Cascade over every pair of one category.

    Returns (offers by key, skipped keys). Same-age cohorts pool the
    last-4-week offers of pairs whose first transaction is equally old.
    """
    last4_start = n_periods - LAST4_PERIODS
    cohort_pools: dict[int, list[float]] = {}
    category_pool: list[float] = []
    for key, events in pair_events.items():
        age = pair_age(events, n_periods)
        pool = cohort_pools.setdefault(age, [])
        for p, o in events:
            if p >= last4_start:
                pool.append(o)
            category_pool.append(o)

    offers: dict[ConsumerItemKey, ReferenceOffer] = {}
    skipped: list[ConsumerItemKey] = []
    for key in sorted(pair_events):
        events = pair_events[key]
        age = pair_age(events, n_periods)
        try:
            offers[key] = reference_offer(
                key,
                events,
                n_periods,
                cohort_last4_offers=cohort_pools.get(age, ()),
                category_offers=category_pool,
            )
        except ElasticitySkip:
            skipped.append(key)
    return offers, skipped


def elasticity_records(
    fit: SigmoidFit,
    offers: dict[ConsumerItemKey, ReferenceOffer],
) -> list[ElasticityRecord]:
    """Per-pair elasticity at the reference offer, on the category's fitted curve."""
    records = []
    for key in sorted(offers):
        ref = offers[key]
        f_k = float(fit.predict(ref.k))
        f_k = min(max(f_k, Y_CLAMP), 1.0 - Y_CLAMP)
        records.append(
            ElasticityRecord(
                key=key,
                k=ref.k,
                f_k=f_k,
                epsilon=elasticity(fit.a, ref.k, f_k),
                source=ref.source,
            )
        )
    return records
