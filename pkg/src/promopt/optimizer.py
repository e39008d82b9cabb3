"""Discrete offer assignment maximizing net revenue under a retention floor.

The objective is separable across consumer-item pairs and every revenue term
is nonnegative, so enumerating the 39 candidate offer changes per item is
exact: the per-item optimum maximizes total revenue, and preferring an
in-cutoff decision on revenue ties also maximizes the retention attainable
at that revenue. The retention floor is then checked on the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError
from .ingest import ConsumerItemKey

ETA_STEP = 0.05
ETA_J_MAX = 19          # j in -19..19, 39 candidates including 0


def eta_candidates(step: float = ETA_STEP, j_max: int = ETA_J_MAX) -> list[float]:
    return [j * step for j in range(-j_max, j_max + 1)]


@dataclass(frozen=True)
class OptimizationItem:
    key: ConsumerItemKey
    price: float                 # item price I_p
    reference_offer: float       # k, percent
    probability: float           # f(k) on the category curve
    epsilon: float               # offer-elasticity at k
    cutoff: float                # consumer's probability cut-off

    def __post_init__(self):
        if not 0.0 < self.cutoff < 1.0:
            raise ValueError("cutoff must lie strictly inside (0, 1)")
        if self.reference_offer <= 0:
            raise ValueError("reference offer must be positive")


@dataclass
class OptimizationProblem:
    category: str
    items: list[OptimizationItem]
    retention_floor: float = 0.0
    offer_range: tuple[float, float] = (0.0, 100.0)

    def __post_init__(self):
        o1, o2 = self.offer_range
        if not (0.0 <= o1 < o2 <= 100.0):
            raise ValueError(f"offer range must satisfy 0 <= o1 < o2 <= 100, got {self.offer_range}")
        if not 0.0 <= self.retention_floor <= 1.0:
            raise ValueError("retention floor must lie in [0, 1]")


@dataclass(frozen=True)
class OfferDecision:
    key: ConsumerItemKey
    eta: float
    new_offer: float
    adjusted_prob: float
    indicator: int
    revenue: float
    in_range: bool


@dataclass
class CategorySolution:
    category: str
    decisions: list[OfferDecision] = field(default_factory=list)
    total_revenue: float = 0.0
    retention: float = 1.0
    weighted_offer_percent: float = 0.0


def evaluate_choice(item: OptimizationItem, eta: float, offer_range: tuple[float, float]) -> OfferDecision:
    """One candidate decision; out-of-range offers are marked not in_range.

    The adjusted probability f(k)*(1 + eta*epsilon) is clamped into [0, 1]
    for reporting sanity; for cutoffs strictly inside (0, 1) the clamp never
    flips the indicator.
    """
    o1, o2 = offer_range
    new_offer = item.reference_offer * (1.0 + eta)
    adjusted = min(max(item.probability * (1.0 + eta * item.epsilon), 0.0), 1.0)
    indicator = 1 if adjusted >= item.cutoff else 0
    return OfferDecision(
        key=item.key,
        eta=eta,
        new_offer=new_offer,
        adjusted_prob=adjusted,
        indicator=indicator,
        revenue=item.price * (1.0 - new_offer / 100.0) * indicator,
        in_range=o1 < new_offer < o2,
    )


def solve_item(item: OptimizationItem, offer_range: tuple[float, float], candidates=None) -> OfferDecision:
    """Best decision for one item over the discrete offer-change lattice.

    Among in-range candidates that clear the consumer's cut-off, returns the
    maximum-revenue one; if none qualifies, keeps the reference offer
    (eta = 0) with the indicator as evaluated there.
    """
    if candidates is None:
        candidates = eta_candidates()
    best: OfferDecision | None = None
    for eta in candidates:
        decision = evaluate_choice(item, eta, offer_range)
        if decision.in_range and decision.indicator == 1:
            if best is None or decision.revenue > best.revenue:
                best = decision
    return best if best is not None else evaluate_choice(item, 0.0, offer_range)


def weighted_offer(decisions) -> float:
    """Revenue-share weighted mean of new offers over retained items, 0 if none."""
    retained = [d for d in decisions if d.indicator == 1]
    if not retained:
        return 0.0
    total = sum(d.revenue for d in retained)
    if total <= 0.0:
        return float(np.mean([d.new_offer for d in retained]))
    return sum(d.revenue * d.new_offer for d in retained) / total


def solve_category(problem: OptimizationProblem) -> CategorySolution:
    """Per-item maximization plus the category retention check.

    Raises InfeasibleError when the retention attainable at the revenue
    optimum falls below the floor, reporting achieved retention and the
    below-cutoff items. An empty problem is vacuously feasible.
    """
    decisions = [solve_item(item, problem.offer_range) for item in problem.items]
    n = len(decisions)
    retention = sum(d.indicator for d in decisions) / n if n else 1.0
    if retention < problem.retention_floor:
        raise InfeasibleError(
            problem.category,
            achieved=retention,
            required=problem.retention_floor,
            binding_items=[d.key for d in decisions if d.indicator == 0],
        )
    return CategorySolution(
        category=problem.category,
        decisions=decisions,
        total_revenue=sum(d.revenue for d in decisions),
        retention=retention,
        weighted_offer_percent=weighted_offer(decisions),
    )


def offer_range_from_events(recent_offers, all_offers, low: float = 1.0, high: float = 99.0) -> tuple[float, float]:
    """[low, high] percentile of recent non-zero offers, widened if degenerate.

    Falls back to the whole history when the latest window has no usable
    offers, and to (0, 100) when even that is degenerate.
    """
    for pool in (recent_offers, all_offers):
        nonzero = np.asarray([o for o in pool if o > 0.0], dtype=np.float64)
        if nonzero.size >= 2:
            o1, o2 = np.percentile(nonzero, [low, high])
            if o1 < o2:
                return float(max(o1, 0.0)), float(min(o2, 100.0))
    return 0.0, 100.0
