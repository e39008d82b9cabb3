"""Transaction log ingestion and bi-weekly series construction.

A consumer-item pair becomes one series of 2-week periods. The label of a
period is 1 iff the pair transacted at least once in it; per-period offer,
price and quantity are aggregated alongside. Pairs qualify for modelling
only if they transacted inside the training portion of the window.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import RowError, SchemaError, SizingError

PERIOD_DAYS = 14

REQUIRED_FIELDS = ("date", "consumer_id", "item_id", "quantity", "selling_price", "offer_percent", "category")
OPTIONAL_FIELDS = ("brand", "age_band", "marital_status", "family_size", "location")
CSV_COLUMNS = REQUIRED_FIELDS + OPTIONAL_FIELDS

DEFAULT_SCHEMA = {name: name for name in CSV_COLUMNS}


@dataclass(frozen=True)
class TransactionRecord:
    """One purchase line from the transaction log."""

    date: date
    consumer_id: str
    item_id: str
    quantity: int
    selling_price: float
    offer_percent: float
    category: str
    brand: str = "unknown"
    age_band: str = "unknown"
    marital_status: str = "unknown"
    family_size: str = "unknown"
    location: str = "unknown"


@dataclass(frozen=True, order=True)
class ConsumerItemKey:
    consumer_id: str
    item_id: str
    category: str


@dataclass
class BiweeklySeries:
    """Aligned per-period purchase labels and transactional attributes for one pair.

    ``offer_events`` keeps the raw (period, offer_percent) of every transaction,
    which the reference-offer cascade needs at transaction granularity.
    """

    key: ConsumerItemKey
    origin_date: date
    labels: list[int]
    offers: list[float]
    prices: list[float]
    quantities: list[float]
    offer_events: list[tuple[int, float]] = field(default_factory=list)
    attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.offers) == len(self.prices) == len(self.quantities) == n):
            raise ValueError("aligned sequences must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def slice(self, start: int, stop: int) -> "BiweeklySeries":
        return BiweeklySeries(
            key=self.key,
            origin_date=self.origin_date + timedelta(days=PERIOD_DAYS * start),
            labels=self.labels[start:stop],
            offers=self.offers[start:stop],
            prices=self.prices[start:stop],
            quantities=self.quantities[start:stop],
            offer_events=[(p - start, o) for p, o in self.offer_events if start <= p < stop],
            attributes=dict(self.attributes),
        )


@dataclass(frozen=True)
class SplitSpec:
    train_periods: int = 24
    validation_periods: int = 1
    test_periods: int = 1

    def __post_init__(self):
        if min(self.train_periods, self.validation_periods, self.test_periods) < 1:
            raise ValueError("all split counts must be >= 1")

    @property
    def total(self) -> int:
        return self.train_periods + self.validation_periods + self.test_periods


@dataclass
class SeriesSplit:
    train: BiweeklySeries
    validation: BiweeklySeries
    test: BiweeklySeries


def _parse_row(row: dict[str, str], line_number: int) -> TransactionRecord:
    try:
        when = date.fromisoformat(row["date"].strip())
    except ValueError as exc:
        raise RowError(line_number, f"bad date {row['date']!r}: {exc}") from None
    try:
        quantity = int(row["quantity"])
        selling_price = float(row["selling_price"])
        offer_percent = float(row["offer_percent"])
    except ValueError as exc:
        raise RowError(line_number, str(exc)) from None
    if quantity < 1:
        raise RowError(line_number, f"quantity must be >= 1, got {quantity}")
    if selling_price < 0:
        raise RowError(line_number, f"selling_price must be >= 0, got {selling_price}")
    if not 0.0 <= offer_percent <= 100.0:
        raise RowError(line_number, f"offer_percent must be in [0, 100], got {offer_percent}")
    optional = {}
    for name in OPTIONAL_FIELDS:
        value = row.get(name, "")
        optional[name] = value.strip() if value and value.strip() else "unknown"
    return TransactionRecord(
        date=when,
        consumer_id=row["consumer_id"].strip(),
        item_id=row["item_id"].strip(),
        quantity=quantity,
        selling_price=selling_price,
        offer_percent=offer_percent,
        category=row["category"].strip(),
        **optional,
    )


def parse_transactions(path, schema: dict[str, str] | None = None) -> list[TransactionRecord]:
    """Parse a delimited transaction log, fail-fast on malformed rows.

    ``schema`` maps record field names to column names in the file; unmapped
    optional fields default to the "unknown" level.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for name in REQUIRED_FIELDS:
            column = schema.get(name, "")
            if not column or column not in header:
                raise SchemaError(column or name, str(path))
        for raw in reader:
            mapped = {name: raw[schema[name]] for name in REQUIRED_FIELDS}
            for name in OPTIONAL_FIELDS:
                column = schema.get(name, "")
                if column and column in header:
                    mapped[name] = raw[column]
            records.append(_parse_row(mapped, reader.line_num))
    return records


def write_transactions(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.date.isoformat(),
                    rec.consumer_id,
                    rec.item_id,
                    rec.quantity,
                    repr(rec.selling_price),
                    repr(rec.offer_percent),
                    rec.category,
                    rec.brand,
                    rec.age_band,
                    rec.marital_status,
                    rec.family_size,
                    rec.location,
                ]
            )


def derive_window(records) -> tuple[date, date]:
    """Window anchored at the earliest transaction; partial trailing period dropped."""
    if not records:
        raise ValueError("cannot derive a window from an empty record set")
    start = min(r.date for r in records)
    span = (max(r.date for r in records) - start).days + 1
    n_periods = max(1, span // PERIOD_DAYS)
    return start, start + timedelta(days=PERIOD_DAYS * n_periods)


def build_series(records, window: tuple[date, date], relevancy_periods: int | None = None) -> list[BiweeklySeries]:
    """Aggregate transactions into one bi-weekly series per relevant pair.

    Relevancy requires at least one transaction within the first
    ``relevancy_periods`` periods (all periods when None). Multiple
    transactions in one period collapse to label 1, mean offer/price and
    summed quantity.
    """
    start, end = window
    span = (end - start).days
    if span <= 0 or span % PERIOD_DAYS != 0:
        raise ValueError(f"window length must be a positive multiple of {PERIOD_DAYS} days, got {span}")
    n_periods = span // PERIOD_DAYS
    if relevancy_periods is None:
        relevancy_periods = n_periods

    by_pair: dict[ConsumerItemKey, list[tuple[int, TransactionRecord]]] = {}
    for rec in records:
        if not (start <= rec.date < end):
            continue
        period = (rec.date - start).days // PERIOD_DAYS
        key = ConsumerItemKey(rec.consumer_id, rec.item_id, rec.category)
        by_pair.setdefault(key, []).append((period, rec))

    out = []
    for key in sorted(by_pair):
        events = by_pair[key]
        if not any(period < relevancy_periods for period, _ in events):
            continue
        labels = [0] * n_periods
        offers = [0.0] * n_periods
        prices = [0.0] * n_periods
        quantities = [0.0] * n_periods
        per_period: dict[int, list[TransactionRecord]] = {}
        for period, rec in events:
            per_period.setdefault(period, []).append(rec)
        for period, recs in per_period.items():
            labels[period] = 1
            offers[period] = float(np.mean([r.offer_percent for r in recs]))
            prices[period] = float(np.mean([r.selling_price for r in recs]))
            quantities[period] = float(sum(r.quantity for r in recs))
        first = events[0][1]
        out.append(
            BiweeklySeries(
                key=key,
                origin_date=start,
                labels=labels,
                offers=offers,
                prices=prices,
                quantities=quantities,
                offer_events=sorted((period, r.offer_percent) for period, r in events),
                attributes={
                    "brand": first.brand,
                    "age_band": first.age_band,
                    "marital_status": first.marital_status,
                    "family_size": first.family_size,
                    "location": first.location,
                },
            )
        )
    return out


def split_series(series: BiweeklySeries, spec: SplitSpec) -> SeriesSplit:
    """Chronological train/validation/test partition; test takes the final periods.

    The train slice absorbs any leading surplus so the three slices always
    concatenate back to the original series.
    """
    n = len(series)
    if n < spec.total:
        raise SizingError(f"series has {n} periods, split needs at least {spec.total}")
    test_start = n - spec.test_periods
    val_start = test_start - spec.validation_periods
    return SeriesSplit(
        train=series.slice(0, val_start),
        validation=series.slice(val_start, test_start),
        test=series.slice(test_start, n),
    )


# --- synthetic data -------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDraw:
    """One Bernoulli exposure of a pair in a period (kept for test oracles)."""

    consumer_id: str
    item_id: str
    category: str
    period: int
    offer_percent: float
    probability: float
    purchased: bool


@dataclass
class SyntheticDataset:
    records: list[TransactionRecord]
    response: dict[str, tuple[float, float]]
    draws: list[SyntheticDraw]
    origin_date: date
    n_periods: int


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def gen_synthetic(
    seed: int,
    n_consumers: int,
    n_items: int,
    n_categories: int,
    periods: int,
    response: list[tuple[float, float]],
    offer_jitter: float = 2.0,
    origin: date = date(2024, 1, 1),
) -> SyntheticDataset:
    """Generate a transaction log with a known sigmoid offer response per category.

    Every consumer-item pair is exposed once per period; purchase is a
    Bernoulli draw with p = 1/(1+exp(-(a*offer+b))) for the item's category.
    Offers are persistent per pair (a seeded base level in [0, 50] plus small
    jitter) so that offer history carries signal about the current period.
    """
    if min(n_consumers, n_items, n_categories, periods) < 1:
        raise ValueError("all counts must be >= 1")
    if len(response) != n_categories:
        raise ValueError(f"need {n_categories} (a, b) pairs, got {len(response)}")
    rng = np.random.default_rng(seed)
    categories = [f"cat_{c:02d}" for c in range(n_categories)]
    response_map = {categories[c]: (float(response[c][0]), float(response[c][1])) for c in range(n_categories)}

    item_category = {f"item_{i:03d}": categories[i % n_categories] for i in range(n_items)}
    item_price = {item: round(float(rng.uniform(20.0, 80.0)), 2) for item in item_category}
    item_brand = {f"item_{i:03d}": f"brand_{i % 7}" for i in range(n_items)}

    age_bands = ["18-25", "26-35", "36-45", "46-55", "56+"]
    consumer_profile = {}
    for c in range(n_consumers):
        consumer_profile[f"consumer_{c:03d}"] = {
            "age_band": age_bands[int(rng.integers(0, len(age_bands)))],
            "marital_status": ["single", "married"][int(rng.integers(0, 2))],
            "family_size": str(int(rng.integers(1, 6))),
            "location": f"loc_{int(rng.integers(0, 10))}",
        }

    pair_level = {}
    for c in range(n_consumers):
        for i in range(n_items):
            pair_level[(f"consumer_{c:03d}", f"item_{i:03d}")] = float(rng.uniform(0.0, 50.0))

    records = []
    draws = []
    for period in range(periods):
        period_start = origin + timedelta(days=PERIOD_DAYS * period)
        for c in range(n_consumers):
            consumer = f"consumer_{c:03d}"
            for i in range(n_items):
                item = f"item_{i:03d}"
                category = item_category[item]
                a, b = response_map[category]
                offer = pair_level[(consumer, item)] + float(rng.normal(0.0, offer_jitter))
                offer = round(float(np.clip(offer, 0.0, 50.0)), 2)
                prob = _sigmoid(a * offer + b)
                purchased = bool(rng.random() < prob)
                draws.append(SyntheticDraw(consumer, item, category, period, offer, prob, purchased))
                if purchased:
                    records.append(
                        TransactionRecord(
                            date=period_start + timedelta(days=int(rng.integers(0, PERIOD_DAYS))),
                            consumer_id=consumer,
                            item_id=item,
                            quantity=int(rng.integers(1, 4)),
                            selling_price=item_price[item],
                            offer_percent=offer,
                            category=category,
                            brand=item_brand[item],
                            **consumer_profile[consumer],
                        )
                    )
    return SyntheticDataset(
        records=records,
        response=response_map,
        draws=draws,
        origin_date=origin,
        n_periods=periods,
    )


# --- series store ---------------------------------------------------------

def write_series_store(series_list, path) -> None:
    """JSON-lines store, one self-describing record per consumer-item pair."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for series in series_list:
            handle.write(
                json.dumps(
                    {
                        "consumer_id": series.key.consumer_id,
                        "item_id": series.key.item_id,
                        "category": series.key.category,
                        "origin_date": series.origin_date.isoformat(),
                        "labels": series.labels,
                        "offers": series.offers,
                        "prices": series.prices,
                        "quantities": series.quantities,
                        "offer_events": [[p, o] for p, o in series.offer_events],
                        "attributes": series.attributes,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_series_store(path) -> list[BiweeklySeries]:
    out = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            raw = json.loads(line)
            out.append(
                BiweeklySeries(
                    key=ConsumerItemKey(raw["consumer_id"], raw["item_id"], raw["category"]),
                    origin_date=date.fromisoformat(raw["origin_date"]),
                    labels=list(raw["labels"]),
                    offers=list(raw["offers"]),
                    prices=list(raw["prices"]),
                    quantities=list(raw["quantities"]),
                    offer_events=[(int(p), float(o)) for p, o in raw["offer_events"]],
                    attributes=dict(raw["attributes"]),
                )
            )
    return out
