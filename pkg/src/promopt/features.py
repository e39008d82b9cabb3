"""Feature engineering: turn bi-weekly series into model-ready sample rows.

Every sample carries four groups (static/temporal x categorical/continuous).
All temporal features are causal: a sample at period t only sees periods
strictly before t, plus static pair attributes and calendar information.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import FeatureError
from .ingest import PERIOD_DAYS, BiweeklySeries, ConsumerItemKey

STATIC_CAT_FIELDS = ("category", "brand", "age_band", "marital_status", "family_size", "location")
TEMPORAL_CAT_FIELDS = ("period_of_year", "month", "quarter")
# index 0 is reserved for unknown levels in every vocabulary
TEMPORAL_CAT_VOCAB = {"period_of_year": 28, "month": 13, "quarter": 5}

PROFILE_NAMES = (
    "time_since_first",
    "time_since_last",
    "mean_purchase_gap",
    "reorder_rate",
    "streak",
    "total_orders",
)
ROLLING_NAMES = ("mean", "median", "variance", "kurtosis", "skewness")
ALL_GENERATORS = ("history", "rolling", "profile", "datetime")


@dataclass(frozen=True)
class FeatureSpec:
    n_lags: int = 4
    smoothing: float = 20.0
    generators: tuple[str, ...] = ALL_GENERATORS

    def __post_init__(self):
        if self.n_lags < 1:
            raise ValueError("n_lags must be >= 1")
        unknown = set(self.generators) - set(ALL_GENERATORS)
        if unknown:
            raise ValueError(f"unknown feature generators: {sorted(unknown)}")


@dataclass
class SampleRow:
    key: ConsumerItemKey
    period_index: int
    label: int
    static_categorical: np.ndarray     # [n_static_cat] int
    temporal_categorical: np.ndarray   # [n_lags, n_temporal_cat] int
    static_continuous: np.ndarray      # [n_static_cont] float
    temporal_continuous: np.ndarray    # [n_lags, n_temporal_cont] float


@dataclass
class FeatureManifest:
    n_lags: int
    static_cat_fields: list[tuple[str, int]]      # (name, vocab size)
    temporal_cat_fields: list[tuple[str, int]]
    static_cont_names: list[str]
    temporal_cont_names: list[str]
    vocabularies: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_lags": self.n_lags,
                "static_cat_fields": self.static_cat_fields,
                "temporal_cat_fields": self.temporal_cat_fields,
                "static_cont_names": self.static_cont_names,
                "temporal_cont_names": self.temporal_cont_names,
                "vocabularies": self.vocabularies,
            },
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureManifest":
        raw = json.loads(text)
        return cls(
            n_lags=raw["n_lags"],
            static_cat_fields=[(n, int(v)) for n, v in raw["static_cat_fields"]],
            temporal_cat_fields=[(n, int(v)) for n, v in raw["temporal_cat_fields"]],
            static_cont_names=list(raw["static_cont_names"]),
            temporal_cont_names=list(raw["temporal_cont_names"]),
            vocabularies={k: dict(v) for k, v in raw["vocabularies"].items()},
        )


def rolling_offsets(values, lags: int) -> dict[str, float]:
    """Population moments over the last ``lags`` values.

    Shorter windows use what exists; an empty window and degenerate moments
    (zero variance) yield 0 so no undefined value ever reaches the network.
    Kurtosis is the excess form.
    """
    if lags < 1:
        raise ValueError("lags must be >= 1")
    window = np.asarray(values, dtype=np.float64)[-lags:]
    if window.size == 0:
        return dict.fromkeys(ROLLING_NAMES, 0.0)
    mean = float(window.mean())
    centered = window - mean
    variance = float(np.mean(centered**2))
    if variance == 0.0:
        skewness = 0.0
        kurtosis = 0.0
    else:
        standardized = centered / math.sqrt(variance)
        skewness = float(np.mean(standardized**3))
        kurtosis = float(np.mean(standardized**4) - 3.0)
    return {
        "mean": mean,
        "median": float(np.median(window)),
        "variance": variance,
        "kurtosis": kurtosis,
        "skewness": skewness,
    }


def datetime_features(period_index: int, origin_date: date) -> dict[str, int]:
    """Calendar indices of the period's start date (1-based; 0 means unknown)."""
    start = origin_date + timedelta(days=PERIOD_DAYS * period_index)
    day_of_year = start.timetuple().tm_yday
    return {
        "period_of_year": (day_of_year - 1) // PERIOD_DAYS + 1,
        "month": start.month,
        "quarter": (start.month - 1) // 3 + 1,
    }


def profile_features(series: BiweeklySeries, period_index: int) -> dict[str, float]:
    """Purchase-history profile at ``period_index`` from strictly earlier periods.

    Pairs with no prior purchase get the sentinel period_index + 1 for the
    time and gap features: monotone, bounded, distinguishable from any real gap.
    """
    if not 0 <= period_index <= len(series):
        raise ValueError(f"period_index {period_index} outside series of length {len(series)}")
    history = series.labels[:period_index]
    purchase_periods = [t for t, lab in enumerate(history) if lab == 1]
    sentinel = float(period_index + 1)
    total_orders = float(len(purchase_periods))
    if purchase_periods:
        time_since_first = float(period_index - purchase_periods[0])
        time_since_last = float(period_index - purchase_periods[-1])
    else:
        time_since_first = sentinel
        time_since_last = sentinel
    if len(purchase_periods) >= 2:
        mean_gap = float(np.mean(np.diff(purchase_periods)))
    else:
        mean_gap = sentinel
    reorder_rate = total_orders / period_index if period_index > 0 else 0.0
    streak = 0
    for lab in reversed(history):
        if lab != 1:
            break
        streak += 1
    return {
        "time_since_first": time_since_first,
        "time_since_last": time_since_last,
        "mean_purchase_gap": mean_gap,
        "reorder_rate": reorder_rate,
        "streak": float(streak),
        "total_orders": total_orders,
    }


class FeatureBuilder(BaseEstimator):
    """Fits vocabularies and train-split target encodings, then emits samples.

    Target encodings (per consumer and per item purchase rates) are computed
    on the first ``train_periods`` periods only, with additive smoothing
    toward the global rate so rare levels stay near the prior.
    """

    def __init__(self, n_lags: int = 4, smoothing: float = 20.0, generators: tuple[str, ...] = ALL_GENERATORS):
        self.n_lags = n_lags
        self.smoothing = smoothing
        self.generators = generators

    @property
    def spec(self) -> FeatureSpec:
        return FeatureSpec(n_lags=self.n_lags, smoothing=self.smoothing, generators=tuple(self.generators))

    def fit(self, series_list, train_periods: int | None = None):
        _ = self.spec  # validates constructor parameters
        vocabs: dict[str, dict[str, int]] = {name: {} for name in STATIC_CAT_FIELDS}
        label_sum = 0.0
        label_count = 0
        consumer_stats: dict[str, list[float]] = {}
        item_stats: dict[str, list[float]] = {}
        for series in series_list:
            for name in STATIC_CAT_FIELDS:
                level = self._static_level(series, name)
                if level not in vocabs[name]:
                    vocabs[name][level] = len(vocabs[name]) + 1
            upto = len(series) if train_periods is None else min(train_periods, len(series))
            labels = series.labels[:upto]
            label_sum += sum(labels)
            label_count += len(labels)
            consumer_stats.setdefault(series.key.consumer_id, []).extend(labels)
            item_stats.setdefault(series.key.item_id, []).extend(labels)
        self.vocabularies_ = vocabs
        self.global_rate_ = label_sum / label_count if label_count else 0.0
        self.consumer_encoding_ = {c: self._smooth(v) for c, v in consumer_stats.items()}
        self.item_encoding_ = {i: self._smooth(v) for i, v in item_stats.items()}
        self.manifest_ = self._build_manifest()
        return self

    def _smooth(self, labels) -> float:
        return (sum(labels) + self.smoothing * self.global_rate_) / (len(labels) + self.smoothing)

    @staticmethod
    def _static_level(series: BiweeklySeries, name: str) -> str:
        if name == "category":
            return series.key.category
        return series.attributes.get(name, "unknown")

    def _build_manifest(self) -> FeatureManifest:
        enabled = set(self.generators)
        temporal_cont = []
        if "history" in enabled:
            temporal_cont += ["label", "offer_percent", "price", "quantity"]
        if "rolling" in enabled:
            temporal_cont += [f"label_roll_{s}" for s in ROLLING_NAMES]
            temporal_cont += [f"offer_roll_{s}" for s in ROLLING_NAMES]
        static_cont = ["consumer_rate", "item_rate"]
        if "profile" in enabled:
            static_cont += list(PROFILE_NAMES)
        temporal_cat = list(TEMPORAL_CAT_FIELDS) if "datetime" in enabled else []
        return FeatureManifest(
            n_lags=self.n_lags,
            static_cat_fields=[(name, len(self.vocabularies_[name]) + 1) for name in STATIC_CAT_FIELDS],
            temporal_cat_fields=[(name, TEMPORAL_CAT_VOCAB[name]) for name in temporal_cat],
            static_cont_names=static_cont,
            temporal_cont_names=temporal_cont,
            vocabularies=self.vocabularies_,
        )

    def _check_fitted(self):
        if not hasattr(self, "manifest_"):
            raise NotFittedError("FeatureBuilder must be fitted before use")

    def make_samples(self, series: BiweeklySeries) -> list[SampleRow]:
        """One SampleRow per eligible period (period index >= n_lags)."""
        self._check_fitted()
        n_lags = self.n_lags
        if len(series) <= n_lags:
            raise ValueError(f"series length {len(series)} must exceed n_lags {n_lags}")
        enabled = set(self.generators)
        manifest = self.manifest_

        static_cat = np.array(
            [self.vocabularies_[name].get(self._static_level(series, name), 0) for name in STATIC_CAT_FIELDS],
            dtype=np.int64,
        )
        for j, (name, vocab_size) in enumerate(manifest.static_cat_fields):
            if not static_cat[j] < vocab_size:
                raise FeatureError(name, f"index {static_cat[j]} breaches vocabulary size {vocab_size}")

        consumer_rate = self.consumer_encoding_.get(series.key.consumer_id, self.global_rate_)
        item_rate = self.item_encoding_.get(series.key.item_id, self.global_rate_)

        labels = np.asarray(series.labels, dtype=np.float64)
        offers = np.asarray(series.offers, dtype=np.float64)
        prices = np.asarray(series.prices, dtype=np.float64)
        quantities = np.asarray(series.quantities, dtype=np.float64)

        samples = []
        for t in range(n_lags, len(series)):
            lag_periods = range(t - n_lags, t)
            rows = []
            for s in lag_periods:
                row = []
                if "history" in enabled:
                    row += [labels[s], offers[s], prices[s], quantities[s]]
                if "rolling" in enabled:
                    label_stats = rolling_offsets(labels[: s + 1], n_lags)
                    offer_stats = rolling_offsets(offers[: s + 1], n_lags)
                    row += [label_stats[name] for name in ROLLING_NAMES]
                    row += [offer_stats[name] for name in ROLLING_NAMES]
                rows.append(row)
            temporal_cont = np.asarray(rows, dtype=np.float64).reshape(n_lags, len(manifest.temporal_cont_names))
            if not np.all(np.isfinite(temporal_cont)):
                raise FeatureError("temporal_continuous", f"non-finite value at period {t}")

            if "datetime" in enabled:
                temporal_cat = np.array(
                    [
                        [datetime_features(s, series.origin_date)[name] for name in TEMPORAL_CAT_FIELDS]
                        for s in range(t - n_lags + 1, t + 1)
                    ],
                    dtype=np.int64,
                )
            else:
                temporal_cat = np.zeros((n_lags, 0), dtype=np.int64)

            static_cont = [consumer_rate, item_rate]
            if "profile" in enabled:
                profile = profile_features(series, t)
                static_cont += [profile[name] for name in PROFILE_NAMES]
            static_cont = np.asarray(static_cont, dtype=np.float64)
            if not np.all(np.isfinite(static_cont)):
                raise FeatureError("static_continuous", f"non-finite value at period {t}")

            samples.append(
                SampleRow(
                    key=series.key,
                    period_index=t,
                    label=int(series.labels[t]),
                    static_categorical=static_cat.copy(),
                    temporal_categorical=temporal_cat,
                    static_continuous=static_cont,
                    temporal_continuous=temporal_cont,
                )
            )
        return samples

    def transform(self, series_list) -> list[SampleRow]:
        self._check_fitted()
        out = []
        for series in series_list:
            out.extend(self.make_samples(series))
        return out


def write_samples(samples, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for s in samples:
            handle.write(
                json.dumps(
                    {
                        "consumer_id": s.key.consumer_id,
                        "item_id": s.key.item_id,
                        "category": s.key.category,
                        "period_index": s.period_index,
                        "label": s.label,
                        "static_categorical": s.static_categorical.tolist(),
                        "temporal_categorical": s.temporal_categorical.tolist(),
                        "static_continuous": s.static_continuous.tolist(),
                        "temporal_continuous": s.temporal_continuous.tolist(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_samples(path) -> list[SampleRow]:
    out = []
    with Path(path).open(encoding="utf-8") as handle:
        for line in handle:
            raw = json.loads(line)
            out.append(
                SampleRow(
                    key=ConsumerItemKey(raw["consumer_id"], raw["item_id"], raw["category"]),
                    period_index=int(raw["period_index"]),
                    label=int(raw["label"]),
                    static_categorical=np.asarray(raw["static_categorical"], dtype=np.int64),
                    temporal_categorical=np.asarray(raw["temporal_categorical"], dtype=np.int64).reshape(
                        len(raw["temporal_categorical"]), -1
                    ),
                    static_continuous=np.asarray(raw["static_continuous"], dtype=np.float64),
                    temporal_continuous=np.asarray(raw["temporal_continuous"], dtype=np.float64),
                )
            )
    return out
