"""Feature engineering: rolling moments, calendar features, profiles, samples."""

import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promopt.features import (
    ROLLING_NAMES,
    FeatureBuilder,
    datetime_features,
    profile_features,
    read_samples,
    rolling_offsets,
    write_samples,
)
from promopt.ingest import BiweeklySeries, ConsumerItemKey


def make_series(labels, offers=None, key=None, origin=date(2024, 1, 1), attributes=None):
    n = len(labels)
    return BiweeklySeries(
        key=key or ConsumerItemKey("c1", "i1", "snacks"),
        origin_date=origin,
        labels=list(labels),
        offers=list(offers) if offers is not None else [10.0 * l for l in labels],
        prices=[5.0 * l for l in labels],
        quantities=[float(l) for l in labels],
        offer_events=[(t, 10.0) for t, l in enumerate(labels) if l],
        attributes=attributes or {"brand": "b1"},
    )


def brute_force_stats(window):
    """Independent recomputation with sequential python arithmetic."""
    n = len(window)
    if n == 0:
        return dict.fromkeys(ROLLING_NAMES, 0.0)
    mean = sum(window) / n
    var = sum((x - mean) ** 2 for x in window) / n
    if var == 0.0:
        skew = kurt = 0.0
    else:
        std = math.sqrt(var)
        zs = [(x - mean) / std for x in window]
        skew = sum(z**3 for z in zs) / n
        kurt = sum(z**4 for z in zs) / n - 3.0
    return {
        "mean": mean,
        "median": float(np.median(np.asarray(window))),
        "variance": var,
        "kurtosis": kurt,
        "skewness": skew,
    }


class TestRollingOffsets:
    def test_constant_window_degenerate_moments(self):
        stats = rolling_offsets([5.0, 5.0, 5.0, 5.0], 4)
        assert stats == {"mean": 5.0, "median": 5.0, "variance": 0.0, "kurtosis": 0.0, "skewness": 0.0}

    def test_one_to_four(self):
        stats = rolling_offsets([1.0, 2.0, 3.0, 4.0], 4)
        assert stats["mean"] == 2.5
        assert stats["variance"] == 1.25
        assert stats["median"] == 2.5
        assert stats["skewness"] == 0.0
        assert math.isclose(stats["kurtosis"], 2.5625 / 1.5625 - 3.0)

    def test_single_element(self):
        stats = rolling_offsets([7.0], 4)
        assert (stats["mean"], stats["median"], stats["variance"]) == (7.0, 7.0, 0.0)

    def test_empty_window_all_zero(self):
        assert rolling_offsets([], 3) == dict.fromkeys(ROLLING_NAMES, 0.0)

    def test_window_restricted_to_last_lags(self):
        assert rolling_offsets([100.0, 1.0, 2.0, 3.0, 4.0], 4) == rolling_offsets([1.0, 2.0, 3.0, 4.0], 4)

    @given(
        st.lists(st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=0, max_size=8),
        st.integers(min_value=1, max_value=8),
    )
    @settings(max_examples=200, deadline=None)
    def test_agrees_with_brute_force(self, values, lags):
        mine = rolling_offsets(values, lags)
        reference = brute_force_stats(values[-lags:])
        for name in ROLLING_NAMES:
            assert math.isclose(mine[name], reference[name], rel_tol=1e-12, abs_tol=1e-12)


class TestDatetimeFeatures:
    def test_origin_january_first_period_zero(self):
        feats = datetime_features(0, date(2024, 1, 1))
        assert feats["month"] == 1
        assert feats["quarter"] == 1
        assert feats["period_of_year"] == 1

    def test_period_13_lands_26_weeks_later(self):
        feats = datetime_features(13, date(2024, 1, 1))  # 2024-07-01
        assert feats["month"] == 7
        assert feats["quarter"] == 3

    def test_day_of_year_non_decreasing_until_wraparound(self):
        origin = date(2024, 1, 1)
        periods = [datetime_features(t, origin)["period_of_year"] for t in range(26)]
        assert periods == sorted(periods)
        assert datetime_features(27, origin)["period_of_year"] < periods[-1]  # wrapped into next year


class TestProfileFeatures:
    def test_prior_window_hand_count(self):
        series = make_series([1, 1, 0])
        feats = profile_features(series, 2)
        assert feats["time_since_last"] == 1.0
        assert feats["total_orders"] == 2.0
        assert feats["streak"] == 2.0  # both prior periods purchased
        assert feats["reorder_rate"] == 1.0

    def test_streak_is_run_length_of_prior_purchases(self):
        assert profile_features(make_series([1, 1]), 2)["streak"] == 2.0
        assert profile_features(make_series([1, 0]), 2)["streak"] == 0.0
        assert profile_features(make_series([0, 1, 1, 1]), 4)["streak"] == 3.0

    def test_no_prior_purchase_sentinels(self):
        feats = profile_features(make_series([0, 0, 0]), 2)
        assert feats["time_since_last"] == 3.0  # period_index + 1
        assert feats["time_since_first"] == 3.0
        assert feats["mean_purchase_gap"] == 3.0
        assert feats["reorder_rate"] == 0.0

    def test_gaps(self):
        series = make_series([1, 0, 1, 0, 1, 0])
        feats = profile_features(series, 6)
        assert feats["mean_purchase_gap"] == 2.0
        assert feats["time_since_first"] == 6.0
        assert feats["time_since_last"] == 2.0


def fit_builder(series_list, n_lags=4, train_periods=None):
    return FeatureBuilder(n_lags=n_lags).fit(series_list, train_periods=train_periods)


class TestMakeSamples:
    def random_series(self, seed, n=26):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, n).tolist()
        offers = (rng.uniform(0, 50, n) * np.array(labels)).tolist()
        return make_series(labels, offers)

    def test_sample_count_is_length_minus_lags(self):
        series = self.random_series(0)
        builder = fit_builder([series])
        assert len(builder.make_samples(series)) == 26 - 4

    def test_label_matches_series(self):
        series = self.random_series(1)
        builder = fit_builder([series])
        for sample in builder.make_samples(series):
            assert sample.label == series.labels[sample.period_index]

    def test_causality_future_permutation_leaves_sample_unchanged(self):
        series = self.random_series(2)
        builder = fit_builder([series], train_periods=10)
        target = 8
        base = next(s for s in builder.make_samples(series) if s.period_index == target)

        permuted = make_series(series.labels[: target + 1] + series.labels[target + 1 :][::-1],
                               series.offers[: target + 1] + series.offers[target + 1 :][::-1])
        other = next(s for s in builder.make_samples(permuted) if s.period_index == target)
        np.testing.assert_array_equal(base.temporal_continuous, other.temporal_continuous)
        np.testing.assert_array_equal(base.static_continuous, other.static_continuous)
        np.testing.assert_array_equal(base.temporal_categorical, other.temporal_categorical)

    def test_causality_truncation_reproduces_features(self):
        series = self.random_series(3)
        builder = fit_builder([series], train_periods=10)
        target = 12
        full = next(s for s in builder.make_samples(series) if s.period_index == target)
        truncated = make_series(series.labels[: target + 1], series.offers[: target + 1])
        cut = next(s for s in builder.make_samples(truncated) if s.period_index == target)
        np.testing.assert_array_equal(full.temporal_continuous, cut.temporal_continuous)
        np.testing.assert_array_equal(full.static_continuous, cut.static_continuous)

    def test_series_shorter_than_lags_rejected(self):
        series = self.random_series(4, n=4)
        builder = fit_builder([series])
        with pytest.raises(ValueError):
            builder.make_samples(series)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_all_continuous_values_finite(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 30))
        labels = rng.integers(0, 2, n).tolist()
        offers = rng.uniform(0, 100, n).tolist()
        series = make_series(labels, offers)
        builder = fit_builder([series])
        for sample in builder.make_samples(series):
            assert np.all(np.isfinite(sample.temporal_continuous))
            assert np.all(np.isfinite(sample.static_continuous))

    def test_unknown_level_maps_to_reserved_index(self):
        train = make_series([1, 0, 1, 0, 1, 0], attributes={"brand": "b1"})
        builder = fit_builder([train])
        novel = make_series([1, 0, 1, 0, 1, 0], attributes={"brand": "never_seen"},
                            key=ConsumerItemKey("c9", "i9", "snacks"))
        sample = builder.make_samples(novel)[0]
        brand_pos = [name for name, _ in builder.manifest_.static_cat_fields].index("brand")
        assert sample.static_categorical[brand_pos] == 0

    def test_target_encoding_smoothing_toward_global_rate(self):
        always = make_series([1] * 10, key=ConsumerItemKey("buyer", "i1", "snacks"))
        never = make_series([0] * 10, key=ConsumerItemKey("ghost", "i2", "snacks"))
        builder = FeatureBuilder(n_lags=2, smoothing=20.0).fit([always, never])
        assert builder.global_rate_ == 0.5
        # (10 + 20*0.5) / (10 + 20) = 2/3
        assert math.isclose(builder.consumer_encoding_["buyer"], 2.0 / 3.0)
        assert math.isclose(builder.consumer_encoding_["ghost"], 1.0 / 3.0)

    def test_samples_roundtrip_jsonl(self, tmp_path):
        series = self.random_series(5)
        builder = fit_builder([series])
        samples = builder.make_samples(series)
        path = tmp_path / "samples.jsonl"
        write_samples(samples, path)
        restored = read_samples(path)
        assert len(restored) == len(samples)
        np.testing.assert_array_equal(restored[0].temporal_continuous, samples[0].temporal_continuous)
        np.testing.assert_array_equal(restored[3].static_categorical, samples[3].static_categorical)
        assert restored[5].period_index == samples[5].period_index
