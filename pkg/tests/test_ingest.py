"""Ingestion: parsing, series construction, splits, synthetic generator."""

import textwrap
from datetime import date, timedelta

import numpy as np
import pytest

from promopt.errors import RowError, SchemaError, SizingError
from promopt.ingest import (
    PERIOD_DAYS,
    SplitSpec,
    TransactionRecord,
    build_series,
    derive_window,
    gen_synthetic,
    parse_transactions,
    read_series_store,
    split_series,
    write_series_store,
    write_transactions,
)

HEADER = "date,consumer_id,item_id,quantity,selling_price,offer_percent,category,brand,age_band,marital_status,family_size,location"


def write_csv(tmp_path, body, name="tx.csv"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body).strip() + "\n", encoding="utf-8")
    return path


def make_record(day, consumer="c1", item="i1", offer=10.0, category="snacks", price=5.0, quantity=1):
    return TransactionRecord(
        date=day,
        consumer_id=consumer,
        item_id=item,
        quantity=quantity,
        selling_price=price,
        offer_percent=offer,
        category=category,
    )


class TestParseTransactions:
    def test_empty_file_with_header(self, tmp_path):
        path = write_csv(tmp_path, HEADER)
        assert parse_transactions(path) == []

    def test_three_rows_in_file_order(self, tmp_path):
        path = write_csv(
            tmp_path,
            f"""
            {HEADER}
            2024-01-02,c1,i1,1,5.0,10.0,snacks,b1,18-25,single,2,loc_1
            2024-01-03,c2,i2,2,7.5,0.0,dairy,b2,26-35,married,3,loc_2
            2024-01-04,c1,i2,1,7.5,25.0,dairy,b2,18-25,single,2,loc_1
            """,
        )
        records = parse_transactions(path)
        assert [r.consumer_id for r in records] == ["c1", "c2", "c1"]
        assert records[0].date == date(2024, 1, 2)
        assert records[2].offer_percent == 25.0

    def test_offer_percent_out_of_range_reports_line(self, tmp_path):
        path = write_csv(
            tmp_path,
            f"""
            {HEADER}
            2024-01-02,c1,i1,1,5.0,10.0,snacks,b1,,,,
            2024-01-03,c1,i1,1,5.0,120.0,snacks,b1,,,,
            """,
        )
        with pytest.raises(RowError) as err:
            parse_transactions(path)
        assert err.value.line_number == 3
        assert "offer_percent" in str(err.value)

    def test_missing_column_names_it(self, tmp_path):
        path = write_csv(tmp_path, "date,consumer_id,item_id\n2024-01-02,c1,i1")
        with pytest.raises(SchemaError) as err:
            parse_transactions(path)
        assert err.value.column == "quantity"

    def test_unparseable_date_fails_fast(self, tmp_path):
        path = write_csv(
            tmp_path,
            f"""
            {HEADER}
            01/02/2024,c1,i1,1,5.0,10.0,snacks,b1,,,,
            """,
        )
        with pytest.raises(RowError) as err:
            parse_transactions(path)
        assert err.value.line_number == 2

    def test_schema_mapping_renames_columns(self, tmp_path):
        path = write_csv(
            tmp_path,
            """
            when,who,what,qty,price,disc,cat
            2024-01-02,c1,i1,1,5.0,10.0,snacks
            """,
        )
        schema = {
            "date": "when",
            "consumer_id": "who",
            "item_id": "what",
            "quantity": "qty",
            "selling_price": "price",
            "offer_percent": "disc",
            "category": "cat",
        }
        records = parse_transactions(path, schema=schema)
        assert len(records) == 1
        assert records[0].brand == "unknown"


class TestBuildSeries:
    ORIGIN = date(2024, 1, 1)

    def window(self, weeks):
        return (self.ORIGIN, self.ORIGIN + timedelta(weeks=weeks))

    def test_purchases_in_weeks_1_and_5_of_8_week_window(self):
        records = [
            make_record(self.ORIGIN + timedelta(days=2)),        # week 1 -> period 0
            make_record(self.ORIGIN + timedelta(weeks=4, days=1)),  # week 5 -> period 2
        ]
        series = build_series(records, self.window(8))
        assert len(series) == 1
        assert series[0].labels == [1, 0, 1, 0]

    def test_pair_only_in_test_portion_excluded(self):
        records = [make_record(self.ORIGIN + timedelta(weeks=6))]  # period 3 of 4
        assert build_series(records, self.window(8), relevancy_periods=3) == []

    def test_same_period_offers_average(self):
        records = [
            make_record(self.ORIGIN, offer=10.0),
            make_record(self.ORIGIN + timedelta(days=3), offer=20.0),
        ]
        series = build_series(records, self.window(2))
        assert series[0].offers == [15.0]
        assert series[0].labels == [1]

    def test_empty_records_empty_result(self):
        assert build_series([], self.window(4)) == []

    def test_window_must_be_multiple_of_14_days(self):
        with pytest.raises(ValueError):
            build_series([], (self.ORIGIN, self.ORIGIN + timedelta(days=20)))

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        records = [
            make_record(self.ORIGIN + timedelta(days=int(d)), consumer=f"c{int(c)}")
            for c, d in zip(rng.integers(0, 3, 60), rng.integers(0, 8 * 7, 60))
        ]
        series = build_series(records, self.window(8))
        counted = sum(len([e for e in s.offer_events]) for s in series)
        assert counted == len(records)
        for s in series:
            assert sum(s.labels) == len({p for p, _ in s.offer_events})

    def test_derive_window_drops_partial_trailing_period(self):
        records = [make_record(self.ORIGIN), make_record(self.ORIGIN + timedelta(days=30))]
        start, end = derive_window(records)
        assert start == self.ORIGIN
        assert (end - start).days == 28  # 31 days of data -> 2 whole periods


class TestSplitSeries:
    def build(self, n_periods):
        origin = date(2024, 1, 1)
        records = [make_record(origin + timedelta(days=PERIOD_DAYS * p)) for p in range(n_periods)]
        return build_series(records, (origin, origin + timedelta(days=PERIOD_DAYS * n_periods)))[0]

    def test_26_periods_default_spec(self):
        split = split_series(self.build(26), SplitSpec(24, 1, 1))
        assert (len(split.train), len(split.validation), len(split.test)) == (24, 1, 1)

    def test_too_short_raises_sizing_error(self):
        with pytest.raises(SizingError):
            split_series(self.build(10), SplitSpec(24, 1, 1))

    def test_exact_partition_unions_back(self):
        series = self.build(4)
        split = split_series(series, SplitSpec(2, 1, 1))
        assert split.train.labels + split.validation.labels + split.test.labels == series.labels
        assert split.train.offers + split.validation.offers + split.test.offers == series.offers

    def test_concatenation_property_with_surplus(self):
        series = self.build(8)
        split = split_series(series, SplitSpec(2, 1, 1))
        assert len(split.train) == 6  # absorbs the surplus
        assert split.train.labels + split.validation.labels + split.test.labels == series.labels
        assert split.test.origin_date == series.origin_date + timedelta(days=PERIOD_DAYS * 7)

    def test_spec_invariants(self):
        with pytest.raises(ValueError):
            SplitSpec(0, 1, 1)


class TestGenSynthetic:
    def test_same_seed_byte_identical(self, tmp_path):
        kwargs = dict(seed=11, n_consumers=4, n_items=6, n_categories=2, periods=6, response=[(0.1, -2.0), (0.05, -1.0)])
        write_transactions(gen_synthetic(**kwargs).records, tmp_path / "a.csv")
        write_transactions(gen_synthetic(**kwargs).records, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_flat_response_purchase_rate_half(self):
        dataset = gen_synthetic(seed=5, n_consumers=25, n_items=10, n_categories=1, periods=40, response=[(0.0, 0.0)])
        assert len(dataset.draws) == 25 * 10 * 40  # 10,000 exposures
        rate = np.mean([d.purchased for d in dataset.draws])
        assert abs(rate - 0.5) < 0.02

    def test_empirical_rate_matches_sigmoid_per_bucket(self):
        a, b = 0.1, -2.0
        dataset = gen_synthetic(seed=9, n_consumers=25, n_items=10, n_categories=1, periods=40, response=[(a, b)])
        offers = np.array([d.offer_percent for d in dataset.draws])
        purchased = np.array([float(d.purchased) for d in dataset.draws])
        edges = np.linspace(0.0, 50.0, 11)
        for low, high in zip(edges[:-1], edges[1:]):
            mask = (offers >= low) & (offers < high)
            if mask.sum() < 200:
                continue
            expected = 1.0 / (1.0 + np.exp(-(a * offers[mask] + b)))
            assert abs(purchased[mask].mean() - expected.mean()) < 0.03

    def test_offer_20_with_a_point1_b_minus2_rate_half(self):
        # sigmoid(0.1 * 20 - 2) = 0.5 exactly
        dataset = gen_synthetic(seed=13, n_consumers=30, n_items=12, n_categories=1, periods=30, response=[(0.1, -2.0)])
        near = [d for d in dataset.draws if 18.0 <= d.offer_percent <= 22.0]
        assert len(near) > 500
        assert abs(np.mean([d.purchased for d in near]) - 0.5) < 0.05

    def test_ground_truth_recorded(self):
        dataset = gen_synthetic(seed=1, n_consumers=2, n_items=2, n_categories=2, periods=4, response=[(0.1, -2.0), (0.2, -3.0)])
        assert dataset.response == {"cat_00": (0.1, -2.0), "cat_01": (0.2, -3.0)}

    def test_counts_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_synthetic(seed=1, n_consumers=0, n_items=1, n_categories=1, periods=1, response=[(0.1, -2.0)])


class TestSeriesStore:
    def test_roundtrip(self, tmp_path):
        dataset = gen_synthetic(seed=3, n_consumers=3, n_items=4, n_categories=2, periods=6, response=[(0.1, -2.0), (0.05, -1.0)])
        window = (dataset.origin_date, dataset.origin_date + timedelta(days=PERIOD_DAYS * 6))
        series = build_series(dataset.records, window)
        path = tmp_path / "series.jsonl"
        write_series_store(series, path)
        restored = read_series_store(path)
        assert len(restored) == len(series)
        assert restored[0].key == series[0].key
        assert restored[0].labels == series[0].labels
        assert restored[0].offer_events == series[0].offer_events
        assert restored[0].attributes == series[0].attributes
