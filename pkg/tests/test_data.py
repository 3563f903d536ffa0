import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrovision.data import (
    StationSeries,
    chronological_split,
    fit_normalizer,
    impute_missing,
    load_series,
    make_windows,
    write_series,
    write_station_meta,
)
from hydrovision.errors import DataError, ImputationError


def _write(tmp_path, series_text, meta_text):
    s = tmp_path / "series.csv"
    m = tmp_path / "stations.csv"
    s.write_text(series_text)
    m.write_text(meta_text)
    return s, m


def _series(values, start=dt.date(2000, 1, 1), ids=None):
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[1]
    ts = tuple(start + dt.timedelta(days=k) for k in range(values.shape[0]))
    ids = ids or tuple(f"s{i}" for i in range(n))
    return StationSeries(ts, values, ids, np.zeros((n, 2)))


META2 = "station_id,x,y\na,0,0\nb,1,1\n"


def test_load_marks_single_blank_cell(tmp_path):
    s, m = _write(tmp_path, "date,a,b\n2000-01-01,1.0,2.0\n2000-01-02,,2.5\n2000-01-03,1.2,2.1\n", META2)
    series = load_series(s, m)
    assert series.values.shape == (3, 2)
    assert series.missing_mask.sum() == 1
    assert series.missing_mask[1, 0]


def test_load_follows_metadata_order(tmp_path):
    s, m = _write(tmp_path, "date,b,a\n2000-01-01,2.0,1.0\n", META2)
    series = load_series(s, m)
    assert series.station_ids == ("a", "b")
    np.testing.assert_array_equal(series.values, [[1.0, 2.0]])


def test_load_forty_years_row_count(tmp_path):
    start, end = dt.date(1981, 1, 1), dt.date(2020, 12, 31)
    days = []
    d = start
    while d <= end:
        days.append(d)
        d += dt.timedelta(days=1)
    expected = len(days)  # calendar enumeration
    assert expected == 14610
    rng = np.random.default_rng(0)
    ids = [f"st{i}" for i in range(6)]
    lines = ["date," + ",".join(ids)]
    for day in days:
        lines.append(day.isoformat() + "," + ",".join(f"{v:.3f}" for v in rng.uniform(1, 2, 6)))
    meta = "station_id,x,y\n" + "".join(f"{sid},{i},{i}\n" for i, sid in enumerate(ids))
    s, m = _write(tmp_path, "\n".join(lines) + "\n", meta)
    assert load_series(s, m).values.shape == (expected, 6)


def test_load_rejects_column_without_metadata(tmp_path):
    meta5 = "station_id,x,y\n" + "".join(f"s{i},0,0\n" for i in range(5))
    header = "date," + ",".join(f"s{i}" for i in range(6))
    s, m = _write(tmp_path, header + "\n2000-01-01," + ",".join("1" for _ in range(6)) + "\n", meta5)
    with pytest.raises(DataError, match="s5"):
        load_series(s, m)


def test_load_rejects_malformed_date(tmp_path):
    s, m = _write(tmp_path, "date,a,b\n2000-13-01,1,2\n", META2)
    with pytest.raises(DataError, match="row 2"):
        load_series(s, m)


def test_load_rejects_non_numeric(tmp_path):
    s, m = _write(tmp_path, "date,a,b\n2000-01-01,1,x\n", META2)
    with pytest.raises(DataError, match="row 2, column 'b'"):
        load_series(s, m)


def test_load_inserts_skipped_days_as_missing(tmp_path):
    s, m = _write(tmp_path, "date,a,b\n2000-01-01,1,2\n2000-01-03,1,2\n", META2)
    series = load_series(s, m)
    assert len(series) == 3
    assert series.missing_mask[1].all()


def test_write_then_load_roundtrip(tmp_path):
    series = _series(np.random.default_rng(1).uniform(0, 3, (10, 3)))
    mask = np.zeros((10, 3), bool)
    mask[4, 2] = True
    values = series.values.copy()
    values[4, 2] = np.nan
    series = StationSeries(series.timestamps, values, series.station_ids, np.arange(6).reshape(3, 2))
    write_series(series, tmp_path / "s.csv")
    write_station_meta(series, tmp_path / "m.csv")
    back = load_series(tmp_path / "s.csv", tmp_path / "m.csv")
    np.testing.assert_array_equal(back.missing_mask, mask)
    np.testing.assert_allclose(back.values[~mask], series.values[~mask], atol=1e-6)


class TestImpute:
    def _yearly(self):
        start = dt.date(1999, 5, 1)
        T = (dt.date(2001, 5, 1) - start).days + 1
        values = np.ones((T, 1))
        return start, values

    def test_equal_weight_average(self):
        start, values = self._yearly()
        idx = lambda d: (d - start).days
        values[idx(dt.date(1999, 5, 1)), 0] = 2.0
        values[idx(dt.date(2001, 5, 1)), 0] = 4.0
        values[idx(dt.date(2000, 5, 1)), 0] = np.nan
        out = impute_missing(_series(values, start))
        assert out.values[idx(dt.date(2000, 5, 1)), 0] == 3.0
        assert not out.missing_mask.any()

    def test_single_neighbour_fallback(self):
        start = dt.date(1981, 1, 1)
        T = (dt.date(1982, 5, 1) - start).days + 1
        values = np.ones((T, 1))
        values[(dt.date(1982, 5, 1) - start).days, 0] = 1.7
        values[(dt.date(1981, 5, 1) - start).days, 0] = np.nan
        out = impute_missing(_series(values, start))
        assert out.values[(dt.date(1981, 5, 1) - start).days, 0] == 1.7

    def test_no_missing_is_identity(self):
        series = _series(np.random.default_rng(0).normal(size=(30, 2)))
        out = impute_missing(series)
        assert out is series or np.array_equal(out.values, series.values)
        assert out.values.tobytes() == series.values.tobytes()

    def test_unfillable_cell_raises(self):
        values = np.ones((10, 2))
        values[3, 1] = np.nan
        with pytest.raises(ImputationError, match="s1"):
            impute_missing(_series(values))

    def test_leap_day_uses_feb_28(self):
        start = dt.date(1999, 2, 28)
        T = (dt.date(2001, 2, 28) - start).days + 1
        values = np.zeros((T, 1))
        values[0, 0] = 1.0                                    # 1999-02-28
        values[(dt.date(2001, 2, 28) - start).days, 0] = 5.0  # 2001-02-28
        leap = (dt.date(2000, 2, 29) - start).days
        values[leap, 0] = np.nan
        out = impute_missing(_series(values, start))
        assert out.values[leap, 0] == 3.0

    def test_custom_weights(self):
        start, values = self._yearly()
        idx = lambda d: (d - start).days
        values[idx(dt.date(1999, 5, 1)), 0] = 2.0
        values[idx(dt.date(2001, 5, 1)), 0] = 4.0
        values[idx(dt.date(2000, 5, 1)), 0] = np.nan
        out = impute_missing(_series(values, start), weights=(0.25, 0.75))
        assert out.values[idx(dt.date(2000, 5, 1)), 0] == pytest.approx(3.5)

    def test_observed_values_untouched(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(800, 3))
        mask = rng.random(values.shape) < 0.02
        mask[:366] = False  # guarantee a following-year neighbour exists
        mask[-366:] = False
        values[mask] = np.nan
        out = impute_missing(_series(values))
        np.testing.assert_array_equal(out.values[~mask], values[~mask])


class TestSplit:
    @pytest.mark.parametrize("T, lengths", [(100, (70, 10, 20)), (10, (7, 1, 2))])
    def test_lengths(self, T, lengths):
        parts = chronological_split(_series(np.arange(T * 2.0).reshape(T, 2)))
        assert tuple(len(p) for p in parts) == lengths

    def test_zero_fraction_rejected(self):
        with pytest.raises(DataError):
            chronological_split(_series(np.ones((10, 1))), (0.5, 0.5, 0.0))

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(DataError):
            chronological_split(_series(np.ones((10, 1))), (0.5, 0.2, 0.2))

    @settings(max_examples=50, deadline=None)
    @given(T=st.integers(10, 500))
    def test_segments_reassemble(self, T):
        series = _series(np.arange(T, dtype=float)[:, None])
        parts = chronological_split(series)
        joined = np.concatenate([p.values for p in parts])
        np.testing.assert_array_equal(joined, series.values)
        assert tuple(d for p in parts for d in p.timestamps) == series.timestamps


class TestNormalizer:
    def test_two_point(self):
        stats = fit_normalizer(np.array([[1.0], [3.0]]))
        assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
        assert stats.apply(np.array([[3.0]]))[0, 0] == 1.0

    def test_roundtrip(self):
        x = np.random.default_rng(0).normal(5, 2, (200, 4))
        stats = fit_normalizer(x)
        assert np.max(np.abs(stats.invert(stats.apply(x)) - x)) < 1e-12

    def test_constant_column_rejected(self):
        with pytest.raises(DataError):
            fit_normalizer(np.array([[1.0, 2.0], [1.0, 3.0]]))

    def test_normalized_training_moments(self):
        x = np.random.default_rng(1).normal(3, 0.4, (500, 6))
        z = fit_normalizer(x).apply(x)
        assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)


class TestWindows:
    def test_count_34(self):
        ds = make_windows(np.zeros((34, 2)), 12, 12)
        assert len(ds) == 34 - 24 + 1 == 11
        assert ds.inputs.shape == (11, 12, 2, 1)
        assert ds.targets.shape == (11, 12, 2)

    def test_exactly_one(self):
        assert len(make_windows(np.zeros((24, 1)))) == 1

    def test_too_short(self):
        with pytest.raises(DataError):
            make_windows(np.zeros((23, 1)))

    def test_values_preserved_and_contiguous(self):
        x = np.arange(40 * 3, dtype=float).reshape(40, 3)
        ds = make_windows(x, 5, 4)
        for s in range(len(ds)):
            np.testing.assert_array_equal(ds.inputs[s, :, :, 0], x[s:s + 5])
            np.testing.assert_array_equal(ds.targets[s], x[s + 5:s + 9])
